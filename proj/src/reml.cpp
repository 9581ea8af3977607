#include "mortgam/reml.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mortgam {

namespace {

struct Spectrum {
    Eigen::Index rank = 0;
    double log_det = 0.0;
};

Spectrum positive_spectrum(const Eigen::MatrixXd& M) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M, Eigen::EigenvaluesOnly);
    const auto& e = eig.eigenvalues();
    const double tol = 1e-10 * std::max(e.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    Spectrum s;
    for (Eigen::Index i = 0; i < e.size(); ++i) {
        if (e(i) > tol) {
            ++s.rank;
            s.log_det += std::log(e(i));
        }
    }
    return s;
}

} // namespace

RemlObjective::RemlObjective(const Design& design) : system_(design) {
    const auto& pens = design.penalties;
    std::vector<int> order(pens.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return pens[a].first_column < pens[b].first_column; });

    // Penalties with overlapping column spans form one group.
    std::vector<std::vector<int>> clusters;
    Eigen::Index reach = -1;
    for (int j : order) {
        const auto& pen = pens[static_cast<std::size_t>(j)];
        if (clusters.empty() || pen.first_column >= reach) clusters.emplace_back();
        clusters.back().push_back(j);
        reach = std::max(reach, pen.first_column + pen.penalty.span());
    }

    Eigen::Index total_rank = 0;
    for (auto& members : clusters) {
        Group g;
        g.members = members;
        const auto& lead = pens[static_cast<std::size_t>(members.front())].penalty;
        bool aligned = true;
        for (int j : members) {
            const auto& pen = pens[static_cast<std::size_t>(j)];
            aligned = aligned && pen.first_column == pens[static_cast<std::size_t>(members.front())].first_column &&
                      pen.penalty.replicate == lead.replicate && pen.penalty.matrix.rows() == lead.matrix.rows();
        }
        if (aligned) {
            g.replicate = lead.replicate;
            for (int j : members) g.dense.push_back(pens[static_cast<std::size_t>(j)].penalty.matrix);
        } else {
            Eigen::Index lo = std::numeric_limits<Eigen::Index>::max();
            Eigen::Index hi = 0;
            for (int j : members) {
                const auto& pen = pens[static_cast<std::size_t>(j)];
                lo = std::min(lo, pen.first_column);
                hi = std::max(hi, pen.first_column + pen.penalty.span());
            }
            for (int j : members) {
                const auto& pen = pens[static_cast<std::size_t>(j)];
                Eigen::MatrixXd D = Eigen::MatrixXd::Zero(hi - lo, hi - lo);
                const Eigen::Index off = pen.first_column - lo;
                D.block(off, off, pen.penalty.span(), pen.penalty.span()) = pen.penalty.dense(pen.penalty.span());
                g.dense.push_back(std::move(D));
            }
        }

        for (std::size_t a = 0; a < g.dense.size() && g.separable; ++a) {
            for (std::size_t b = a + 1; b < g.dense.size(); ++b) {
                const double cross = (g.dense[a] * g.dense[b]).norm();
                if (cross > 1e-10 * g.dense[a].norm() * g.dense[b].norm()) {
                    g.separable = false;
                    break;
                }
            }
        }
        const auto rep = static_cast<double>(g.replicate);
        if (g.separable) {
            for (const auto& M : g.dense) {
                const auto s = positive_spectrum(M);
                g.ranks.push_back(rep * static_cast<double>(s.rank));
                g.consts.push_back(rep * s.log_det);
                g.rank += s.rank;
            }
        } else {
            Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(g.dense.front().rows(), g.dense.front().cols());
            for (const auto& M : g.dense) sum += M / M.norm();
            g.rank = positive_spectrum(sum).rank;
        }
        total_rank += g.rank * g.replicate;
        groups_.push_back(std::move(g));
    }
    null_dim_ = design.cols() - total_rank;
}

double RemlObjective::log_det_penalty(const Eigen::VectorXd& rho, Eigen::VectorXd* gradient) const {
    double total = 0.0;
    for (const auto& g : groups_) {
        if (g.separable) {
            for (std::size_t m = 0; m < g.members.size(); ++m) {
                const int j = g.members[m];
                total += g.ranks[m] * rho(j) + g.consts[m];
                if (gradient) (*gradient)(j) = g.ranks[m];
            }
            continue;
        }
        Eigen::MatrixXd S = Eigen::MatrixXd::Zero(g.dense.front().rows(), g.dense.front().cols());
        for (std::size_t m = 0; m < g.members.size(); ++m) S += std::exp(rho(g.members[m])) * g.dense[m];
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
        const auto values = eig.eigenvalues().tail(g.rank);
        const Eigen::MatrixXd U = eig.eigenvectors().rightCols(g.rank);
        if (values.minCoeff() <= 0.0) throw Error(ErrorKind::Conditioning, "penalty determinant underflows");
        total += static_cast<double>(g.replicate) * values.array().log().sum();
        if (gradient) {
            const Eigen::MatrixXd Sinv = U * values.cwiseInverse().asDiagonal() * U.transpose();
            for (std::size_t m = 0; m < g.members.size(); ++m) {
                const int j = g.members[m];
                (*gradient)(j) = static_cast<double>(g.replicate) * std::exp(rho(j)) *
                                 (Sinv.cwiseProduct(g.dense[m])).sum();
            }
        }
    }
    return total;
}

RemlObjective::Evaluation RemlObjective::evaluate(const Eigen::VectorXd& rho, bool with_gradient) {
    if (rho.size() != size()) throw Error(ErrorKind::Spec, "rho has the wrong length");
    const Eigen::VectorXd lambda = rho.array().exp().matrix();
    system_.factorize(lambda);
    const auto n = static_cast<double>(system_.design().rows());
    const double dof = n - static_cast<double>(null_dim_);
    if (dof <= 0.0) throw Error(ErrorKind::Spec, "fewer observations than unpenalized dimensions");
    const double D = system_.rss() + system_.penalty_total();
    if (!(D > 0.0) || !std::isfinite(D)) throw Error(ErrorKind::Conditioning, "penalized residual sum is not positive");

    rho_ = rho;
    D_ = D;
    dof_ = dof;
    Evaluation out;
    Eigen::VectorXd det_grad;
    if (with_gradient) det_grad = Eigen::VectorXd::Zero(size());
    const double log_det_s = log_det_penalty(rho, with_gradient ? &det_grad : nullptr);
    out.score = 0.5 * dof * std::log(D) + 0.5 * system_.log_det() - 0.5 * log_det_s;
    if (!std::isfinite(out.score)) throw Error(ErrorKind::Conditioning, "restricted likelihood is not finite");
    if (with_gradient) {
        out.gradient.resize(size());
        for (int j = 0; j < size(); ++j) {
            const double lam = lambda(j);
            out.gradient(j) = 0.5 * dof * lam * system_.penalty_quadratic(j) / D +
                              0.5 * lam * system_.trace_inverse_penalty(j) - 0.5 * det_grad(j);
        }
    }
    return out;
}

Eigen::MatrixXd RemlObjective::log_det_penalty_hessian(const Eigen::VectorXd& rho) const {
    const int m = size();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, m);
    for (const auto& g : groups_) {
        if (g.separable) continue;
        Eigen::MatrixXd S = Eigen::MatrixXd::Zero(g.dense.front().rows(), g.dense.front().cols());
        for (std::size_t k = 0; k < g.members.size(); ++k) S += std::exp(rho(g.members[k])) * g.dense[k];
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
        const auto values = eig.eigenvalues().tail(g.rank);
        const Eigen::MatrixXd U = eig.eigenvectors().rightCols(g.rank);
        const Eigen::MatrixXd Sinv = U * values.cwiseInverse().asDiagonal() * U.transpose();
        std::vector<Eigen::MatrixXd> P;
        for (const auto& M : g.dense) P.push_back(Sinv * M);
        const auto rep = static_cast<double>(g.replicate);
        for (std::size_t a = 0; a < g.members.size(); ++a) {
            const int i = g.members[a];
            const double li = std::exp(rho(i));
            H(i, i) += rep * li * P[a].trace();
            for (std::size_t b = 0; b < g.members.size(); ++b) {
                const int j = g.members[b];
                H(i, j) -= rep * li * std::exp(rho(j)) * (P[a].cwiseProduct(P[b].transpose())).sum();
            }
        }
    }
    return H;
}

double RemlObjective::local_trace_product(int i, int j) const {
    const auto& pi = system_.design().penalties[static_cast<std::size_t>(i)];
    const auto& pj = system_.design().penalties[static_cast<std::size_t>(j)];
    const Eigen::Index b = pi.penalty.matrix.rows();
    if (pi.first_column != pj.first_column || pi.penalty.replicate != pj.penalty.replicate ||
        pj.penalty.matrix.rows() != b) {
        return 0.0;
    }
    double total = 0.0;
    Eigen::MatrixXd Z(b, b);
    for (Eigen::Index r = 0; r < pi.penalty.replicate; ++r) {
        const Eigen::Index base = pi.first_column + r * b;
        for (Eigen::Index c = 0; c < b; ++c) {
            for (Eigen::Index a = c; a < b; ++a) Z(a, c) = Z(c, a) = system_.inverse_entry(base + a, base + c);
        }
        const Eigen::MatrixXd Pi = Z * pi.penalty.matrix;
        const Eigen::MatrixXd Pj = i == j ? Pi : Eigen::MatrixXd(Z * pj.penalty.matrix);
        total += Pi.cwiseProduct(Pj.transpose()).sum();
    }
    return total;
}

Eigen::MatrixXd RemlObjective::approximate_hessian() const {
    const int m = size();
    const auto& design = system_.design();
    const Eigen::Index p = design.cols();
    const Eigen::VectorXd& beta = system_.beta();
    const Eigen::VectorXd lambda = rho_.array().exp().matrix();

    // u_j = lambda_j S_j beta; d beta / d rho_j = -A^-1 u_j.
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(p, m);
    for (int j = 0; j < m; ++j) {
        const auto& pen = design.penalties[static_cast<std::size_t>(j)];
        const Eigen::Index b = pen.penalty.matrix.rows();
        for (Eigen::Index r = 0; r < pen.penalty.replicate; ++r) {
            const Eigen::Index base = pen.first_column + r * b;
            U.col(j).segment(base, b) = lambda(j) * (pen.penalty.matrix * beta.segment(base, b));
        }
    }
    const Eigen::MatrixXd G = system_.solve(U);
    const Eigen::VectorXd Dj = U.transpose() * beta;
    const Eigen::MatrixXd cross = U.transpose() * G;

    Eigen::MatrixXd H = 0.5 * dof_ * (-2.0 * cross / D_ - Dj * Dj.transpose() / (D_ * D_));
    H.diagonal() += 0.5 * dof_ * Dj / D_;
    for (const auto& g : groups_) {
        for (int i : g.members) {
            H(i, i) += 0.5 * lambda(i) * system_.trace_inverse_penalty(i);
            for (int j : g.members) H(i, j) -= 0.5 * lambda(i) * lambda(j) * local_trace_product(i, j);
        }
    }
    H -= 0.5 * log_det_penalty_hessian(rho_);
    return 0.5 * (H + H.transpose());
}

Eigen::VectorXd RemlObjective::finite_difference_gradient(const Eigen::VectorXd& rho, double h) {
    Eigen::VectorXd g(size());
    Eigen::VectorXd r = rho;
    for (int j = 0; j < size(); ++j) {
        r(j) = rho(j) + h;
        const double up = score(r);
        r(j) = rho(j) - h;
        const double down = score(r);
        r(j) = rho(j);
        g(j) = (up - down) / (2.0 * h);
    }
    return g;
}

namespace {

class Counter {
public:
    Counter(RemlObjective& objective, const RemlOptions& options) : objective_(objective), options_(options) {}

    RemlObjective::Evaluation operator()(const Eigen::VectorXd& rho) {
        ++evaluations;
        if (options_.gradient == GradientMethod::Analytic) return objective_.evaluate(rho, true);
        RemlObjective::Evaluation e;
        e.gradient = objective_.finite_difference_gradient(rho);
        evaluations += 2 * objective_.size();
        e.score = objective_.score(rho);
        return e;
    }
    double score(const Eigen::VectorXd& rho) {
        ++evaluations;
        return objective_.score(rho);
    }

    int evaluations = 0;

private:
    RemlObjective& objective_;
    const RemlOptions& options_;
};

Eigen::VectorXd clamp(Eigen::VectorXd x, const RemlOptions& o) { return x.cwiseMax(o.rho_min).cwiseMin(o.rho_max); }

Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const RemlOptions& o) {
    Eigen::VectorXd pg = g;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        if ((x(j) <= o.rho_min && g(j) > 0.0) || (x(j) >= o.rho_max && g(j) < 0.0)) pg(j) = 0.0;
    }
    return pg;
}

/// One sweep of golden-section searches over the coordinates in `coords`.
double golden_sweep(Counter& eval, Eigen::VectorXd& x, double fx, const std::vector<Eigen::Index>& coords,
                    const RemlOptions& o) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    for (Eigen::Index j : coords) {
        double a = std::max(o.rho_min, x(j) - 4.0);
        double b = std::min(o.rho_max, x(j) + 4.0);
        Eigen::VectorXd t = x;
        auto f = [&](double v) {
            t(j) = v;
            return eval.score(t);
        };
        double c = b - inv_phi * (b - a);
        double d = a + inv_phi * (b - a);
        double fc = f(c);
        double fd = f(d);
        for (int it = 0; it < 24 && b - a > 1e-4; ++it) {
            if (fc < fd) {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = f(d);
            }
        }
        const double best = fc < fd ? c : d;
        const double fbest = std::min(fc, fd);
        if (fbest < fx) {
            x(j) = best;
            fx = fbest;
        }
    }
    return fx;
}

} // namespace

RemlResult optimize_reml(RemlObjective& objective, const Eigen::VectorXd& rho0, const RemlOptions& options) {
    const int m = objective.size();
    if (rho0.size() != m) throw Error(ErrorKind::Spec, fmt::format("rho0 must have {} entries", m));
    Counter eval(objective, options);
    RemlResult result;
    Eigen::VectorXd x = clamp(rho0, options);

    if (m == 0) {
        result.rho = x;
        result.score = objective.score(x);
        result.gradient = Eigen::VectorXd(0);
        return result;
    }

    auto current = eval(x);
    double f = current.score;
    Eigen::VectorXd g = current.gradient;
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(m, m);
    bool scaled = false;
    double previous = std::numeric_limits<double>::infinity();

    for (int iter = 0;; ++iter) {
        const Eigen::VectorXd pg = projected_gradient(x, g, options);
        const double gtol = options.gradient_tolerance + options.relative_tolerance * std::abs(f);
        const double ftol = options.score_tolerance + options.relative_tolerance * std::abs(f);
        const bool small_gradient = pg.cwiseAbs().maxCoeff() < gtol;
        const bool small_change = std::abs(previous - f) < ftol;
        if (small_gradient && (iter == 0 || small_change)) break;
        if (iter >= options.max_iterations) {
            throw ConvergenceError(fmt::format("REML optimizer did not converge in {} iterations (score {:.10g}, "
                                               "projected gradient {:.3g})",
                                               options.max_iterations, f, pg.cwiseAbs().maxCoeff()),
                                   result.trace);
        }

        // Quasi-Newton direction on the free coordinates.
        std::vector<Eigen::Index> free;
        for (Eigen::Index j = 0; j < m; ++j) {
            if (pg(j) != 0.0 || (x(j) > options.rho_min && x(j) < options.rho_max)) free.push_back(j);
        }
        Eigen::VectorXd d = Eigen::VectorXd::Zero(m);
        if (options.search == SearchMethod::Newton) {
            const Eigen::MatrixXd full = objective.approximate_hessian();
            const auto nf = static_cast<Eigen::Index>(free.size());
            Eigen::MatrixXd Hf(nf, nf);
            Eigen::VectorXd gf(nf);
            for (Eigen::Index a = 0; a < nf; ++a) {
                gf(a) = g(free[a]);
                for (Eigen::Index b = 0; b < nf; ++b) Hf(a, b) = full(free[a], free[b]);
            }
            d.setZero();
            if (nf > 0) {
                // Eigenvalues are floored at a fraction of the largest so the step is a descent direction.
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Hf);
                const double top = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1e-12);
                const Eigen::VectorXd floored = eig.eigenvalues().cwiseAbs().cwiseMax(1e-7 * top);
                const Eigen::VectorXd df =
                    -eig.eigenvectors() * (eig.eigenvectors().transpose() * gf).cwiseQuotient(floored);
                for (Eigen::Index a = 0; a < nf; ++a) d(free[a]) = df(a);
            }
        } else {
            for (Eigen::Index a : free) {
                double s = 0.0;
                for (Eigen::Index b : free) s += H(a, b) * g(b);
                d(a) = -s;
            }
        }
        if (g.dot(d) >= 0.0) {
            H.setIdentity();
            d = -pg;
        }
        const double longest = d.cwiseAbs().maxCoeff();
        if (longest > options.max_step) d *= options.max_step / longest;

        double t = 1.0;
        bool accepted = false;
        Eigen::VectorXd x_new;
        RemlObjective::Evaluation next;
        for (int ls = 0; ls < 30; ++ls) {
            x_new = clamp(x + t * d, options);
            const double predicted = g.dot(x_new - x);
            if (predicted < 0.0 || ls == 0) {
                try {
                    next = eval(x_new);
                    if (next.score <= f + 1e-4 * std::min(predicted, 0.0) && next.score <= f) {
                        accepted = true;
                        break;
                    }
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::SingularFit && e.kind() != ErrorKind::Conditioning) throw;
                }
            }
            t *= 0.5;
        }

        previous = f;
        if (!accepted) {
            result.used_fallback = true;
            Eigen::VectorXd y = x;
            std::vector<Eigen::Index> coords;
            for (Eigen::Index j = 0; j < m; ++j) {
                if (std::abs(pg(j)) >= gtol) coords.push_back(j);
            }
            if (coords.empty()) coords = free;
            const double fy = golden_sweep(eval, y, f, coords, options);
            if (fy < f) {
                x = y;
                current = eval(x);
                f = current.score;
                g = current.gradient;
            }
            H.setIdentity();
            scaled = false;
            result.trace.push_back(f);
            ++result.iterations;
            if (!(fy < previous - ftol)) {
                // Neither search improves the score: stationary up to rounding.
                if (projected_gradient(x, g, options).cwiseAbs().maxCoeff() < 10.0 * gtol) break;
            }
            continue;
        }

        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd yv = next.gradient - g;
        const double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            if (!scaled) {
                H = Eigen::MatrixXd::Identity(m, m) * (sy / yv.squaredNorm());
                scaled = true;
            }
            const Eigen::VectorXd Hy = H * yv;
            const double rho_bfgs = 1.0 / sy;
            H += (rho_bfgs * rho_bfgs * yv.dot(Hy) + rho_bfgs) * (s * s.transpose()) -
                 rho_bfgs * (Hy * s.transpose() + s * Hy.transpose());
        }
        x = x_new;
        f = next.score;
        g = next.gradient;
        result.trace.push_back(f);
        ++result.iterations;
    }

    // Leave the system factorized at the optimum.
    const auto final_eval = objective.evaluate(x, true);
    result.rho = x;
    result.score = final_eval.score;
    result.gradient = options.gradient == GradientMethod::Analytic ? final_eval.gradient : g;
    result.evaluations = eval.evaluations + 1;
    return result;
}

} // namespace mortgam
