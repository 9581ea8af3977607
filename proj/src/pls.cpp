#include "mortgam/pls.hpp"

#include "mortgam/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace mortgam {

namespace {

Eigen::Index find_slot(const Eigen::SparseMatrix<double>& M, Eigen::Index row, Eigen::Index col) {
    const auto* inner = M.innerIndexPtr();
    const auto begin = inner + M.outerIndexPtr()[col];
    const auto end = inner + M.outerIndexPtr()[col + 1];
    const auto it = std::lower_bound(begin, end, static_cast<int>(row));
    if (it == end || *it != row) return -1;
    return it - inner;
}

} // namespace

PenalizedSystem::PenalizedSystem(const Design& design) : design_(&design) {
    const auto& X = design.X;
    const Eigen::Index p = X.cols();
    if (design.y.size() != X.rows()) throw Error(ErrorKind::Spec, "response length differs from design rows");
    const Eigen::SparseMatrix<double> Xt = X.transpose();
    xtx_ = Xt * X;
    xtx_.makeCompressed();
    xty_ = Xt * design.y;

    std::vector<Eigen::Triplet<double>> pattern;
    pattern.reserve(static_cast<std::size_t>(xtx_.nonZeros()));
    for (Eigen::Index j = 0; j < xtx_.outerSize(); ++j) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(xtx_, j); it; ++it) pattern.emplace_back(it.row(), j, 0.0);
    }
    for (const auto& pen : design.penalties) {
        const Eigen::Index b = pen.penalty.matrix.rows();
        for (Eigen::Index r = 0; r < pen.penalty.replicate; ++r) {
            const Eigen::Index base = pen.first_column + r * b;
            if (base + b > p) throw Error(ErrorKind::Spec, "penalty extends past the design columns");
            for (Eigen::Index c = 0; c < b; ++c) {
                for (Eigen::Index a = 0; a < b; ++a) pattern.emplace_back(base + a, base + c, 0.0);
            }
        }
    }
    A_.resize(p, p);
    A_.setFromTriplets(pattern.begin(), pattern.end());
    A_.makeCompressed();

    xtx_slot_.reserve(static_cast<std::size_t>(xtx_.nonZeros()));
    for (Eigen::Index j = 0; j < xtx_.outerSize(); ++j) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(xtx_, j); it; ++it) {
            xtx_slot_.push_back(find_slot(A_, it.row(), j));
        }
    }
    penalty_slots_.resize(design.penalties.size());
    for (std::size_t k = 0; k < design.penalties.size(); ++k) {
        const auto& pen = design.penalties[k];
        const Eigen::Index b = pen.penalty.matrix.rows();
        auto& slots = penalty_slots_[k];
        slots.reserve(static_cast<std::size_t>(b * b * pen.penalty.replicate));
        for (Eigen::Index r = 0; r < pen.penalty.replicate; ++r) {
            const Eigen::Index base = pen.first_column + r * b;
            for (Eigen::Index c = 0; c < b; ++c) {
                for (Eigen::Index a = 0; a < b; ++a) slots.push_back(find_slot(A_, base + a, base + c));
            }
        }
    }

    llt_.analyzePattern(A_);
    const auto& indices = llt_.permutationP().indices();
    perm_.assign(indices.data(), indices.data() + indices.size());
}

void PenalizedSystem::factorize(const Eigen::VectorXd& lambda) {
    const auto& pens = design_->penalties;
    if (lambda.size() != static_cast<Eigen::Index>(pens.size())) {
        throw Error(ErrorKind::Spec, fmt::format("expected {} smoothing parameters, got {}", pens.size(), lambda.size()));
    }
    lambda_ = lambda;
    double* values = A_.valuePtr();
    std::fill(values, values + A_.nonZeros(), 0.0);
    const double* xv = xtx_.valuePtr();
    for (std::size_t e = 0; e < xtx_slot_.size(); ++e) values[xtx_slot_[e]] += xv[e];
    for (std::size_t k = 0; k < pens.size(); ++k) {
        const auto& M = pens[k].penalty.matrix;
        const Eigen::Index b = M.rows();
        const double lam = lambda(static_cast<Eigen::Index>(k));
        const auto& slots = penalty_slots_[k];
        std::size_t s = 0;
        for (Eigen::Index r = 0; r < pens[k].penalty.replicate; ++r) {
            for (Eigen::Index c = 0; c < b; ++c) {
                for (Eigen::Index a = 0; a < b; ++a) values[slots[s++]] += lam * M(a, c);
            }
        }
    }

    factorized_ = false;
    inverse_.clear();
    llt_.factorize(A_);
    if (llt_.info() != Eigen::Success) report_singular();

    const auto& L = llt_.matrixL().nestedExpression();
    double ld = 0.0;
    for (Eigen::Index j = 0; j < L.outerSize(); ++j) ld += std::log(L.valuePtr()[L.outerIndexPtr()[j]]);
    log_det_ = 2.0 * ld;
    if (!std::isfinite(log_det_)) throw Error(ErrorKind::Conditioning, "log-determinant of the penalized system is not finite");

    beta_ = llt_.solve(xty_);
    if (!beta_.allFinite()) throw Error(ErrorKind::Conditioning, "non-finite coefficients");
    rss_ = (design_->y - design_->X * beta_).squaredNorm();
    factorized_ = true;
}

void PenalizedSystem::report_singular() const {
    for (const auto& t : design_->terms()) {
        if (t.width == 0) continue;
        Eigen::SparseMatrix<double> block = A_.block(t.first, t.first, t.width, t.width);
        Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> check(block);
        if (check.info() != Eigen::Success) {
            throw Error(ErrorKind::SingularFit,
                        fmt::format("penalized system is not positive definite within term '{}'", t.name));
        }
    }
    throw Error(ErrorKind::SingularFit, "penalized system is not positive definite: terms are jointly collinear");
}

Eigen::VectorXd PenalizedSystem::solve(const Eigen::VectorXd& rhs) const { return llt_.solve(rhs); }

Eigen::MatrixXd PenalizedSystem::solve(const Eigen::MatrixXd& rhs) const { return llt_.solve(rhs); }

double PenalizedSystem::penalty_quadratic(int j) const {
    const auto& pen = design_->penalties[static_cast<std::size_t>(j)];
    return pen.penalty.quadratic_form(beta_.segment(pen.first_column, pen.penalty.span()));
}

double PenalizedSystem::penalty_total() const {
    double total = 0.0;
    for (int j = 0; j < design_->lambda_count(); ++j) total += lambda_(j) * penalty_quadratic(j);
    return total;
}

Eigen::Index PenalizedSystem::locate(Eigen::Index row, Eigen::Index col) const {
    return find_slot(llt_.matrixL().nestedExpression(), row, col);
}

void PenalizedSystem::selected_inverse() const {
    // Takahashi recursion on the pattern of L: Z = (L L')^{-1} restricted to
    // that pattern, computed from the last column backwards.
    const auto& L = llt_.matrixL().nestedExpression();
    const Eigen::Index n = L.cols();
    const auto* Lp = L.outerIndexPtr();
    const auto* Li = L.innerIndexPtr();
    const double* Lx = L.valuePtr();
    std::vector<double> Z(static_cast<std::size_t>(L.nonZeros()), 0.0);
    std::vector<Eigen::Index> pos(static_cast<std::size_t>(n), -1);
    std::vector<double> acc;

    for (Eigen::Index j = n - 1; j >= 0; --j) {
        const Eigen::Index diag = Lp[j];
        const Eigen::Index below = Lp[j + 1] - diag - 1;
        acc.assign(static_cast<std::size_t>(below), 0.0);
        for (Eigen::Index t = 0; t < below; ++t) pos[Li[diag + 1 + t]] = t;

        for (Eigen::Index t = 0; t < below; ++t) {
            const Eigen::Index k = Li[diag + 1 + t];
            const double lkj = Lx[diag + 1 + t];
            acc[t] += Z[Lp[k]] * lkj;
            for (Eigen::Index q = Lp[k] + 1; q < Lp[k + 1]; ++q) {
                const Eigen::Index i = Li[q];
                const Eigen::Index pi = pos[i];
                if (pi < 0) continue;
                acc[pi] += Z[q] * lkj;
                acc[t] += Z[q] * Lx[diag + 1 + pi];
            }
        }
        const double ljj = Lx[diag];
        double dsum = 0.0;
        for (Eigen::Index t = 0; t < below; ++t) {
            Z[diag + 1 + t] = -acc[t] / ljj;
            dsum += Z[diag + 1 + t] * Lx[diag + 1 + t];
            pos[Li[diag + 1 + t]] = -1;
        }
        Z[diag] = 1.0 / (ljj * ljj) - dsum / ljj;
    }
    inverse_ = std::move(Z);
}

double PenalizedSystem::inverse_entry(Eigen::Index a, Eigen::Index b) const {
    if (!factorized_) throw Error(ErrorKind::Spec, "system has not been factorized");
    if (inverse_.empty()) selected_inverse();
    Eigen::Index pa = perm_[a];
    Eigen::Index pb = perm_[b];
    if (pa < pb) std::swap(pa, pb);
    const Eigen::Index slot = locate(pa, pb);
    if (slot < 0) throw Error(ErrorKind::Spec, fmt::format("inverse entry ({}, {}) is outside the factor pattern", a, b));
    return inverse_[static_cast<std::size_t>(slot)];
}

double PenalizedSystem::trace_inverse_penalty(int j) const {
    const auto& pen = design_->penalties[static_cast<std::size_t>(j)];
    const auto& M = pen.penalty.matrix;
    const Eigen::Index b = M.rows();
    double tr = 0.0;
    for (Eigen::Index r = 0; r < pen.penalty.replicate; ++r) {
        const Eigen::Index base = pen.first_column + r * b;
        for (Eigen::Index c = 0; c < b; ++c) {
            for (Eigen::Index a = 0; a < b; ++a) {
                if (M(a, c) != 0.0) tr += inverse_entry(base + c, base + a) * M(a, c);
            }
        }
    }
    return tr;
}

std::vector<double> PenalizedSystem::term_edf() const {
    const auto& terms = design_->terms();
    std::vector<double> edf(terms.size());
    for (std::size_t t = 0; t < terms.size(); ++t) edf[t] = static_cast<double>(terms[t].width);
    for (int j = 0; j < design_->lambda_count(); ++j) {
        const auto& pen = design_->penalties[static_cast<std::size_t>(j)];
        edf[static_cast<std::size_t>(pen.term)] -= lambda_(j) * trace_inverse_penalty(j);
    }
    return edf;
}

Eigen::VectorXd PenalizedSystem::hat_diagonal() const {
    const Eigen::SparseMatrix<double, Eigen::RowMajor> Xr = design_->X;
    Eigen::VectorXd h(Xr.rows());
    std::vector<std::pair<Eigen::Index, double>> row;
    for (Eigen::Index i = 0; i < Xr.rows(); ++i) {
        row.clear();
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Xr, i); it; ++it) {
            row.emplace_back(it.col(), it.value());
        }
        double s = 0.0;
        for (std::size_t a = 0; a < row.size(); ++a) {
            s += row[a].second * row[a].second * inverse_entry(row[a].first, row[a].first);
            for (std::size_t b = a + 1; b < row.size(); ++b) {
                s += 2.0 * row[a].second * row[b].second * inverse_entry(row[a].first, row[b].first);
            }
        }
        h(i) = s;
    }
    return h;
}

PlsResult pls_solve(const Design& design, const Eigen::VectorXd& lambda) {
    PenalizedSystem system(design);
    system.factorize(lambda);
    return {system.beta(), system.hat_diagonal(), system.rss()};
}

} // namespace mortgam
