#include "mortgam/spline_basis.hpp"

#include "mortgam/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace mortgam {

// ---------------------------------------------------------------------------
// Cubic regression spline

CubicRegressionSpline::CubicRegressionSpline(std::vector<double> knots) : knots_(std::move(knots)) {
    const int k = size();
    if (k < 3) throw Error(ErrorKind::Spec, fmt::format("cubic regression spline needs k >= 3, got {}", k));
    for (int i = 1; i < k; ++i) {
        if (!(knots_[i] > knots_[i - 1])) throw Error(ErrorKind::Spec, "knots must be strictly increasing");
    }

    // Natural spline relation B * delta_inner = D * beta (second derivatives
    // vanish at both ends).
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(k - 2, k);
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(k - 2, k - 2);
    for (int i = 0; i < k - 2; ++i) {
        const double h0 = knots_[i + 1] - knots_[i];
        const double h1 = knots_[i + 2] - knots_[i + 1];
        D(i, i) = 1.0 / h0;
        D(i, i + 1) = -1.0 / h0 - 1.0 / h1;
        D(i, i + 2) = 1.0 / h1;
        B(i, i) = (h0 + h1) / 3.0;
        if (i + 1 < k - 2) {
            B(i, i + 1) = h1 / 6.0;
            B(i + 1, i) = h1 / 6.0;
        }
    }
    second_derivs_ = Eigen::MatrixXd::Zero(k, k);
    second_derivs_.middleRows(1, k - 2) = B.llt().solve(D);
}

std::vector<double> place_knots(std::span<const double> x, int k) {
    std::vector<double> u(x.begin(), x.end());
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    const int nu = static_cast<int>(u.size());
    if (nu < k) {
        throw Error(ErrorKind::Rank, fmt::format("{} distinct covariate values cannot support {} knots", nu, k));
    }
    std::vector<double> knots(k);
    for (int i = 0; i < k; ++i) {
        const double pos = static_cast<double>(i) * (nu - 1) / (k - 1);
        const int lo = std::min(static_cast<int>(std::floor(pos)), nu - 1);
        const double frac = pos - lo;
        knots[i] = lo + 1 < nu ? u[lo] + frac * (u[lo + 1] - u[lo]) : u[lo];
    }
    knots.front() = u.front();
    knots.back() = u.back();
    return knots;
}

CubicRegressionSpline CubicRegressionSpline::from_data(std::span<const double> x, int k) {
    return CubicRegressionSpline(place_knots(x, k));
}

int CubicRegressionSpline::interval(double x) const {
    auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
    int j = static_cast<int>(it - knots_.begin()) - 1;
    return std::clamp(j, 0, size() - 2);
}

Eigen::RowVectorXd CubicRegressionSpline::basis(double x) const {
    const int k = size();
    if (x < knots_.front()) {
        Eigen::RowVectorXd row = (x - knots_.front()) * derivative(knots_.front(), 1);
        row(0) += 1.0;
        return row;
    }
    if (x > knots_.back()) {
        Eigen::RowVectorXd row = (x - knots_.back()) * derivative(knots_.back(), 1);
        row(k - 1) += 1.0;
        return row;
    }
    const int j = interval(x);
    const double h = knots_[j + 1] - knots_[j];
    const double right = knots_[j + 1] - x;
    const double left = x - knots_[j];
    const double cm = (right * right * right / h - h * right) / 6.0;
    const double cp = (left * left * left / h - h * left) / 6.0;
    Eigen::RowVectorXd row = cm * second_derivs_.row(j) + cp * second_derivs_.row(j + 1);
    row(j) += right / h;
    row(j + 1) += left / h;
    return row;
}

Eigen::RowVectorXd CubicRegressionSpline::derivative(double x, int order) const {
    if (order != 1 && order != 2) throw Error(ErrorKind::Spec, "derivative order must be 1 or 2");
    const int k = size();
    if (order == 2 && (x < knots_.front() || x > knots_.back())) return Eigen::RowVectorXd::Zero(k);
    const double xc = std::clamp(x, knots_.front(), knots_.back());
    const int j = interval(xc);
    const double h = knots_[j + 1] - knots_[j];
    const double right = knots_[j + 1] - xc;
    const double left = xc - knots_[j];
    if (order == 2) return (right / h) * second_derivs_.row(j) + (left / h) * second_derivs_.row(j + 1);
    const double dcm = (-3.0 * right * right / h + h) / 6.0;
    const double dcp = (3.0 * left * left / h - h) / 6.0;
    Eigen::RowVectorXd row = dcm * second_derivs_.row(j) + dcp * second_derivs_.row(j + 1);
    row(j) -= 1.0 / h;
    row(j + 1) += 1.0 / h;
    return row;
}

Eigen::MatrixXd CubicRegressionSpline::penalty(int order) const {
    const int k = size();
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(k, k);
    if (order == 2) {
        // f'' is linear on each interval with end values d_j, d_{j+1}:
        // integral = h/3 (d_j^2 + d_j d_{j+1} + d_{j+1}^2). Equals D' B^{-1} D.
        for (int j = 0; j + 1 < k; ++j) {
            const double h = knots_[j + 1] - knots_[j];
            const Eigen::RowVectorXd a = second_derivs_.row(j);
            const Eigen::RowVectorXd b = second_derivs_.row(j + 1);
            S.noalias() += (h / 3.0) * (a.transpose() * a + b.transpose() * b);
            S.noalias() += (h / 6.0) * (a.transpose() * b + b.transpose() * a);
        }
    } else if (order == 1) {
        // f' is quadratic on each interval: 3-point Gauss-Legendre is exact for f'^2.
        static const double nodes[3] = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
        static const double weights[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
        for (int j = 0; j + 1 < k; ++j) {
            const double mid = 0.5 * (knots_[j] + knots_[j + 1]);
            const double half = 0.5 * (knots_[j + 1] - knots_[j]);
            for (int q = 0; q < 3; ++q) {
                const Eigen::RowVectorXd d = derivative(mid + half * nodes[q], 1);
                S.noalias() += (weights[q] * half) * (d.transpose() * d);
            }
        }
    } else {
        throw Error(ErrorKind::Spec, fmt::format("penalty order {} not supported", order));
    }
    return 0.5 * (S + S.transpose());
}

// ---------------------------------------------------------------------------
// Penalty and factor helpers

Eigen::MatrixXd Penalty::dense(Eigen::Index width) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(width, width);
    const Eigen::Index b = matrix.rows();
    for (Eigen::Index r = 0; r < replicate; ++r) out.block(offset + r * b, offset + r * b, b, b) = matrix;
    return out;
}

double Penalty::quadratic_form(const Eigen::Ref<const Eigen::VectorXd>& coef) const {
    const Eigen::Index b = matrix.rows();
    double total = 0.0;
    for (Eigen::Index r = 0; r < replicate; ++r) {
        const auto seg = coef.segment(offset + r * b, b);
        total += seg.dot(matrix * seg);
    }
    return total;
}

Factor Factor::from_labels(std::span<const std::string> labels) {
    Factor f;
    std::unordered_map<std::string, int> index;
    f.codes.reserve(labels.size());
    for (const auto& label : labels) {
        auto [it, inserted] = index.try_emplace(label, static_cast<int>(f.levels.size()));
        if (inserted) f.levels.push_back(label);
        f.codes.push_back(it->second);
    }
    return f;
}

int Factor::code_of(const std::string& label) const {
    auto it = std::find(levels.begin(), levels.end(), label);
    return it == levels.end() ? -1 : static_cast<int>(it - levels.begin());
}

// ---------------------------------------------------------------------------
// Smooth blocks

namespace {

Eigen::RowVectorXd plain_row(const SmoothBlock& block, double x) {
    Eigen::RowVectorXd row = block.spline->basis(x);
    if (block.constraint) return row * (*block.constraint);
    return row;
}

void push_row(const Eigen::RowVectorXd& row, Eigen::Index shift, std::vector<SparseEntry>& out) {
    for (Eigen::Index j = 0; j < row.size(); ++j) {
        if (row(j) != 0.0) out.push_back({shift + j, row(j)});
    }
}

struct BlockInputs {
    std::vector<double> x;
    std::vector<int> level;
};

void rebuild_columns(SmoothBlock& block, Eigen::Index width, const BlockInputs& in) {
    std::vector<Eigen::Triplet<double>> triplets;
    std::vector<SparseEntry> entries;
    const auto n = static_cast<Eigen::Index>(std::max(in.x.size(), in.level.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
        entries.clear();
        const double x = in.x.empty() ? 0.0 : in.x[i];
        const int level = in.level.empty() ? 0 : in.level[i];
        block.evaluate(x, level, entries);
        for (const auto& e : entries) triplets.emplace_back(i, e.col, e.value);
    }
    block.columns.resize(n, width);
    block.columns.setFromTriplets(triplets.begin(), triplets.end());
}

} // namespace

void SmoothBlock::evaluate(double x, int level, std::vector<SparseEntry>& out) const {
    switch (layout) {
    case BlockLayout::Plain:
        push_row(plain_row(*this, x), 0, out);
        return;
    case BlockLayout::ByLevel:
        push_row(plain_row(*this, x), static_cast<Eigen::Index>(level) * level_width, out);
        return;
    case BlockLayout::PerLevel:
        push_row(spline->basis(x), static_cast<Eigen::Index>(level) * spline->size(), out);
        return;
    case BlockLayout::Indicator:
        out.push_back({level, 1.0});
        return;
    }
}

Eigen::SparseMatrix<double, Eigen::RowMajor> SmoothBlock::evaluate(std::span<const double> x,
                                                                  std::span<const int> level) const {
    BlockInputs in{{x.begin(), x.end()}, {level.begin(), level.end()}};
    SmoothBlock copy = *this;
    rebuild_columns(copy, width(), in);
    return std::move(copy.columns);
}

SmoothBlock crs_basis(std::span<const double> x, int k, std::optional<std::vector<double>> knots) {
    if (x.empty()) throw Error(ErrorKind::Spec, "cannot build a basis on zero rows");
    SmoothBlock block;
    block.layout = BlockLayout::Plain;
    if (knots) {
        if (static_cast<int>(knots->size()) != k) {
            throw Error(ErrorKind::Spec, fmt::format("expected {} knots, got {}", k, knots->size()));
        }
        block.spline = CubicRegressionSpline(std::move(*knots));
    } else {
        block.spline = CubicRegressionSpline::from_data(x, k);
    }
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    block.boundary_low = *lo;
    block.boundary_high = *hi;
    block.penalties.push_back({block.spline->penalty(2), 0, 1});
    rebuild_columns(block, k, {{x.begin(), x.end()}, {}});
    return block;
}

SmoothBlock shrinkage_modify(SmoothBlock block, double epsilon) {
    if (block.penalties.size() != 1) throw Error(ErrorKind::Spec, "shrinkage needs a block with exactly one penalty");
    if (epsilon == 0.0) return block;
    auto& pen = block.penalties.front();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(pen.matrix);
    Eigen::VectorXd values = eig.eigenvalues();
    const double top = values.cwiseAbs().maxCoeff();
    const double tol = 1e-10 * std::max(top, 1e-300);
    double smallest_positive = top;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        if (values(i) > tol) smallest_positive = std::min(smallest_positive, values(i));
    }
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        if (values(i) <= tol) values(i) = epsilon * smallest_positive;
    }
    Eigen::MatrixXd S = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
    pen.matrix = 0.5 * (S + S.transpose());
    return block;
}

SmoothBlock center_constraint(SmoothBlock block) {
    if (block.layout != BlockLayout::Plain || block.constraint) {
        throw Error(ErrorKind::Spec, "centering applies once, to a plain 1-D block");
    }
    const Eigen::Index p = block.width();
    Eigen::VectorXd sums = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < block.columns.outerSize(); ++i) {
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(block.columns, i); it; ++it) {
            sums(it.col()) += it.value();
        }
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(sums);
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(p, p);
    Eigen::MatrixXd Z = Q.rightCols(p - 1);

    for (auto& pen : block.penalties) {
        Eigen::MatrixXd S = Z.transpose() * pen.dense(p) * Z;
        pen = Penalty{0.5 * (S + S.transpose()), 0, 1};
    }
    // Row-by-row product with Z, the same arithmetic as SmoothBlock::evaluate.
    Eigen::SparseMatrix<double, Eigen::RowMajor> unconstrained = block.columns;
    std::vector<Eigen::Triplet<double>> triplets;
    for (Eigen::Index i = 0; i < unconstrained.rows(); ++i) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(p);
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(unconstrained, i); it; ++it) {
            row(it.col()) = it.value();
        }
        Eigen::RowVectorXd out = row * Z;
        for (Eigen::Index j = 0; j < out.size(); ++j) {
            if (out(j) != 0.0) triplets.emplace_back(i, j, out(j));
        }
    }
    block.constraint = std::move(Z);
    block.columns.resize(unconstrained.rows(), p - 1);
    block.columns.setFromTriplets(triplets.begin(), triplets.end());
    return block;
}

SmoothBlock re_basis(const Factor& factor) {
    const int L = factor.level_count();
    if (L < 2) throw Error(ErrorKind::DegenerateFactor, fmt::format("random effect needs >= 2 levels, got {}", L));
    SmoothBlock block;
    block.layout = BlockLayout::Indicator;
    block.levels = factor.levels;
    block.penalties.push_back({Eigen::MatrixXd::Identity(1, 1), 0, L});
    rebuild_columns(block, L, {{}, factor.codes});
    return block;
}

SmoothBlock fs_basis(std::span<const double> x, const Factor& factor, int k, int m) {
    if (x.size() != factor.size()) throw Error(ErrorKind::Spec, "covariate and factor lengths differ");
    if (m != 1 && m != 2) throw Error(ErrorKind::Spec, fmt::format("factor smooth penalty order {} unsupported", m));
    const int L = factor.level_count();
    std::vector<std::unordered_set<double>> distinct(L);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (distinct[factor.codes[i]].size() < 2) distinct[factor.codes[i]].insert(x[i]);
    }
    for (int l = 0; l < L; ++l) {
        if (distinct[l].size() < 2) {
            throw Error(ErrorKind::DegenerateLevel,
                        fmt::format("level '{}' has fewer than 2 distinct covariate values", factor.levels[l]));
        }
    }

    SmoothBlock block;
    block.layout = BlockLayout::PerLevel;
    block.spline = CubicRegressionSpline::from_data(x, k);
    block.levels = factor.levels;
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    block.boundary_low = *lo;
    block.boundary_high = *hi;

    const Eigen::MatrixXd rough = block.spline->penalty(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(rough);
    const double tol = 1e-9 * eig.eigenvalues().cwiseAbs().maxCoeff();
    Eigen::MatrixXd null_ridge = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
        if (eig.eigenvalues()(i) <= tol) {
            const Eigen::VectorXd v = eig.eigenvectors().col(i);
            null_ridge.noalias() += v * v.transpose();
        }
    }
    block.penalties.push_back({rough, 0, L});
    block.penalties.push_back({0.5 * (null_ridge + null_ridge.transpose()), 0, L});
    rebuild_columns(block, static_cast<Eigen::Index>(k) * L, {{x.begin(), x.end()}, factor.codes});
    return block;
}

SmoothBlock by_interaction(const SmoothBlock& block, const Factor& factor) {
    if (block.layout != BlockLayout::Plain) throw Error(ErrorKind::Spec, "by-interaction needs a plain 1-D block");
    if (static_cast<Eigen::Index>(factor.size()) != block.columns.rows()) {
        throw Error(ErrorKind::Spec, "factor length differs from block rows");
    }
    const int L = factor.level_count();
    if (L == 1) return block;

    SmoothBlock out = block;
    out.layout = BlockLayout::ByLevel;
    out.level_width = block.width();
    out.levels = factor.levels;
    out.penalties.clear();
    for (int l = 0; l < L; ++l) {
        for (const auto& pen : block.penalties) {
            out.penalties.push_back({pen.matrix, l * block.width() + pen.offset, pen.replicate});
        }
    }
    // Mask the input rows: row i keeps its values in the columns of its level.
    std::vector<Eigen::Triplet<double>> triplets;
    for (Eigen::Index i = 0; i < block.columns.rows(); ++i) {
        const Eigen::Index shift = static_cast<Eigen::Index>(factor.codes[i]) * block.width();
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(block.columns, i); it; ++it) {
            triplets.emplace_back(i, shift + it.col(), it.value());
        }
    }
    out.columns.resize(block.columns.rows(), block.width() * L);
    out.columns.setFromTriplets(triplets.begin(), triplets.end());
    return out;
}

} // namespace mortgam
