#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mortgam {

/// Cubic regression spline parameterised by its values at the knots, with
/// natural end conditions. Outside the knot range the curve continues on the
/// tangent line of the nearest boundary knot.
class CubicRegressionSpline {
public:
    explicit CubicRegressionSpline(std::vector<double> knots);

    /// Knots at evenly spaced positions of the sorted distinct values of `x`.
    static CubicRegressionSpline from_data(std::span<const double> x, int k);

    int size() const { return static_cast<int>(knots_.size()); }
    const std::vector<double>& knots() const { return knots_; }

    Eigen::RowVectorXd basis(double x) const;
    /// Derivative of order 1 or 2 of every basis function at x.
    Eigen::RowVectorXd derivative(double x, int order) const;

    /// Integrated squared derivative penalty over the knot range; order 2 is
    /// the usual wiggliness penalty, order 1 penalises slope.
    Eigen::MatrixXd penalty(int order) const;

private:
    int interval(double x) const;

    std::vector<double> knots_;
    Eigen::MatrixXd second_derivs_; // maps knot values to second derivatives at the knots
};

std::vector<double> place_knots(std::span<const double> x, int k);

/// A penalty stored as a small dense matrix repeated `replicate` times down
/// the diagonal, starting at column `offset` of its block.
struct Penalty {
    Eigen::MatrixXd matrix;
    Eigen::Index offset = 0;
    Eigen::Index replicate = 1;

    Eigen::Index span() const { return matrix.rows() * replicate; }
    Eigen::MatrixXd dense(Eigen::Index width) const;
    double quadratic_form(const Eigen::Ref<const Eigen::VectorXd>& coef) const;
};

/// Integer-coded categorical variable; levels keep their order of first appearance.
struct Factor {
    std::vector<int> codes;
    std::vector<std::string> levels;

    static Factor from_labels(std::span<const std::string> labels);
    std::size_t size() const { return codes.size(); }
    int level_count() const { return static_cast<int>(levels.size()); }
    int code_of(const std::string& label) const; ///< -1 when unseen
};

enum class BlockLayout {
    Plain,     ///< one 1-D smooth
    ByLevel,   ///< a Plain block replicated per level, zero outside the level's rows
    PerLevel,  ///< factor smooth: one spline curve per level on shared knots
    Indicator, ///< random intercepts
};

struct SparseEntry {
    Eigen::Index col;
    double value;
};

struct SmoothBlock {
    BlockLayout layout = BlockLayout::Plain;
    Eigen::SparseMatrix<double, Eigen::RowMajor> columns;
    std::vector<Penalty> penalties;
    std::optional<CubicRegressionSpline> spline;
    /// Column transform absorbing a sum-to-zero constraint (p x (p - 1)).
    std::optional<Eigen::MatrixXd> constraint;
    /// Width of the per-level sub-block for ByLevel blocks.
    Eigen::Index level_width = 0;
    std::vector<std::string> levels;
    double boundary_low = 0.0;
    double boundary_high = 0.0;

    Eigen::Index width() const { return columns.cols(); }
    std::vector<double> knots() const { return spline ? spline->knots() : std::vector<double>{}; }

    /// Basis row of a new observation; `level` is ignored for Plain blocks.
    void evaluate(double x, int level, std::vector<SparseEntry>& out) const;
    Eigen::SparseMatrix<double, Eigen::RowMajor> evaluate(std::span<const double> x, std::span<const int> level) const;
};

SmoothBlock crs_basis(std::span<const double> x, int k, std::optional<std::vector<double>> knots = std::nullopt);

/// Inflates the zero eigenvalues of the single penalty to
/// `epsilon` x (smallest positive eigenvalue), making it full rank.
SmoothBlock shrinkage_modify(SmoothBlock block, double epsilon = 0.1);

/// Absorbs the constraint that every column sums to zero over the rows of the block.
SmoothBlock center_constraint(SmoothBlock block);

SmoothBlock re_basis(const Factor& factor);

/// One curve per factor level on knots placed from the pooled x. Two
/// penalties shared by all levels: the order-m roughness penalty and a ridge
/// on its null space.
SmoothBlock fs_basis(std::span<const double> x, const Factor& factor, int k, int m = 1);

/// Replicates a Plain block per level with one copy of each penalty per level.
SmoothBlock by_interaction(const SmoothBlock& block, const Factor& factor);

} // namespace mortgam
