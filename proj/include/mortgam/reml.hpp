#pragma once

#include "mortgam/errors.hpp"
#include "mortgam/pls.hpp"

#include <vector>

namespace mortgam {

/// Restricted likelihood with profiled scale,
///   (n - d)/2 log(rss + b'S b) + 1/2 log|X'X + S| - 1/2 log|S|_+,
/// as a function of rho = log(lambda). All determinant constants are kept.
class RemlObjective {
public:
    explicit RemlObjective(const Design& design);

    struct Evaluation {
        double score = 0.0;
        Eigen::VectorXd gradient; ///< empty when not requested
    };

    Evaluation evaluate(const Eigen::VectorXd& rho, bool with_gradient = true);
    double score(const Eigen::VectorXd& rho) { return evaluate(rho, false).score; }
    /// Central differences of the score, step h in rho.
    Eigen::VectorXd finite_difference_gradient(const Eigen::VectorXd& rho, double h = 1e-4);

    /// Curvature model at the point of the last `evaluate`: the second
    /// derivatives of the log penalized-residual term are exact; in the
    /// log|X'X + S| term the products tr(A^-1 S_i A^-1 S_j) use only the
    /// entries of A^-1 inside the factor pattern, so they are kept for pairs
    /// of penalties on the same columns and dropped otherwise.
    Eigen::MatrixXd approximate_hessian() const;

    /// Dimension of the null space of the total penalty.
    Eigen::Index null_space_dim() const { return null_dim_; }
    int size() const { return system_.design().lambda_count(); }
    PenalizedSystem& system() { return system_; }
    const PenalizedSystem& system() const { return system_; }

private:
    struct Group {
        std::vector<int> members;
        Eigen::Index replicate = 1;
        bool separable = true;       ///< member ranges mutually orthogonal
        std::vector<double> ranks;   ///< per member, times replicate
        std::vector<double> consts;  ///< per member, log|M|_+ times replicate
        Eigen::Index rank = 0;       ///< structural rank of the summed penalty block (one replicate)
        std::vector<Eigen::MatrixXd> dense; ///< member matrices on the group's span (one replicate)
    };

    /// log|S_lambda|_+ and its rho-gradient.
    double log_det_penalty(const Eigen::VectorXd& rho, Eigen::VectorXd* gradient) const;
    /// Hessian of log|S_lambda|_+ in rho (zero for separable groups).
    Eigen::MatrixXd log_det_penalty_hessian(const Eigen::VectorXd& rho) const;
    /// tr(Z S_i Z S_j) over the diagonal replicate blocks of A^-1.
    double local_trace_product(int i, int j) const;

    PenalizedSystem system_;
    std::vector<Group> groups_;
    Eigen::Index null_dim_ = 0;
    Eigen::VectorXd rho_;
    double D_ = 0.0;
    double dof_ = 0.0;
};

enum class GradientMethod { Analytic, FiniteDifference };
enum class SearchMethod { Newton, Bfgs };

struct RemlOptions {
    double rho_min = -15.0;
    double rho_max = 20.0;
    int max_iterations = 200;
    double score_tolerance = 1e-6;
    double gradient_tolerance = 1e-3;
    /// Added to both tolerances per unit of |score|, so large problems are
    /// not asked for agreement below the rounding level of the score.
    double relative_tolerance = 0.0;
    double max_step = 5.0;
    GradientMethod gradient = GradientMethod::Analytic;
    SearchMethod search = SearchMethod::Newton;
};

struct RemlResult {
    Eigen::VectorXd rho;
    double score = 0.0;
    Eigen::VectorXd gradient;
    int iterations = 0;
    int evaluations = 0;
    bool used_fallback = false;
    std::vector<double> trace; ///< score after every iteration
};

class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& message, std::vector<double> trace)
        : Error(ErrorKind::Convergence, message), trace_(std::move(trace)) {}
    const std::vector<double>& trace() const noexcept { return trace_; }

private:
    std::vector<double> trace_;
};

/// Box-projected quasi-Newton search on rho: Newton steps on the curvature
/// model of `approximate_hessian` (or plain BFGS updates), backtracking line
/// search, and a coordinate-wise golden-section sweep when a line search
/// fails. Leaves the objective's system factorized at the returned optimum.
RemlResult optimize_reml(RemlObjective& objective, const Eigen::VectorXd& rho0, const RemlOptions& options = {});

} // namespace mortgam
