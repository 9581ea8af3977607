#pragma once

#include "mortgam/design.hpp"

#include <Eigen/SparseCholesky>

#include <vector>

namespace mortgam {

/// Sparse normal-equations workspace for one design. The symbolic
/// factorization of X'X + sum_j lambda_j S_j is computed once; each call to
/// `factorize` only refreshes the numeric values.
class PenalizedSystem {
public:
    explicit PenalizedSystem(const Design& design);

    /// Factorizes A(lambda) and solves for beta. Throws a singular-fit error
    /// naming the first term whose own block is not positive definite.
    void factorize(const Eigen::VectorXd& lambda);

    const Design& design() const { return *design_; }
    const Eigen::VectorXd& lambda() const { return lambda_; }
    const Eigen::VectorXd& beta() const { return beta_; }
    const Eigen::VectorXd& xty() const { return xty_; }
    double rss() const { return rss_; }
    /// beta' S_j beta for penalty j (without lambda_j).
    double penalty_quadratic(int j) const;
    /// sum_j lambda_j beta' S_j beta
    double penalty_total() const;
    double log_det() const { return log_det_; }

    /// A(lambda) as assembled for the last factorization.
    const Eigen::SparseMatrix<double>& system() const { return A_; }
    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
    Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;

    /// tr(A^{-1} S_j), from the selected inverse.
    double trace_inverse_penalty(int j) const;
    /// Per-term effective degrees of freedom, diag of (A^{-1} X'X) summed over the term.
    std::vector<double> term_edf() const;
    /// Leverages x_i' A^{-1} x_i.
    Eigen::VectorXd hat_diagonal() const;
    /// (A^{-1})_{ab}; entries outside the factor's pattern are not available.
    double inverse_entry(Eigen::Index a, Eigen::Index b) const;

private:
    void selected_inverse() const;
    Eigen::Index locate(Eigen::Index row, Eigen::Index col) const; // in L storage, row >= col
    [[noreturn]] void report_singular() const;

    const Design* design_;
    Eigen::SparseMatrix<double> xtx_;
    Eigen::VectorXd xty_;
    Eigen::SparseMatrix<double> A_;
    std::vector<Eigen::Index> xtx_slot_;                   // value slot in A_ of each X'X entry
    std::vector<std::vector<Eigen::Index>> penalty_slots_; // value slots of each penalty's dense entries
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> llt_;
    std::vector<Eigen::Index> perm_; // original column -> factor position
    Eigen::VectorXd lambda_;
    Eigen::VectorXd beta_;
    double rss_ = 0.0;
    double log_det_ = 0.0;
    mutable std::vector<double> inverse_; // parallel to the values of L
    bool factorized_ = false;
};

struct PlsResult {
    Eigen::VectorXd beta;
    Eigen::VectorXd hat;
    double rss = 0.0;
};

PlsResult pls_solve(const Design& design, const Eigen::VectorXd& lambda);

} // namespace mortgam
