#pragma once

// Independent reference implementations used as oracles. Everything here is
// dense and written straight from the definitions.

#include "mortgam/covariates.hpp"
#include "mortgam/data_ingest.hpp"
#include "mortgam/design.hpp"
#include "mortgam/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <tuple>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace support {

inline double max_abs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

/// Complete panel with random a_x, b_x, k_t per population plus noise.
inline mortgam::MortalityPanel random_panel(std::mt19937_64& rng, std::vector<std::string> countries, int ages,
                                            int years, double noise) {
    std::normal_distribution<double> n01(0.0, 1.0);
    mortgam::GeneratorSpec spec;
    spec.first_year = 1950;
    spec.noise_sd = {noise};
    for (const auto& c : countries) {
        for (auto g : {mortgam::Gender::Female, mortgam::Gender::Male}) {
            mortgam::SyntheticPopulation p;
            p.country = c;
            p.gender = g;
            for (int x = 0; x < ages; ++x) {
                p.a.push_back(-8.0 + 0.08 * x + 0.3 * n01(rng));
                p.b.push_back(1.0 / ages + 0.002 * n01(rng));
            }
            double k = 10.0 * n01(rng);
            for (int t = 0; t < years; ++t) {
                p.k.push_back(k);
                k += -1.0 + n01(rng);
            }
            spec.populations.push_back(std::move(p));
        }
    }
    return mortgam::synth_panel(spec, rng());
}

/// kt and kct from a plain loop over the records.
inline std::map<int, double> brute_kt(const mortgam::MortalityPanel& panel) {
    std::map<int, std::pair<double, int>> acc;
    for (const auto& r : panel.records) {
        acc[r.year].first += r.log_rate;
        acc[r.year].second += 1;
    }
    std::map<int, double> out;
    for (const auto& [y, s] : acc) out[y] = s.first / s.second;
    return out;
}

inline std::map<std::tuple<std::string, int, int>, double> brute_kct(const mortgam::MortalityPanel& panel,
                                                                      int split_age) {
    std::map<std::tuple<std::string, int, int>, std::pair<double, int>> acc;
    for (const auto& r : panel.records) {
        auto& s = acc[{r.country, r.age <= split_age ? 0 : 1, r.year}];
        s.first += r.log_rate;
        s.second += 1;
    }
    std::map<std::tuple<std::string, int, int>, double> out;
    for (const auto& [k, s] : acc) out[k] = s.first / s.second;
    return out;
}

/// Design built directly from a dense model matrix; one smooth term per
/// penalty, each penalty covering `width` columns starting at `first`.
struct PenaltySpec {
    Eigen::Index first;
    Eigen::MatrixXd matrix;
};

inline mortgam::Design hand_design(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   const std::vector<PenaltySpec>& penalties) {
    mortgam::Design d;
    d.X = X.sparseView();
    d.y = y;
    d.recipe.cols = X.cols();
    // Unpenalized columns go into one parametric term ahead of the smooth ones.
    Eigen::Index first_smooth = X.cols();
    for (const auto& p : penalties) first_smooth = std::min(first_smooth, p.first);
    if (first_smooth > 0) {
        mortgam::DesignTerm t;
        t.name = "(parametric)";
        t.first = 0;
        t.width = first_smooth;
        d.recipe.terms.push_back(t);
    }
    for (std::size_t j = 0; j < penalties.size(); ++j) {
        mortgam::DesignTerm t;
        t.name = "s" + std::to_string(j);
        t.first = penalties[j].first;
        t.width = penalties[j].matrix.rows();
        t.smooth = true;
        d.recipe.terms.push_back(t);
        mortgam::DesignPenalty p;
        p.term = static_cast<int>(d.recipe.terms.size()) - 1;
        p.first_column = penalties[j].first;
        p.penalty.matrix = penalties[j].matrix;
        p.lambda_index = static_cast<int>(j);
        d.penalties.push_back(p);
    }
    return d;
}

/// Dense sum_j lambda_j S_j embedded in p x p.
inline Eigen::MatrixXd dense_penalty(const mortgam::Design& d, const Eigen::VectorXd& lambda) {
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(d.cols(), d.cols());
    for (const auto& p : d.penalties) {
        const Eigen::MatrixXd block = p.penalty.dense(p.penalty.span());
        S.block(p.first_column, p.first_column, block.rows(), block.cols()) += lambda(p.lambda_index) * block;
    }
    return S;
}

inline Eigen::VectorXd dense_beta(const mortgam::Design& d, const Eigen::VectorXd& lambda) {
    const Eigen::MatrixXd X = Eigen::MatrixXd(d.X);
    const Eigen::MatrixXd A = X.transpose() * X + dense_penalty(d, lambda);
    return A.ldlt().solve(X.transpose() * d.y);
}

/// Restricted likelihood written from its definition with dense
/// eigen-decompositions: (n-d)/2 log(rss + b'Sb) + 1/2 log|A| - 1/2 log|S|_+.
inline double dense_reml(const mortgam::Design& d, const Eigen::VectorXd& rho) {
    const Eigen::VectorXd lambda = rho.array().exp();
    const Eigen::MatrixXd X = Eigen::MatrixXd(d.X);
    const Eigen::MatrixXd S = dense_penalty(d, lambda);
    const Eigen::MatrixXd A = X.transpose() * X + S;
    const Eigen::VectorXd beta = A.ldlt().solve(X.transpose() * d.y);
    const double rss = (d.y - X * beta).squaredNorm();
    const double pen = beta.dot(S * beta);

    // Structural null space from the unit-weight penalty sum.
    const Eigen::MatrixXd S1 = dense_penalty(d, Eigen::VectorXd::Ones(lambda.size()));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(S1);
    const double tol = 1e-9 * std::max(1.0, e1.eigenvalues().cwiseAbs().maxCoeff());
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < e1.eigenvalues().size(); ++i) rank += e1.eigenvalues()(i) > tol;
    const auto null_dim = static_cast<double>(S.rows() - rank);

    // log|S|_+ : the `rank` largest eigenvalues of S_lambda.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    double log_det_s = 0.0;
    for (Eigen::Index i = S.rows() - rank; i < S.rows(); ++i) log_det_s += std::log(es.eigenvalues()(i));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(A);
    const double log_det_a = ea.eigenvalues().array().log().sum();
    const double n = static_cast<double>(X.rows());
    return 0.5 * (n - null_dim) * std::log(rss + pen) + 0.5 * log_det_a - 0.5 * log_det_s;
}

/// One-way random-intercept toy: intercept + indicators of `groups` groups
/// with an identity penalty. Its restricted likelihood has an interior minimum.
inline mortgam::Design anova_toy(double scale = 1.0) {
    const int groups = 4;
    const int per = 5;
    const double effects[groups] = {0.9, -0.4, 0.3, -0.7};
    const double noise[per] = {0.31, -0.52, 0.12, 0.44, -0.27};
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(groups * per, 1 + groups);
    Eigen::VectorXd y(groups * per);
    for (int g = 0; g < groups; ++g) {
        for (int i = 0; i < per; ++i) {
            const int r = g * per + i;
            X(r, 0) = 1.0;
            X(r, 1 + g) = 1.0;
            y(r) = scale * (2.0 + effects[g] + noise[(i + g) % per]);
        }
    }
    return hand_design(X, y, {{1, Eigen::MatrixXd::Identity(groups, groups)}});
}


/// Kind of the mortgam::Error thrown by `fn`, empty when nothing is thrown.
template <typename Fn>
std::optional<mortgam::ErrorKind> error_kind(Fn&& fn) {
    try {
        fn();
    } catch (const mortgam::Error& e) {
        return e.kind();
    }
    return std::nullopt;
}

} // namespace support
