#pragma once

#include "mortgam/data_ingest.hpp"
#include "mortgam/forecasting.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

namespace mortgam {

/// Complete age x year log-rate matrix of one population. Cells missing
/// from the panel are filled by linear interpolation within the age.
struct AgeYearMatrix {
    std::string country;
    Gender gender = Gender::Female;
    std::vector<int> ages;
    std::vector<int> years;
    Eigen::MatrixXd values;
    std::size_t imputed = 0;
};

AgeYearMatrix log_rate_matrix(const MortalityPanel& panel, std::string_view country, Gender gender);

struct LeeCarterFit {
    std::string country;
    Gender gender = Gender::Female;
    std::vector<int> ages;
    std::vector<int> years;
    Eigen::VectorXd a;
    Eigen::VectorXd b;     ///< sums to 1
    Eigen::VectorXd kappa; ///< sums to 0
    std::size_t imputed = 0;

    Eigen::MatrixXd fitted() const;
};

LeeCarterFit lee_carter_fit(const AgeYearMatrix& m);
/// Ages x horizon matrix of log rates, kappa projected by a random walk with drift.
Eigen::MatrixXd lee_carter_forecast(const LeeCarterFit& fit, int horizon);

struct LiLeeFit {
    Gender gender = Gender::Female;
    std::vector<std::string> countries;
    std::vector<int> ages;
    std::vector<int> years;
    std::vector<Eigen::VectorXd> a; ///< per population
    Eigen::VectorXd B;
    Eigen::VectorXd K;
    std::vector<Eigen::VectorXd> b;
    std::vector<Eigen::VectorXd> k;
    std::vector<bool> degenerate; ///< residual factor absent for the population

    Eigen::MatrixXd fitted(std::size_t population) const;
};

/// Common factor from the average log-rate matrix, then one residual
/// Lee-Carter factor per population. Needs at least two populations on
/// identical age and year grids.
LiLeeFit li_lee_fit(const std::vector<AgeYearMatrix>& populations);
/// Per population ages x horizon log rates; K and every k_c follow random walks with drift.
std::vector<Eigen::MatrixXd> li_lee_forecast(const LiLeeFit& fit, int horizon);

/// Long-format panels of baseline fits and forecasts.
ForecastPanel lee_carter_panel(const LeeCarterFit& fit, const Eigen::MatrixXd& values, const std::vector<int>& years);
ForecastPanel li_lee_panel(const LiLeeFit& fit, const std::vector<Eigen::MatrixXd>& values,
                           const std::vector<int>& years);

void write_age_factors_csv(std::ostream& out, const LeeCarterFit& fit);
void write_period_factors_csv(std::ostream& out, const LeeCarterFit& fit);

} // namespace mortgam
