#pragma once

#include "mortgam/covariates.hpp"
#include "mortgam/gam.hpp"

#include <iosfwd>
#include <map>
#include <span>
#include <vector>

namespace mortgam {

/// Sample autocorrelation of one series for lags 0..max_lag.
std::map<int, double> acf(std::span<const double> series, int max_lag);

struct AcfSummary {
    std::map<int, double> mean; ///< equal-weight average over series
    std::size_t series_used = 0;
    std::size_t series_skipped = 0; ///< too short or constant
};

/// Treats every (country, gender, age) group of the frame as its own time
/// series ordered by year and averages the per-lag coefficients.
AcfSummary mean_series_acf(const ModelFrame& frame, const Eigen::VectorXd& residuals, int max_lag);

double inverse_normal_cdf(double p);

struct QqPoint {
    double theoretical = 0.0;
    double sample = 0.0;
};

/// Normal quantiles Phi^-1((i - 0.5)/n) against the sorted residuals
/// standardized with the population standard deviation.
std::vector<QqPoint> qq_points(std::span<const double> residuals);

struct ResidualRow {
    std::string country;
    Gender gender = Gender::Female;
    int age = 0;
    int year = 0;
    double fitted = 0.0;
    double residual = 0.0;
};

std::vector<ResidualRow> residuals_vs_fitted(const FittedModel& model, const ModelFrame& frame);

struct SpreadRow {
    int decile = 0;
    double fitted_low = 0.0;
    double fitted_high = 0.0;
    std::size_t count = 0;
    double residual_sd = 0.0;
};

/// Residual standard deviation within deciles of the fitted values.
std::vector<SpreadRow> spread_by_fitted_decile(std::span<const ResidualRow> rows);

struct DiagnosticsReport {
    std::vector<ResidualRow> table;
    std::vector<QqPoint> qq;
    AcfSummary acf;
    double lag1 = 0.0;
    std::vector<SpreadRow> spread;
};

/// One point of a fitted smooth term on its covariate grid. Random-effect
/// terms give one point per level with no covariate value.
struct CurvePoint {
    std::string term;
    std::string level;
    double x = 0.0;
    double value = 0.0;
};

/// Every smooth term evaluated on `grid` equally spaced points between its
/// training boundaries, separately for each level where the term has levels.
std::vector<CurvePoint> smooth_curves(const FittedModel& model, int grid = 100);

DiagnosticsReport diagnose(const FittedModel& model, const ModelFrame& frame, int max_lag = 20);

void write_qq_csv(std::ostream& out, std::span<const QqPoint> points);
void write_acf_csv(std::ostream& out, const std::map<int, double>& acf);
void write_resid_fitted_csv(std::ostream& out, std::span<const ResidualRow> rows);
void write_spread_csv(std::ostream& out, std::span<const SpreadRow> rows);
void write_curves_csv(std::ostream& out, std::span<const CurvePoint> points);

} // namespace mortgam
