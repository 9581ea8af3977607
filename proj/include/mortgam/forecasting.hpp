#pragma once

#include "mortgam/covariates.hpp"
#include "mortgam/gam.hpp"

#include <iosfwd>
#include <map>
#include <vector>

namespace mortgam {

/// Random walk with drift fitted to a yearly series.
struct RwdFit {
    double drift = 0.0;
    double sd = 0.0; ///< sample SD of the first differences
    double last_value = 0.0;
    int last_year = 0;
    int first_year = 0;
};

/// Needs at least 3 consecutive years; a gap raises a gap error.
RwdFit rwd_fit(const YearSeries& series);
/// Point forecasts for last_year + 1 .. last_year + horizon.
YearSeries rwd_forecast(const RwdFit& fit, int horizon);

struct SeriesForecast {
    RwdFit fit;
    YearSeries mean;
};

/// Random-walk forecasts of k_t and of every k_ct series.
struct CovariateForecast {
    SeriesForecast kt;
    std::map<KctKey, SeriesForecast> kct;
    int split_age = 40;

    /// Covariates for future years, same layout as the training set.
    CovariateSet as_covariates() const;
};

CovariateForecast forecast_covariates(const CovariateSet& covariates, int horizon);

/// Frame rows for every (country, gender, age) cell and year in `years`,
/// with covariates looked up in `covariates` and cohort = year - age.
ModelFrame future_frame(const std::vector<std::string>& countries, const std::vector<Gender>& genders, AgeRange ages,
                        YearRange years, const CovariateSet& covariates);

struct RateRecord {
    std::string country;
    Gender gender = Gender::Female;
    int age = 0;
    int year = 0;
    double log_rate = 0.0;
    double rate = 0.0;
};

struct ForecastPanel {
    std::vector<RateRecord> records;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
};

/// Forecasts covariates by random walks and projects every cell of the
/// training panel's populations over `horizon` years through the model.
ForecastPanel forecast_asdr(const FittedModel& model, const MortalityPanel& train, const CovariateSet& covariates,
                            int horizon);

/// In-sample predictions for the cells present in a panel.
ForecastPanel fitted_panel(const FittedModel& model, const MortalityPanel& panel, const CovariateSet& covariates);

void write_forecast_csv(std::ostream& out, const ForecastPanel& panel);
/// Reads the layout written by write_forecast_csv; malformed lines raise a parse error.
ForecastPanel read_forecast_csv(std::istream& in);
/// `series,year,value,lo,hi` with lo/hi = value -/+ 1.96 sd sqrt(h).
void write_covariate_forecast_csv(std::ostream& out, const CovariateForecast& forecast);

} // namespace mortgam
