#include "mortgam/forecasting.hpp"

#include "mortgam/errors.hpp"

#include <fmt/format.h>

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace mortgam {

RwdFit rwd_fit(const YearSeries& series) {
    if (series.size() < 3) {
        throw Error(ErrorKind::Spec, fmt::format("random walk fit needs at least 3 years, got {}", series.size()));
    }
    int expected = series.begin()->first;
    for (const auto& [year, value] : series) {
        if (year != expected) throw Error(ErrorKind::Gap, fmt::format("series has a gap before year {}", year));
        ++expected;
    }
    RwdFit fit;
    fit.first_year = series.begin()->first;
    fit.last_year = series.rbegin()->first;
    fit.last_value = series.rbegin()->second;
    const auto steps = static_cast<double>(series.size() - 1);
    fit.drift = (fit.last_value - series.begin()->second) / steps;
    double ss = 0.0;
    for (auto it = std::next(series.begin()); it != series.end(); ++it) {
        const double diff = it->second - std::prev(it)->second - fit.drift;
        ss += diff * diff;
    }
    fit.sd = std::sqrt(ss / (steps - 1.0));
    return fit;
}

YearSeries rwd_forecast(const RwdFit& fit, int horizon) {
    if (horizon < 0) throw Error(ErrorKind::Spec, "forecast horizon must be non-negative");
    YearSeries out;
    for (int h = 1; h <= horizon; ++h) out[fit.last_year + h] = fit.last_value + h * fit.drift;
    return out;
}

CovariateSet CovariateForecast::as_covariates() const {
    CovariateSet set;
    set.split_age = split_age;
    set.kt = kt.mean;
    for (const auto& [key, f] : kct) set.kct[key] = f.mean;
    return set;
}

CovariateForecast forecast_covariates(const CovariateSet& covariates, int horizon) {
    CovariateForecast out;
    out.split_age = covariates.split_age;
    out.kt.fit = rwd_fit(covariates.kt);
    out.kt.mean = rwd_forecast(out.kt.fit, horizon);
    for (const auto& [key, series] : covariates.kct) {
        SeriesForecast f;
        f.fit = rwd_fit(series);
        f.mean = rwd_forecast(f.fit, horizon);
        out.kct.emplace(key, std::move(f));
    }
    return out;
}

ModelFrame future_frame(const std::vector<std::string>& countries, const std::vector<Gender>& genders, AgeRange ages,
                        YearRange years, const CovariateSet& covariates) {
    ModelFrame frame;
    if (years.size() <= 0) return frame;
    frame.rows.reserve(countries.size() * genders.size() * static_cast<std::size_t>(ages.size() * years.size()));
    for (const auto& country : countries) {
        for (Gender g : genders) {
            for (int age = ages.first; age <= ages.last; ++age) {
                for (int year = years.first; year <= years.last; ++year) {
                    FrameRow row;
                    row.country = country;
                    row.gender = g;
                    row.age = age;
                    row.year = year;
                    row.cohort = year - age;
                    row.y = 0.0;
                    row.kt = covariates.kt_at(year);
                    row.kct = covariates.kct.empty() ? 0.0 : covariates.kct_at(country, age, year);
                    frame.rows.push_back(std::move(row));
                }
            }
        }
    }
    return frame;
}

namespace {

ForecastPanel to_panel(const ModelFrame& frame, const Eigen::VectorXd& eta) {
    ForecastPanel out;
    out.records.reserve(frame.size());
    for (std::size_t i = 0; i < frame.size(); ++i) {
        const auto& r = frame.rows[i];
        const double v = eta(static_cast<Eigen::Index>(i));
        out.records.push_back({r.country, r.gender, r.age, r.year, v, std::exp(v)});
    }
    return out;
}

} // namespace

ForecastPanel forecast_asdr(const FittedModel& model, const MortalityPanel& train, const CovariateSet& covariates,
                            int horizon) {
    if (horizon < 0) throw Error(ErrorKind::Spec, "forecast horizon must be non-negative");
    if (horizon == 0) return {};
    const auto cf = forecast_covariates(covariates, horizon);
    const YearRange future{train.years.last + 1, train.years.last + horizon};
    const ModelFrame frame = future_frame(train.countries, train.genders, train.ages, future, cf.as_covariates());
    return to_panel(frame, predict(model, frame));
}

ForecastPanel fitted_panel(const FittedModel& model, const MortalityPanel& panel, const CovariateSet& covariates) {
    const ModelFrame frame = attach_covariates(panel, covariates);
    return to_panel(frame, predict(model, frame));
}

void write_forecast_csv(std::ostream& out, const ForecastPanel& panel) {
    out << "country,gender,age,year,log_rate_hat,rate_hat\n";
    for (const auto& r : panel.records) {
        out << fmt::format("{},{},{},{},{:.17g},{:.17g}\n", r.country, to_string(r.gender), r.age, r.year, r.log_rate,
                           r.rate);
    }
}

ForecastPanel read_forecast_csv(std::istream& in) {
    ForecastPanel panel;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 6) throw Error(ErrorKind::Parse, fmt::format("forecast line {}: expected 6 fields", line_no));
        try {
            panel.records.push_back({f[0], parse_gender(f[1]), std::stoi(f[2]), std::stoi(f[3]), std::stod(f[4]),
                                     std::stod(f[5])});
        } catch (const std::logic_error&) {
            throw Error(ErrorKind::Parse, fmt::format("forecast line {}: bad number", line_no));
        }
    }
    return panel;
}

void write_covariate_forecast_csv(std::ostream& out, const CovariateForecast& forecast) {
    out << "series,year,value,lo,hi\n";
    auto emit = [&](const std::string& name, const SeriesForecast& f) {
        for (const auto& [year, value] : f.mean) {
            const double half = 1.96 * f.fit.sd * std::sqrt(static_cast<double>(year - f.fit.last_year));
            out << fmt::format("{},{},{:.12g},{:.12g},{:.12g}\n", name, year, value, value - half, value + half);
        }
    };
    emit("kt", forecast.kt);
    for (const auto& [key, f] : forecast.kct) emit(fmt::format("kct:{}:{}", key.first, to_string(key.second)), f);
}

} // namespace mortgam
