#include "mortgam/diagnostics.hpp"

#include "mortgam/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <tuple>

namespace mortgam {

std::map<int, double> acf(std::span<const double> series, int max_lag) {
    const auto n = static_cast<Eigen::Index>(series.size());
    if (max_lag < 1 || n <= max_lag) {
        throw Error(ErrorKind::Spec, fmt::format("acf needs 1 <= max_lag < length, got lag {} for length {}", max_lag, n));
    }
    const Eigen::Map<const Eigen::VectorXd> r(series.data(), n);
    const Eigen::VectorXd c = r.array() - r.mean();
    const double denom = c.squaredNorm();
    if (!(denom > 0.0)) throw Error(ErrorKind::UndefinedAcf, "autocorrelation of a constant series is undefined");
    std::map<int, double> out;
    out[0] = 1.0;
    for (int h = 1; h <= max_lag; ++h) out[h] = c.head(n - h).dot(c.tail(n - h)) / denom;
    return out;
}

AcfSummary mean_series_acf(const ModelFrame& frame, const Eigen::VectorXd& residuals, int max_lag) {
    if (residuals.size() != static_cast<Eigen::Index>(frame.size())) {
        throw Error(ErrorKind::Alignment, "residual count differs from frame rows");
    }
    using Key = std::tuple<std::string, Gender, int>;
    std::map<Key, std::vector<std::pair<int, double>>> groups;
    for (std::size_t i = 0; i < frame.size(); ++i) {
        const auto& row = frame.rows[i];
        groups[{row.country, row.gender, row.age}].emplace_back(row.year, residuals(static_cast<Eigen::Index>(i)));
    }
    AcfSummary summary;
    std::vector<double> series;
    for (auto& [key, values] : groups) {
        std::sort(values.begin(), values.end());
        series.clear();
        for (const auto& v : values) series.push_back(v.second);
        if (static_cast<int>(series.size()) <= max_lag) {
            ++summary.series_skipped;
            continue;
        }
        std::map<int, double> a;
        try {
            a = acf(series, max_lag);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::UndefinedAcf) throw;
            ++summary.series_skipped;
            continue;
        }
        for (const auto& [lag, value] : a) summary.mean[lag] += value;
        ++summary.series_used;
    }
    if (summary.series_used == 0) throw Error(ErrorKind::UndefinedAcf, "no series long enough and non-constant");
    for (auto& [lag, value] : summary.mean) value /= static_cast<double>(summary.series_used);
    summary.mean[0] = 1.0;
    return summary;
}

double inverse_normal_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::Spec, fmt::format("probability {} outside (0, 1)", p));
    // Upper half through the lower tail: 1 - p is exact there, p itself near 1 is not.
    if (p > 0.5) return -inverse_normal_cdf(1.0 - p);
    // Rational approximation (Acklam) followed by one Halley step on erfc.
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                               1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                               6.680131188771972e+01,  -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                               -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                               3.754408661907416e+00};
    const double low = 0.02425;
    double x;
    if (p < low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    for (int it = 0; it < 2; ++it) {
        const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
        const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    return x;
}

std::vector<QqPoint> qq_points(std::span<const double> residuals) {
    const std::size_t n = residuals.size();
    if (n < 3) throw Error(ErrorKind::Spec, "a QQ plot needs at least 3 residuals");
    std::vector<double> z(residuals.begin(), residuals.end());
    double mean = 0.0;
    for (double v : z) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : z) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    for (double& v : z) v = sd > 0.0 ? (v - mean) / sd : 0.0;
    std::sort(z.begin(), z.end());
    std::vector<QqPoint> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].theoretical = inverse_normal_cdf((static_cast<double>(i) + 0.5) / static_cast<double>(n));
        out[i].sample = z[i];
    }
    return out;
}

std::vector<ResidualRow> residuals_vs_fitted(const FittedModel& model, const ModelFrame& frame) {
    const Eigen::VectorXd fitted = predict(model, frame);
    std::vector<ResidualRow> rows;
    rows.reserve(frame.size());
    for (std::size_t i = 0; i < frame.size(); ++i) {
        const auto& r = frame.rows[i];
        const double f = fitted(static_cast<Eigen::Index>(i));
        rows.push_back({r.country, r.gender, r.age, r.year, f, r.y - f});
    }
    return rows;
}

std::vector<SpreadRow> spread_by_fitted_decile(std::span<const ResidualRow> rows) {
    std::vector<std::pair<double, double>> fr;
    fr.reserve(rows.size());
    for (const auto& r : rows) fr.emplace_back(r.fitted, r.residual);
    std::sort(fr.begin(), fr.end());
    std::vector<SpreadRow> out;
    const std::size_t n = fr.size();
    for (int d = 0; d < 10; ++d) {
        const std::size_t lo = n * static_cast<std::size_t>(d) / 10;
        const std::size_t hi = n * static_cast<std::size_t>(d + 1) / 10;
        if (hi <= lo) continue;
        double mean = 0.0;
        for (std::size_t i = lo; i < hi; ++i) mean += fr[i].second;
        mean /= static_cast<double>(hi - lo);
        double ss = 0.0;
        for (std::size_t i = lo; i < hi; ++i) ss += (fr[i].second - mean) * (fr[i].second - mean);
        out.push_back({d + 1, fr[lo].first, fr[hi - 1].first, hi - lo, std::sqrt(ss / static_cast<double>(hi - lo))});
    }
    return out;
}

DiagnosticsReport diagnose(const FittedModel& model, const ModelFrame& frame, int max_lag) {
    DiagnosticsReport report;
    report.table = residuals_vs_fitted(model, frame);
    std::vector<double> res;
    res.reserve(report.table.size());
    for (const auto& r : report.table) res.push_back(r.residual);
    report.qq = qq_points(res);
    const Eigen::Map<const Eigen::VectorXd> rv(res.data(), static_cast<Eigen::Index>(res.size()));
    report.acf = mean_series_acf(frame, rv, max_lag);
    report.lag1 = report.acf.mean.at(1);
    report.spread = spread_by_fitted_decile(report.table);
    return report;
}

void write_qq_csv(std::ostream& out, std::span<const QqPoint> points) {
    out << "theoretical,sample\n";
    for (const auto& p : points) out << fmt::format("{:.10g},{:.10g}\n", p.theoretical, p.sample);
}

void write_acf_csv(std::ostream& out, const std::map<int, double>& a) {
    out << "lag,coef\n";
    for (const auto& [lag, v] : a) out << fmt::format("{},{:.10g}\n", lag, v);
}

void write_resid_fitted_csv(std::ostream& out, std::span<const ResidualRow> rows) {
    out << "country,gender,age,year,fitted,residual\n";
    for (const auto& r : rows) {
        out << fmt::format("{},{},{},{},{:.10g},{:.10g}\n", r.country, to_string(r.gender), r.age, r.year, r.fitted,
                           r.residual);
    }
}

void write_spread_csv(std::ostream& out, std::span<const SpreadRow> rows) {
    out << "decile,fitted_low,fitted_high,count,residual_sd\n";
    for (const auto& r : rows) {
        out << fmt::format("{},{:.10g},{:.10g},{},{:.10g}\n", r.decile, r.fitted_low, r.fitted_high, r.count,
                           r.residual_sd);
    }
}

std::vector<CurvePoint> smooth_curves(const FittedModel& model, int grid) {
    if (grid < 2) throw Error(ErrorKind::Spec, "curve grid needs at least 2 points");
    std::vector<CurvePoint> out;
    std::vector<SparseEntry> row;
    for (const auto& term : model.recipe.terms) {
        if (!term.smooth) continue;
        const auto& block = term.block;
        auto value_at = [&](double x, int level) {
            row.clear();
            block.evaluate(x, level, row);
            double v = 0.0;
            for (const auto& e : row) v += e.value * model.beta(term.first + e.col);
            return v;
        };
        if (block.layout == BlockLayout::Indicator) {
            for (std::size_t l = 0; l < block.levels.size(); ++l) {
                out.push_back({term.name, block.levels[l], std::nan(""), value_at(0.0, static_cast<int>(l))});
            }
            continue;
        }
        const std::size_t levels = block.layout == BlockLayout::Plain ? 1 : block.levels.size();
        for (std::size_t l = 0; l < levels; ++l) {
            const std::string label = block.layout == BlockLayout::Plain ? std::string{} : block.levels[l];
            for (int i = 0; i < grid; ++i) {
                const double x = block.boundary_low + (block.boundary_high - block.boundary_low) * i / (grid - 1);
                out.push_back({term.name, label, x, value_at(x, static_cast<int>(l))});
            }
        }
    }
    return out;
}

void write_curves_csv(std::ostream& out, std::span<const CurvePoint> points) {
    out << "term,level,x,value\n";
    for (const auto& p : points) {
        const std::string x = std::isnan(p.x) ? std::string{} : fmt::format("{:.10g}", p.x);
        out << fmt::format("\"{}\",{},{},{:.10g}\n", p.term, p.level, x, p.value);
    }
}

} // namespace mortgam
