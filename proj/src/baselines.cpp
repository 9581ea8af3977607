#include "mortgam/baselines.hpp"

#include "mortgam/errors.hpp"

#include <fmt/format.h>

#include <Eigen/SVD>

#include <cmath>
#include <optional>
#include <ostream>

namespace mortgam {

AgeYearMatrix log_rate_matrix(const MortalityPanel& panel, std::string_view country, Gender gender) {
    AgeYearMatrix m;
    m.country = std::string(country);
    m.gender = gender;
    for (int a = panel.ages.first; a <= panel.ages.last; ++a) m.ages.push_back(a);
    for (int y = panel.years.first; y <= panel.years.last; ++y) m.years.push_back(y);
    const auto na = static_cast<Eigen::Index>(m.ages.size());
    const auto ny = static_cast<Eigen::Index>(m.years.size());
    m.values = Eigen::MatrixXd::Constant(na, ny, std::nan(""));
    for (const auto& r : panel.records) {
        if (r.country != country || r.gender != gender) continue;
        m.values(r.age - panel.ages.first, r.year - panel.years.first) = r.log_rate;
    }
    for (Eigen::Index i = 0; i < na; ++i) {
        std::vector<Eigen::Index> present;
        for (Eigen::Index t = 0; t < ny; ++t) {
            if (!std::isnan(m.values(i, t))) present.push_back(t);
        }
        if (present.empty()) {
            throw Error(ErrorKind::Degenerate,
                        fmt::format("{} {} age {} has no observed rates", country, to_string(gender), m.ages[i]));
        }
        for (Eigen::Index t = 0; t < ny; ++t) {
            if (!std::isnan(m.values(i, t))) continue;
            ++m.imputed;
            auto next = std::lower_bound(present.begin(), present.end(), t);
            if (next == present.begin()) {
                m.values(i, t) = m.values(i, *next);
            } else if (next == present.end()) {
                m.values(i, t) = m.values(i, present.back());
            } else {
                const Eigen::Index lo = *std::prev(next);
                const Eigen::Index hi = *next;
                const double w = static_cast<double>(t - lo) / static_cast<double>(hi - lo);
                m.values(i, t) = (1.0 - w) * m.values(i, lo) + w * m.values(i, hi);
            }
        }
    }
    return m;
}

namespace {

struct RankOne {
    Eigen::VectorXd b;
    Eigen::VectorXd k;
};

/// Leading singular pair of a row-centred matrix scaled so that sum(b) = 1.
/// Empty when the matrix is numerically zero relative to `scale`.
std::optional<RankOne> leading_factor(const Eigen::MatrixXd& centered, double scale) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double s1 = svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
    if (!(s1 > 1e-10 * std::max(scale, 1.0))) return std::nullopt;
    RankOne f;
    f.b = svd.matrixU().col(0);
    f.k = s1 * svd.matrixV().col(0);
    const double total = f.b.sum();
    if (std::abs(total) < 1e-12 * f.b.cwiseAbs().sum()) {
        throw Error(ErrorKind::Degenerate, "age loadings sum to zero and cannot be normalized");
    }
    f.b /= total;
    f.k *= total;
    return f;
}

} // namespace

Eigen::MatrixXd LeeCarterFit::fitted() const {
    return a.replicate(1, kappa.size()) + b * kappa.transpose();
}

LeeCarterFit lee_carter_fit(const AgeYearMatrix& m) {
    LeeCarterFit fit;
    fit.country = m.country;
    fit.gender = m.gender;
    fit.ages = m.ages;
    fit.years = m.years;
    fit.imputed = m.imputed;
    fit.a = m.values.rowwise().mean();
    const Eigen::MatrixXd centered = m.values.colwise() - fit.a;
    const auto factor = leading_factor(centered, m.values.norm());
    if (!factor) {
        throw Error(ErrorKind::Degenerate,
                    fmt::format("{} {}: centered log-rate matrix has rank 0", m.country, to_string(m.gender)));
    }
    fit.b = factor->b;
    fit.kappa = factor->k;
    // Rows are centred so sum(kappa) vanishes up to rounding; move the remainder into a.
    const double shift = fit.kappa.mean();
    fit.kappa.array() -= shift;
    fit.a += shift * fit.b;
    return fit;
}

namespace {

YearSeries as_series(const std::vector<int>& years, const Eigen::VectorXd& v) {
    YearSeries s;
    for (std::size_t t = 0; t < years.size(); ++t) s[years[t]] = v(static_cast<Eigen::Index>(t));
    return s;
}

Eigen::VectorXd forecast_vector(const std::vector<int>& years, const Eigen::VectorXd& v, int horizon) {
    const auto f = rwd_forecast(rwd_fit(as_series(years, v)), horizon);
    Eigen::VectorXd out(horizon);
    Eigen::Index h = 0;
    for (const auto& [year, value] : f) out(h++) = value;
    return out;
}

} // namespace

Eigen::MatrixXd lee_carter_forecast(const LeeCarterFit& fit, int horizon) {
    if (horizon < 1) throw Error(ErrorKind::Spec, "forecast horizon must be at least 1");
    const Eigen::VectorXd k = forecast_vector(fit.years, fit.kappa, horizon);
    return fit.a.replicate(1, horizon) + fit.b * k.transpose();
}

Eigen::MatrixXd LiLeeFit::fitted(std::size_t c) const {
    const auto T = K.size();
    return a[c].replicate(1, T) + B * K.transpose() + b[c] * k[c].transpose();
}

LiLeeFit li_lee_fit(const std::vector<AgeYearMatrix>& populations) {
    if (populations.size() < 2) throw Error(ErrorKind::Spec, "Li-Lee needs at least two populations");
    const auto& first = populations.front();
    LiLeeFit fit;
    fit.gender = first.gender;
    fit.ages = first.ages;
    fit.years = first.years;
    Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(first.values.rows(), first.values.cols());
    for (const auto& p : populations) {
        if (p.ages != first.ages || p.years != first.years) {
            throw Error(ErrorKind::Alignment, "Li-Lee populations must share age and year grids");
        }
        pooled += p.values;
        fit.countries.push_back(p.country);
    }
    pooled /= static_cast<double>(populations.size());

    const Eigen::VectorXd pooled_a = pooled.rowwise().mean();
    const auto common = leading_factor(pooled.colwise() - pooled_a, pooled.norm());
    if (!common) throw Error(ErrorKind::Degenerate, "average log-rate matrix has no period trend");
    fit.B = common->b;
    fit.K = common->k.array() - common->k.mean();

    const auto na = static_cast<Eigen::Index>(fit.ages.size());
    const auto T = static_cast<Eigen::Index>(fit.years.size());
    for (const auto& p : populations) {
        Eigen::VectorXd a = p.values.rowwise().mean();
        const Eigen::MatrixXd residual = (p.values.colwise() - a) - fit.B * fit.K.transpose();
        const auto own = leading_factor(residual, p.values.norm());
        if (own) {
            const double shift = own->k.mean();
            fit.b.push_back(own->b);
            fit.k.push_back(own->k.array() - shift);
            a += shift * own->b;
            fit.degenerate.push_back(false);
        } else {
            fit.b.push_back(Eigen::VectorXd::Constant(na, 1.0 / static_cast<double>(na)));
            fit.k.push_back(Eigen::VectorXd::Zero(T));
            fit.degenerate.push_back(true);
        }
        fit.a.push_back(std::move(a));
    }
    return fit;
}

std::vector<Eigen::MatrixXd> li_lee_forecast(const LiLeeFit& fit, int horizon) {
    if (horizon < 1) throw Error(ErrorKind::Spec, "forecast horizon must be at least 1");
    const Eigen::VectorXd K = forecast_vector(fit.years, fit.K, horizon);
    std::vector<Eigen::MatrixXd> out;
    for (std::size_t c = 0; c < fit.countries.size(); ++c) {
        const Eigen::VectorXd k = forecast_vector(fit.years, fit.k[c], horizon);
        out.push_back(fit.a[c].replicate(1, horizon) + fit.B * K.transpose() + fit.b[c] * k.transpose());
    }
    return out;
}

namespace {

void append_matrix(ForecastPanel& out, const std::string& country, Gender gender, const std::vector<int>& ages,
                   const std::vector<int>& years, const Eigen::MatrixXd& values) {
    if (values.rows() != static_cast<Eigen::Index>(ages.size()) || values.cols() != static_cast<Eigen::Index>(years.size())) {
        throw Error(ErrorKind::Alignment, "matrix shape differs from its age and year labels");
    }
    for (std::size_t i = 0; i < ages.size(); ++i) {
        for (std::size_t t = 0; t < years.size(); ++t) {
            const double v = values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
            out.records.push_back({country, gender, ages[i], years[t], v, std::exp(v)});
        }
    }
}

} // namespace

ForecastPanel lee_carter_panel(const LeeCarterFit& fit, const Eigen::MatrixXd& values, const std::vector<int>& years) {
    ForecastPanel out;
    append_matrix(out, fit.country, fit.gender, fit.ages, years, values);
    return out;
}

ForecastPanel li_lee_panel(const LiLeeFit& fit, const std::vector<Eigen::MatrixXd>& values,
                           const std::vector<int>& years) {
    ForecastPanel out;
    for (std::size_t c = 0; c < fit.countries.size(); ++c) {
        append_matrix(out, fit.countries[c], fit.gender, fit.ages, years, values.at(c));
    }
    return out;
}

void write_age_factors_csv(std::ostream& out, const LeeCarterFit& fit) {
    out << "age,a,b\n";
    for (std::size_t i = 0; i < fit.ages.size(); ++i) {
        const auto e = static_cast<Eigen::Index>(i);
        out << fmt::format("{},{:.12g},{:.12g}\n", fit.ages[i], fit.a(e), fit.b(e));
    }
}

void write_period_factors_csv(std::ostream& out, const LeeCarterFit& fit) {
    out << "year,kappa\n";
    for (std::size_t t = 0; t < fit.years.size(); ++t) {
        out << fmt::format("{},{:.12g}\n", fit.years[t], fit.kappa(static_cast<Eigen::Index>(t)));
    }
}

} // namespace mortgam
