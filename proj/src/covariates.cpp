#include "mortgam/covariates.hpp"

#include "mortgam/errors.hpp"

#include <fmt/format.h>

#include <ostream>

namespace mortgam {

std::string_view to_string(Segment segment) noexcept {
    return segment == Segment::Low ? "low" : "high";
}

double CovariateSet::kt_at(int year) const {
    auto it = kt.find(year);
    if (it == kt.end()) throw Error(ErrorKind::Join, fmt::format("no k_t value for year {}", year));
    return it->second;
}

double CovariateSet::kct_at(const std::string& country, int age, int year) const {
    auto series = kct.find({country, segment_of(age)});
    if (series == kct.end()) {
        throw Error(ErrorKind::Join, fmt::format("no k_ct series for {} ({})", country, to_string(segment_of(age))));
    }
    auto it = series->second.find(year);
    if (it == series->second.end()) {
        throw Error(ErrorKind::Join, fmt::format("no k_ct value for {} in {}", country, year));
    }
    return it->second;
}

namespace {

struct Mean {
    double sum = 0.0;
    std::size_t count = 0;
    void add(double v) {
        sum += v;
        ++count;
    }
    double value() const { return sum / static_cast<double>(count); }
};

} // namespace

YearSeries compute_kt(const MortalityPanel& panel) {
    if (panel.empty()) throw Error(ErrorKind::EmptyPanel, "cannot compute k_t of an empty panel");
    std::map<int, Mean> acc;
    for (const auto& r : panel.records) acc[r.year].add(r.log_rate);
    YearSeries kt;
    for (int year = panel.years.first; year <= panel.years.last; ++year) {
        auto it = acc.find(year);
        if (it == acc.end()) throw Error(ErrorKind::MissingYear, fmt::format("no records in year {}", year));
        kt[year] = it->second.value();
    }
    return kt;
}

KctSeries compute_kct(const MortalityPanel& panel, int split_age) {
    if (split_age < panel.ages.first || split_age >= panel.omega()) {
        throw Error(ErrorKind::Spec, fmt::format("split age {} must lie in [{}, {})", split_age, panel.ages.first,
                                                 panel.omega()));
    }
    std::map<std::tuple<std::string, Segment, int>, Mean> acc;
    for (const auto& r : panel.records) {
        const Segment s = r.age <= split_age ? Segment::Low : Segment::High;
        acc[{r.country, s, r.year}].add(r.log_rate);
    }
    KctSeries kct;
    for (const auto& country : panel.countries) {
        for (Segment s : {Segment::Low, Segment::High}) {
            auto& series = kct[{country, s}];
            for (int year = panel.years.first; year <= panel.years.last; ++year) {
                auto it = acc.find({country, s, year});
                if (it == acc.end()) {
                    throw Error(ErrorKind::MissingSegment,
                                fmt::format("{} {} segment has no records in {}", country, to_string(s), year));
                }
                series[year] = it->second.value();
            }
        }
    }
    return kct;
}

CovariateSet compute_covariates(const MortalityPanel& panel, int split_age) {
    CovariateSet set;
    set.split_age = split_age;
    set.kt = compute_kt(panel);
    set.kct = compute_kct(panel, split_age);
    const std::size_t expected = panel.countries.size() * panel.genders.size() *
                                 static_cast<std::size_t>(panel.ages.size()) *
                                 static_cast<std::size_t>(panel.years.size());
    set.missing_cells = expected > panel.size() ? expected - panel.size() : 0;
    return set;
}

ModelFrame attach_covariates(const MortalityPanel& panel, const CovariateSet& covariates) {
    ModelFrame frame;
    frame.rows.reserve(panel.size());
    for (const auto& r : panel.records) {
        FrameRow row;
        row.country = r.country;
        row.gender = r.gender;
        row.age = r.age;
        row.year = r.year;
        row.cohort = r.cohort;
        row.y = r.log_rate;
        row.kt = covariates.kt_at(r.year);
        row.kct = covariates.kct.empty() ? 0.0 : covariates.kct_at(r.country, r.age, r.year);
        frame.rows.push_back(std::move(row));
    }
    return frame;
}

void write_kt_csv(std::ostream& out, const YearSeries& kt) {
    out << "year,kt\n";
    for (const auto& [year, value] : kt) out << fmt::format("{},{:.12g}\n", year, value);
}

void write_kct_csv(std::ostream& out, const KctSeries& kct) {
    out << "country,segment,year,kct\n";
    for (const auto& [key, series] : kct) {
        for (const auto& [year, value] : series) {
            out << fmt::format("{},{},{},{:.12g}\n", key.first, to_string(key.second), year, value);
        }
    }
}

} // namespace mortgam
