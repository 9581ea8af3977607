#pragma once

#include "mortgam/data_ingest.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace mortgam {

enum class Segment : std::uint8_t { Low = 0, High = 1 };

std::string_view to_string(Segment segment) noexcept;

using YearSeries = std::map<int, double>;
using KctKey = std::pair<std::string, Segment>;
using KctSeries = std::map<KctKey, YearSeries>;

/// Mortality covariates: the overall mean log rate k_t and the per-country
/// segment means k_ct over ages [first, split_age] and [split_age + 1, omega].
struct CovariateSet {
    YearSeries kt;
    KctSeries kct;
    int split_age = 40;
    /// Cells absent from the panel (excluded rates); means use present cells only.
    std::size_t missing_cells = 0;

    Segment segment_of(int age) const { return age <= split_age ? Segment::Low : Segment::High; }
    /// Throws a join error when the country/year is not covered.
    double kt_at(int year) const;
    double kct_at(const std::string& country, int age, int year) const;
};

YearSeries compute_kt(const MortalityPanel& panel);
KctSeries compute_kct(const MortalityPanel& panel, int split_age);
CovariateSet compute_covariates(const MortalityPanel& panel, int split_age = 40);

/// A panel record joined with its covariates.
struct FrameRow {
    std::string country;
    Gender gender = Gender::Female;
    int age = 0;
    int year = 0;
    int cohort = 0;
    double y = 0.0;
    double kt = 0.0;
    double kct = 0.0;
};

struct ModelFrame {
    std::vector<FrameRow> rows;

    std::size_t size() const { return rows.size(); }
    bool empty() const { return rows.empty(); }
};

ModelFrame attach_covariates(const MortalityPanel& panel, const CovariateSet& covariates);

void write_kt_csv(std::ostream& out, const YearSeries& kt);
void write_kct_csv(std::ostream& out, const KctSeries& kct);

} // namespace mortgam
