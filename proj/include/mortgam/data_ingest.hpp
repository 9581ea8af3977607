#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mortgam {

enum class Gender : std::uint8_t { Female = 0, Male = 1 };

std::string_view to_string(Gender gender) noexcept;
Gender parse_gender(std::string_view text);

inline constexpr int kMaxHmdAge = 110;

/// One line of an HMD Mx_1x1 file. Missing rates ("." in the file) are empty.
struct MxRow {
    int year = 0;
    int age = 0;
    std::optional<double> female;
    std::optional<double> male;

    std::optional<double> rate(Gender gender) const {
        return gender == Gender::Female ? female : male;
    }
};

/// Death rates of one country, rows sorted by (year, age).
struct MortalityTable {
    std::string country;
    std::vector<MxRow> rows;

    const MxRow* find(int year, int age) const;
};

/// Parses the whitespace-delimited HMD layout: title lines, a header starting
/// with "Year", then `Year Age Female Male Total` rows. "110+" maps to 110.
MortalityTable parse_hmd_mx(std::istream& in, std::string country);
MortalityTable read_hmd_mx_file(const std::filesystem::path& path, std::string country);

/// Conventional file name for a country inside a data directory,
/// e.g. `AUT.Mx_1x1.txt`.
std::filesystem::path hmd_file_path(const std::filesystem::path& dir, std::string_view country);

struct YearRange {
    int first = 0;
    int last = 0;

    bool contains(int year) const { return year >= first && year <= last; }
    int size() const { return last - first + 1; }
};

struct AgeRange {
    int first = 0;
    int last = 100;

    bool contains(int age) const { return age >= first && age <= last; }
    int size() const { return last - first + 1; }
};

struct PanelRecord {
    std::string country;
    Gender gender = Gender::Female;
    int age = 0;
    int year = 0;
    double rate = 0.0;
    double log_rate = 0.0;
    int cohort = 0;
};

/// Long-format log death rates. Records are ordered by
/// (country position, gender, age, year) with year innermost.
struct MortalityPanel {
    std::vector<PanelRecord> records;
    std::vector<std::string> countries;
    std::vector<Gender> genders{Gender::Female, Gender::Male};
    AgeRange ages;
    YearRange years;
    /// Cells inside the requested ranges that were dropped (missing or zero rate).
    std::size_t excluded = 0;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
    int omega() const { return ages.last; }
    int country_index(std::string_view country) const;
};

MortalityPanel build_panel(std::span<const MortalityTable> tables, YearRange years, AgeRange ages);

/// Restricts a panel to one (country, gender) population.
MortalityPanel select_population(const MortalityPanel& panel, std::string_view country, Gender gender);

/// Keeps records whose year lies in `years`; metadata is narrowed accordingly.
MortalityPanel select_years(const MortalityPanel& panel, YearRange years);

/// Log-rate generator `log m = a_x + b_x * k_t + noise` for one population.
struct SyntheticPopulation {
    std::string country;
    Gender gender = Gender::Female;
    std::vector<double> a; ///< per age, starting at GeneratorSpec::first_age
    std::vector<double> b; ///< per age
    std::vector<double> k; ///< per year, starting at GeneratorSpec::first_year
};

struct GeneratorSpec {
    std::vector<SyntheticPopulation> populations;
    int first_age = 0;
    int first_year = 1961;
    /// Standard deviation of the Gaussian noise on the log scale. Either one
    /// value for all ages or one value per age.
    std::vector<double> noise_sd{0.0};
};

MortalityPanel synth_panel(const GeneratorSpec& spec, std::uint64_t seed);

/// Shared a_x, b_x, k_t for every (country, gender) combination.
GeneratorSpec rank_one_spec(std::vector<std::string> countries, std::vector<double> a, std::vector<double> b,
                            std::vector<double> k, int first_age, int first_year, double noise_sd);

/// Demographically shaped generator: Siler-type age schedules, male excess,
/// country offsets, drifting period indices and Poisson-like noise that is
/// largest where deaths are rare. Used for table-scale runs without HMD files.
GeneratorSpec hmd_like_spec(std::vector<std::string> countries, YearRange years, int omega, std::uint64_t seed);

/// Writes the panel as canonical CSV:
/// `country,gender,age,year,rate,log_rate,cohort`.
void write_panel_csv(std::ostream& out, const MortalityPanel& panel);

/// Writes one country of a panel in HMD Mx_1x1 layout (missing cells as ".").
void write_hmd_mx(std::ostream& out, const MortalityPanel& panel, std::string_view country);

} // namespace mortgam
