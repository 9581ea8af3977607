#include "mortgam/data_ingest.hpp"

#include "mortgam/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_set>

namespace mortgam {

std::string_view to_string(Gender gender) noexcept {
    return gender == Gender::Female ? "female" : "male";
}

Gender parse_gender(std::string_view text) {
    if (text == "female" || text == "Female" || text == "F" || text == "f") return Gender::Female;
    if (text == "male" || text == "Male" || text == "M" || text == "m") return Gender::Male;
    throw Error(ErrorKind::Parse, fmt::format("unknown gender '{}'", text));
}

const MxRow* MortalityTable::find(int year, int age) const {
    auto it = std::lower_bound(rows.begin(), rows.end(), std::pair{year, age}, [](const MxRow& row, const auto& key) {
        return std::pair{row.year, row.age} < key;
    });
    if (it == rows.end() || it->year != year || it->age != age) return nullptr;
    return &*it;
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) tokens.push_back(line.substr(i, j - i));
        i = j;
    }
    return tokens;
}

bool all_digits(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

int parse_int(std::string_view token, std::size_t line_no, std::string_view what) {
    int value = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || ptr != token.data() + token.size()) {
        throw Error(ErrorKind::Parse, fmt::format("line {}: malformed {} '{}'", line_no, what, token));
    }
    return value;
}

std::optional<double> parse_rate(std::string_view token, std::size_t line_no) {
    if (token == ".") return std::nullopt;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(value) || value < 0.0) {
        throw Error(ErrorKind::Parse, fmt::format("line {}: malformed rate '{}'", line_no, token));
    }
    return value;
}

} // namespace

MortalityTable parse_hmd_mx(std::istream& in, std::string country) {
    MortalityTable table;
    table.country = std::move(country);

    std::string line;
    std::size_t line_no = 0;
    bool in_body = false;
    while (std::getline(in, line)) {
        ++line_no;
        auto tokens = split_ws(line);
        if (tokens.empty()) continue;
        if (tokens.front() == "Year") {
            in_body = true;
            continue;
        }
        // Title lines precede the header; a bare data line also opens the body.
        if (!in_body) {
            if (tokens.size() != 5 || !all_digits(tokens.front())) continue;
            in_body = true;
        }
        if (tokens.size() != 5) {
            throw Error(ErrorKind::Parse, fmt::format("line {}: expected 5 columns, found {}", line_no, tokens.size()));
        }
        MxRow row;
        row.year = parse_int(tokens[0], line_no, "year");
        std::string_view age_token = tokens[1];
        if (age_token.ends_with('+')) age_token.remove_suffix(1);
        row.age = parse_int(age_token, line_no, "age");
        if (row.age < 0 || row.age > kMaxHmdAge) {
            throw Error(ErrorKind::Parse, fmt::format("line {}: age {} outside 0..{}", line_no, row.age, kMaxHmdAge));
        }
        row.female = parse_rate(tokens[2], line_no);
        row.male = parse_rate(tokens[3], line_no);
        parse_rate(tokens[4], line_no);
        table.rows.push_back(row);
    }

    std::stable_sort(table.rows.begin(), table.rows.end(), [](const MxRow& a, const MxRow& b) {
        return std::pair{a.year, a.age} < std::pair{b.year, b.age};
    });
    for (std::size_t i = 1; i < table.rows.size(); ++i) {
        if (table.rows[i].year == table.rows[i - 1].year && table.rows[i].age == table.rows[i - 1].age) {
            throw Error(ErrorKind::DuplicateKey, fmt::format("{}: duplicate (year {}, age {})", table.country,
                                                             table.rows[i].year, table.rows[i].age));
        }
    }
    return table;
}

MortalityTable read_hmd_mx_file(const std::filesystem::path& path, std::string country) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, fmt::format("cannot open '{}'", path.string()));
    return parse_hmd_mx(in, std::move(country));
}

std::filesystem::path hmd_file_path(const std::filesystem::path& dir, std::string_view country) {
    return dir / fmt::format("{}.Mx_1x1.txt", country);
}

int MortalityPanel::country_index(std::string_view country) const {
    auto it = std::find(countries.begin(), countries.end(), country);
    return it == countries.end() ? -1 : static_cast<int>(it - countries.begin());
}

MortalityPanel build_panel(std::span<const MortalityTable> tables, YearRange years, AgeRange ages) {
    if (years.first > years.last || ages.first > ages.last) {
        throw Error(ErrorKind::Coverage, "empty year or age range requested");
    }
    MortalityPanel panel;
    panel.years = years;
    panel.ages = ages;

    std::unordered_set<std::string> seen;
    for (const auto& table : tables) {
        if (!seen.insert(table.country).second) {
            throw Error(ErrorKind::DuplicateKey, fmt::format("country {} given twice", table.country));
        }
        panel.countries.push_back(table.country);
        for (Gender gender : panel.genders) {
            for (int age = ages.first; age <= ages.last; ++age) {
                for (int year = years.first; year <= years.last; ++year) {
                    const MxRow* row = table.find(year, age);
                    if (row == nullptr) {
                        throw Error(ErrorKind::Coverage,
                                    fmt::format("{}: no row for year {}, age {}", table.country, year, age));
                    }
                    auto rate = row->rate(gender);
                    if (!rate || *rate <= 0.0) {
                        ++panel.excluded;
                        continue;
                    }
                    panel.records.push_back(
                        PanelRecord{table.country, gender, age, year, *rate, std::log(*rate), year - age});
                }
            }
        }
    }
    if (panel.records.empty()) throw Error(ErrorKind::EmptyPanel, "no positive rates in the requested ranges");
    return panel;
}

MortalityPanel select_population(const MortalityPanel& panel, std::string_view country, Gender gender) {
    MortalityPanel out;
    out.ages = panel.ages;
    out.years = panel.years;
    out.countries = {std::string(country)};
    out.genders = {gender};
    for (const auto& r : panel.records) {
        if (r.country == country && r.gender == gender) out.records.push_back(r);
    }
    if (out.records.empty()) {
        throw Error(ErrorKind::EmptyPanel, fmt::format("no records for {} {}", country, to_string(gender)));
    }
    return out;
}

MortalityPanel select_years(const MortalityPanel& panel, YearRange years) {
    MortalityPanel out = panel;
    out.records.clear();
    out.years = years;
    for (const auto& r : panel.records) {
        if (years.contains(r.year)) out.records.push_back(r);
    }
    return out;
}

MortalityPanel synth_panel(const GeneratorSpec& spec, std::uint64_t seed) {
    MortalityPanel panel;
    if (spec.populations.empty()) throw Error(ErrorKind::EmptyPanel, "generator has no populations");

    const auto& first = spec.populations.front();
    const int n_ages = static_cast<int>(first.a.size());
    const int n_years = static_cast<int>(first.k.size());
    panel.ages = {spec.first_age, spec.first_age + n_ages - 1};
    panel.years = {spec.first_year, spec.first_year + n_years - 1};
    panel.genders.clear();

    // Population order: countries by first appearance, then gender.
    std::vector<const SyntheticPopulation*> order;
    for (const auto& pop : spec.populations) {
        if (static_cast<int>(pop.a.size()) != n_ages || static_cast<int>(pop.b.size()) != n_ages ||
            static_cast<int>(pop.k.size()) != n_years) {
            throw Error(ErrorKind::Spec, "generator populations must share age and year grids");
        }
        if (panel.country_index(pop.country) < 0) panel.countries.push_back(pop.country);
        if (std::find(panel.genders.begin(), panel.genders.end(), pop.gender) == panel.genders.end()) {
            panel.genders.push_back(pop.gender);
        }
        order.push_back(&pop);
    }
    std::sort(panel.genders.begin(), panel.genders.end());
    std::stable_sort(order.begin(), order.end(), [&](const auto* a, const auto* b) {
        return std::pair{panel.country_index(a->country), a->gender} <
               std::pair{panel.country_index(b->country), b->gender};
    });

    if (spec.noise_sd.size() != 1 && static_cast<int>(spec.noise_sd.size()) != n_ages) {
        throw Error(ErrorKind::Spec, "noise_sd must hold one value or one value per age");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto* pop : order) {
        for (int ia = 0; ia < n_ages; ++ia) {
            const double sd = spec.noise_sd.size() == 1 ? spec.noise_sd[0] : spec.noise_sd[ia];
            for (int it = 0; it < n_years; ++it) {
                double log_rate = pop->a[ia] + pop->b[ia] * pop->k[it];
                if (sd > 0.0) log_rate += sd * normal(rng);
                const int age = spec.first_age + ia;
                const int year = spec.first_year + it;
                panel.records.push_back(PanelRecord{pop->country, pop->gender, age, year, std::exp(log_rate),
                                                    log_rate, year - age});
            }
        }
    }
    return panel;
}

GeneratorSpec rank_one_spec(std::vector<std::string> countries, std::vector<double> a, std::vector<double> b,
                            std::vector<double> k, int first_age, int first_year, double noise_sd) {
    GeneratorSpec spec;
    spec.first_age = first_age;
    spec.first_year = first_year;
    spec.noise_sd = {noise_sd};
    for (const auto& c : countries) {
        for (Gender g : {Gender::Female, Gender::Male}) spec.populations.push_back({c, g, a, b, k});
    }
    return spec;
}

GeneratorSpec hmd_like_spec(std::vector<std::string> countries, YearRange years, int omega, std::uint64_t seed) {
    GeneratorSpec spec;
    spec.first_age = 0;
    spec.first_year = years.first;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal(0.0, 1.0);

    const int n_ages = omega + 1;
    const int n_years = years.size();

    auto siler = [](double x, bool male, double country_shift) {
        const double infant = 0.025 * std::exp(-1.4 * x);
        const double background = 1.5e-4;
        const double hump = (male ? 9e-4 : 2e-4) * std::exp(-std::pow((x - 22.0) / 7.0, 2));
        const double senescent = (male ? 4.5e-5 : 2.2e-5) * std::exp(0.094 * x);
        return (infant + background + hump + senescent) * std::exp(country_shift * std::min(1.0, x / 40.0));
    };

    std::vector<double> noise(n_ages);
    for (int x = 0; x < n_ages; ++x) {
        const double exposure = 45000.0 * std::exp(-std::pow(std::max(0.0, x - 45.0) / 22.0, 2));
        const double deaths = std::max(1.0, siler(x, false, 0.0) * exposure);
        double sd = std::min(0.45, 1.0 / std::sqrt(deaths));
        if (x >= 80) sd *= 0.35; // old-age rates are smoothed at the source
        noise[x] = 0.004 + sd;
    }
    spec.noise_sd = noise;

    for (std::size_t ci = 0; ci < countries.size(); ++ci) {
        const double shift = 0.22 * static_cast<double>(ci);
        for (Gender g : {Gender::Female, Gender::Male}) {
            const bool male = g == Gender::Male;
            SyntheticPopulation pop;
            pop.country = countries[ci];
            pop.gender = g;
            pop.a.resize(n_ages);
            pop.b.resize(n_ages);
            double bsum = 0.0;
            for (int x = 0; x < n_ages; ++x) {
                pop.a[x] = std::log(siler(x, male, shift));
                pop.b[x] = 1.2 + 2.0 * std::exp(-x / 12.0) + 0.9 * std::exp(-std::pow((x - 62.0) / 16.0, 2)) -
                           0.6 * std::max(0.0, (x - 80.0) / 20.0);
                bsum += pop.b[x];
            }
            for (auto& v : pop.b) v /= bsum;
            // Stalled improvement before a break year for odd countries, steady otherwise.
            const double drift = (male ? 1.7 : 2.1) * n_ages / 100.0;
            const int break_year = years.first + (2 * n_years) / 3;
            pop.k.resize(n_years);
            double level = 0.0;
            double walk = 0.0;
            for (int t = 0; t < n_years; ++t) {
                const int year = years.first + t;
                double step = drift;
                if (ci % 2 == 1) step = year < break_year ? 0.25 * drift : 1.6 * drift;
                if (t > 0) level -= step;
                walk += 0.35 * normal(rng);
                pop.k[t] = level + walk;
            }
            const double kmean = [&] {
                double s = 0.0;
                for (double v : pop.k) s += v;
                return s / n_years;
            }();
            for (auto& v : pop.k) v -= kmean;
            spec.populations.push_back(std::move(pop));
        }
    }
    return spec;
}

void write_panel_csv(std::ostream& out, const MortalityPanel& panel) {
    out << "country,gender,age,year,rate,log_rate,cohort\n";
    for (const auto& r : panel.records) {
        out << fmt::format("{},{},{},{},{:.12g},{:.12g},{}\n", r.country, to_string(r.gender), r.age, r.year, r.rate,
                           r.log_rate, r.cohort);
    }
}

void write_hmd_mx(std::ostream& out, const MortalityPanel& panel, std::string_view country) {
    std::map<std::pair<int, int>, std::pair<std::optional<double>, std::optional<double>>> cells;
    for (const auto& r : panel.records) {
        if (r.country != country) continue;
        auto& cell = cells[{r.year, r.age}];
        (r.gender == Gender::Female ? cell.first : cell.second) = r.rate;
    }
    out << fmt::format("{}, Death rates (period 1x1), synthetic\n\n", country);
    out << "  Year          Age             Female            Male           Total\n";
    auto field = [](const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : std::string("."); };
    for (int year = panel.years.first; year <= panel.years.last; ++year) {
        for (int age = panel.ages.first; age <= panel.ages.last; ++age) {
            auto it = cells.find({year, age});
            std::optional<double> f, m, total;
            if (it != cells.end()) {
                f = it->second.first;
                m = it->second.second;
            }
            if (f && m) total = 0.5 * (*f + *m);
            const std::string age_label = age == kMaxHmdAge ? "110+" : std::to_string(age);
            out << fmt::format("  {:4d}  {:>11}  {:>17}  {:>15}  {:>14}\n", year, age_label, field(f), field(m),
                               field(total));
        }
    }
}

} // namespace mortgam
