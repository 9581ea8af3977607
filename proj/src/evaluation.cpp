#include "mortgam/evaluation.hpp"

#include "mortgam/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <tuple>

namespace mortgam {

std::string_view to_string(Scale scale) noexcept { return scale == Scale::Rate ? "rate" : "log"; }

PanelSplit split_panel(const MortalityPanel& panel, int cutoff) {
    if (cutoff < panel.years.first || cutoff >= panel.years.last) {
        throw Error(ErrorKind::Split, fmt::format("cutoff {} leaves an empty side of {}-{}", cutoff, panel.years.first,
                                                  panel.years.last));
    }
    PanelSplit s;
    s.train = select_years(panel, {panel.years.first, cutoff});
    s.test = select_years(panel, {cutoff + 1, panel.years.last});
    if (s.train.empty() || s.test.empty()) throw Error(ErrorKind::Split, fmt::format("cutoff {} leaves an empty side", cutoff));
    return s;
}

double mse(std::span<const double> actual_log, std::span<const double> predicted_log, Scale scale) {
    if (actual_log.size() != predicted_log.size()) {
        throw Error(ErrorKind::Alignment, fmt::format("{} actual values against {} predictions", actual_log.size(),
                                                      predicted_log.size()));
    }
    if (actual_log.empty()) throw Error(ErrorKind::Alignment, "no aligned values");
    double total = 0.0;
    for (std::size_t i = 0; i < actual_log.size(); ++i) {
        const double a = scale == Scale::Rate ? std::exp(actual_log[i]) : actual_log[i];
        const double p = scale == Scale::Rate ? std::exp(predicted_log[i]) : predicted_log[i];
        total += (a - p) * (a - p);
    }
    return total / static_cast<double>(actual_log.size());
}

double panel_mse(const MortalityPanel& actual, const ForecastPanel& predicted, const std::string& country,
                 Gender gender, Scale scale) {
    std::map<std::pair<int, int>, double> lookup;
    for (const auto& r : predicted.records) {
        if (r.country == country && r.gender == gender) lookup[{r.age, r.year}] = r.log_rate;
    }
    std::vector<double> a;
    std::vector<double> p;
    for (const auto& r : actual.records) {
        if (r.country != country || r.gender != gender) continue;
        auto it = lookup.find({r.age, r.year});
        if (it == lookup.end()) {
            throw Error(ErrorKind::Alignment, fmt::format("no prediction for {} {} age {} year {}", country,
                                                          to_string(gender), r.age, r.year));
        }
        a.push_back(r.log_rate);
        p.push_back(it->second);
    }
    return mse(a, p, scale);
}

std::vector<MseRow> score_model(const std::string& model, const MortalityPanel& train, const MortalityPanel& test,
                                const ForecastPanel& fitted, const ForecastPanel& forecast) {
    std::vector<MseRow> rows;
    for (const auto& country : train.countries) {
        for (Gender g : train.genders) {
            for (Scale s : {Scale::Rate, Scale::Log}) {
                rows.push_back({country, g, model, s, panel_mse(train, fitted, country, g, s),
                                panel_mse(test, forecast, country, g, s)});
            }
        }
    }
    return rows;
}

EvalReport compare(const std::vector<MseRow>& gamm, const std::vector<MseRow>& baseline) {
    EvalReport report;
    report.rows = gamm;
    if (baseline.empty()) {
        report.warnings.push_back("no baseline input: report has GAMM rows only");
        return report;
    }
    using Key = std::tuple<std::string, Gender, Scale>;
    std::map<Key, const MseRow*> base;
    for (const auto& r : baseline) base[{r.country, r.gender, r.scale}] = &r;
    std::set<Key> matched;
    for (const auto& r : gamm) {
        const Key key{r.country, r.gender, r.scale};
        auto it = base.find(key);
        if (it == base.end()) {
            throw Error(ErrorKind::Join, fmt::format("baseline has no row for {} {} ({})", r.country, to_string(r.gender),
                                                     to_string(r.scale)));
        }
        matched.insert(key);
        report.ratios.push_back({r.country, r.gender, it->second->model, r.scale, it->second->test_mse, r.test_mse,
                                 it->second->test_mse / r.test_mse});
    }
    for (const auto& [key, row] : base) {
        if (!matched.contains(key)) {
            throw Error(ErrorKind::Join, fmt::format("GAMM has no row for {} {}", row->country, to_string(row->gender)));
        }
    }
    report.rows.insert(report.rows.end(), baseline.begin(), baseline.end());
    return report;
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
    out << "kind,country,gender,model,scale,train_mse,test_mse,ratio\n";
    for (const auto& r : report.rows) {
        out << fmt::format("mse,{},{},{},{},{:.17g},{:.17g},\n", r.country, to_string(r.gender), r.model,
                           to_string(r.scale), r.train_mse, r.test_mse);
    }
    for (const auto& r : report.ratios) {
        out << fmt::format("ratio,{},{},{}/GAMM,{},,,{:.17g}\n", r.country, to_string(r.gender), r.baseline,
                           to_string(r.scale), r.ratio);
    }
}

void write_report_table(std::ostream& out, const EvalReport& report) {
    std::vector<std::pair<std::string, Gender>> pops;
    std::vector<std::string> models;
    for (const auto& r : report.rows) {
        const std::pair<std::string, Gender> p{r.country, r.gender};
        if (std::find(pops.begin(), pops.end(), p) == pops.end()) pops.push_back(p);
        if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    }
    auto header = [&](std::string_view title) {
        out << fmt::format("{:<26}", title);
        for (const auto& [c, g] : pops) out << fmt::format("{:>14}", fmt::format("{}-{}", c, to_string(g)));
        out << '\n';
    };
    for (Scale s : {Scale::Rate, Scale::Log}) {
        if (std::none_of(report.rows.begin(), report.rows.end(), [&](const MseRow& r) { return r.scale == s; })) continue;
        header(fmt::format("MSE ({} scale)", to_string(s)));
        for (const auto& m : models) {
            for (int test = 0; test < 2; ++test) {
                out << fmt::format("{:<26}", fmt::format("{} {} set", m, test ? "test" : "train"));
                for (const auto& [c, g] : pops) {
                    std::string cell = "-";
                    for (const auto& r : report.rows) {
                        if (r.model == m && r.country == c && r.gender == g && r.scale == s) {
                            cell = fmt::format("{:.3e}", test ? r.test_mse : r.train_mse);
                        }
                    }
                    out << fmt::format("{:>14}", cell);
                }
                out << '\n';
            }
        }
        std::string baseline;
        for (const auto& r : report.ratios) baseline = r.baseline;
        if (!baseline.empty()) {
            out << fmt::format("{:<26}", fmt::format("{} test/GAMM test", baseline));
            for (const auto& [c, g] : pops) {
                std::string cell = "-";
                for (const auto& r : report.ratios) {
                    if (r.country == c && r.gender == g && r.scale == s) cell = fmt::format("{:.3f}", r.ratio);
                }
                out << fmt::format("{:>14}", cell);
            }
            out << '\n';
        }
        out << '\n';
    }
    for (const auto& w : report.warnings) out << "warning: " << w << '\n';
}

} // namespace mortgam
