#include "mortgam/config.hpp"

#include "mortgam/errors.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace mortgam {

using json = nlohmann::json;

std::string_view to_string(RunMode mode) noexcept { return mode == RunMode::Multi ? "multi" : "single"; }
std::string_view to_string(DataSource source) noexcept { return source == DataSource::Hmd ? "hmd" : "synthetic"; }

namespace {

[[noreturn]] void invalid(std::string_view field, const std::string& why) {
    throw Error(ErrorKind::Config, fmt::format("config field '{}': {}", field, why));
}

} // namespace

void RunConfig::validate() const {
    if (countries.empty()) invalid("countries", "at least one country code is required");
    std::set<std::string> seen;
    for (const auto& c : countries) {
        if (c.empty()) invalid("countries", "empty country code");
        if (!seen.insert(c).second) invalid("countries", fmt::format("'{}' listed twice", c));
    }
    if (years.first > years.last) invalid("years", fmt::format("{} > {}", years.first, years.last));
    if (cutoff < years.first || cutoff >= years.last) {
        invalid("cutoff", fmt::format("{} must lie in [{}, {}) so both sides of the split are non-empty", cutoff,
                                      years.first, years.last));
    }
    if (cutoff - years.first < 2) invalid("cutoff", "training needs at least 3 years for the random walks");
    if (horizon < 1) invalid("horizon", fmt::format("{} must be at least 1", horizon));
    if (omega < 1 || omega > kMaxHmdAge) invalid("omega", fmt::format("{} must lie in [1, {}]", omega, kMaxHmdAge));
    if (split_age < 0 || split_age >= omega) invalid("split_age", fmt::format("{} must lie in [0, omega)", split_age));
    if (basis.kct < 3) invalid("basis.kct", "must be at least 3");
    if (basis.cohort < 3) invalid("basis.cohort", "must be at least 3");
    if (basis.factor_smooth < 3) invalid("basis.factor_smooth", "must be at least 3");
    if (single_k < 3) invalid("basis.single_factor_smooth", "must be at least 3");
    if (!(shrinkage_epsilon > 0.0)) invalid("shrinkage_epsilon", "must be positive");
    if (!(trim_threshold > 0.0)) invalid("trim.threshold", "must be positive");
    if (!(fit.reml.rho_min < fit.reml.rho_max)) invalid("optimizer.rho_min", "must be below rho_max");
    if (fit.rho0 < fit.reml.rho_min || fit.rho0 > fit.reml.rho_max) invalid("optimizer.rho0", "outside the box");
    if (fit.reml.max_iterations < 1) invalid("optimizer.max_iterations", "must be at least 1");
    if (!(fit.reml.max_step > 0.0)) invalid("optimizer.max_step", "must be positive");
    if (!(fit.reml.score_tolerance > 0.0)) invalid("optimizer.score_tolerance", "must be positive");
    if (!(fit.reml.gradient_tolerance > 0.0)) invalid("optimizer.gradient_tolerance", "must be positive");
    if (!(fit.reml.relative_tolerance >= 0.0)) invalid("optimizer.relative_tolerance", "must not be negative");
    if (max_lag < 1) invalid("diagnostics.max_lag", "must be at least 1");
    if (curve_grid < 2) invalid("diagnostics.curve_grid", "must be at least 2");
    for (int a : scatter_ages) {
        if (a < 0 || a > omega) invalid("diagnostics.scatter_ages", fmt::format("age {} outside [0, omega]", a));
    }
    if (workers < 1) invalid("workers", "must be at least 1");
    if (out.empty()) invalid("out", "empty output directory");
}

namespace {

void check_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
    if (!obj.is_object()) invalid(where, "expected an object");
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (auto a : allowed) ok = ok || key == a;
        if (!ok) invalid(where.empty() ? std::string_view(key) : where, fmt::format("unknown key '{}'", key));
    }
}

template <typename T>
void read(const json& obj, const char* key, std::string_view field, T& target) {
    if (!obj.contains(key)) return;
    try {
        target = obj.at(key).get<T>();
    } catch (const json::exception&) {
        invalid(field, fmt::format("wrong type ({})", obj.at(key).type_name()));
    }
}

} // namespace

RunConfig config_from_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Config, fmt::format("config is not valid JSON: {}", e.what()));
    }
    check_keys(doc, "", {"schema", "data", "countries", "years", "omega", "cutoff", "horizon", "split_age", "mode",
                         "basis", "shrinkage_epsilon", "trim", "optimizer", "diagnostics", "out", "workers", "seed"});
    const auto schema = doc.value("schema", std::string(kConfigSchema));
    if (schema != kConfigSchema) {
        throw Error(ErrorKind::Version, fmt::format("config schema '{}' is not supported (expected '{}')", schema,
                                                    kConfigSchema));
    }
    RunConfig c;
    if (doc.contains("data")) {
        const auto& d = doc.at("data");
        check_keys(d, "data", {"source", "dir"});
        std::string source = std::string(to_string(c.source));
        read(d, "source", "data.source", source);
        if (source == "hmd") {
            c.source = DataSource::Hmd;
        } else if (source == "synthetic") {
            c.source = DataSource::Synthetic;
        } else {
            invalid("data.source", fmt::format("'{}' is not hmd or synthetic", source));
        }
        std::string dir = c.data_dir.string();
        read(d, "dir", "data.dir", dir);
        c.data_dir = dir;
    }
    read(doc, "countries", "countries", c.countries);
    if (doc.contains("years")) {
        std::vector<int> y;
        read(doc, "years", "years", y);
        if (y.size() != 2) invalid("years", "expected [first, last]");
        c.years = {y[0], y[1]};
    }
    read(doc, "omega", "omega", c.omega);
    read(doc, "cutoff", "cutoff", c.cutoff);
    read(doc, "horizon", "horizon", c.horizon);
    read(doc, "split_age", "split_age", c.split_age);
    if (doc.contains("mode")) {
        std::string mode;
        read(doc, "mode", "mode", mode);
        if (mode == "multi") {
            c.mode = RunMode::Multi;
        } else if (mode == "single") {
            c.mode = RunMode::Single;
        } else {
            invalid("mode", fmt::format("'{}' is not multi or single", mode));
        }
    }
    if (doc.contains("basis")) {
        const auto& b = doc.at("basis");
        check_keys(b, "basis", {"kct", "cohort", "factor_smooth", "single_factor_smooth"});
        read(b, "kct", "basis.kct", c.basis.kct);
        read(b, "cohort", "basis.cohort", c.basis.cohort);
        read(b, "factor_smooth", "basis.factor_smooth", c.basis.factor_smooth);
        read(b, "single_factor_smooth", "basis.single_factor_smooth", c.single_k);
    }
    read(doc, "shrinkage_epsilon", "shrinkage_epsilon", c.shrinkage_epsilon);
    if (doc.contains("trim")) {
        const auto& t = doc.at("trim");
        check_keys(t, "trim", {"threshold", "multi", "single"});
        read(t, "threshold", "trim.threshold", c.trim_threshold);
        read(t, "multi", "trim.multi", c.trim_multi);
        read(t, "single", "trim.single", c.trim_single);
    }
    if (doc.contains("optimizer")) {
        const auto& o = doc.at("optimizer");
        check_keys(o, "optimizer", {"rho0", "rho_min", "rho_max", "max_iterations", "score_tolerance",
                                    "gradient_tolerance", "relative_tolerance", "max_step", "gradient", "search"});
        read(o, "rho0", "optimizer.rho0", c.fit.rho0);
        read(o, "rho_min", "optimizer.rho_min", c.fit.reml.rho_min);
        read(o, "rho_max", "optimizer.rho_max", c.fit.reml.rho_max);
        read(o, "max_iterations", "optimizer.max_iterations", c.fit.reml.max_iterations);
        read(o, "score_tolerance", "optimizer.score_tolerance", c.fit.reml.score_tolerance);
        read(o, "gradient_tolerance", "optimizer.gradient_tolerance", c.fit.reml.gradient_tolerance);
        read(o, "relative_tolerance", "optimizer.relative_tolerance", c.fit.reml.relative_tolerance);
        read(o, "max_step", "optimizer.max_step", c.fit.reml.max_step);
        if (o.contains("gradient")) {
            std::string g;
            read(o, "gradient", "optimizer.gradient", g);
            if (g == "analytic") {
                c.fit.reml.gradient = GradientMethod::Analytic;
            } else if (g == "finite_difference") {
                c.fit.reml.gradient = GradientMethod::FiniteDifference;
            } else {
                invalid("optimizer.gradient", fmt::format("'{}' is not analytic or finite_difference", g));
            }
        }
        if (o.contains("search")) {
            std::string s;
            read(o, "search", "optimizer.search", s);
            if (s == "newton") {
                c.fit.reml.search = SearchMethod::Newton;
            } else if (s == "bfgs") {
                c.fit.reml.search = SearchMethod::Bfgs;
            } else {
                invalid("optimizer.search", fmt::format("'{}' is not newton or bfgs", s));
            }
        }
    }
    if (doc.contains("diagnostics")) {
        const auto& d = doc.at("diagnostics");
        check_keys(d, "diagnostics", {"max_lag", "scatter_ages", "curve_grid"});
        read(d, "max_lag", "diagnostics.max_lag", c.max_lag);
        read(d, "scatter_ages", "diagnostics.scatter_ages", c.scatter_ages);
        read(d, "curve_grid", "diagnostics.curve_grid", c.curve_grid);
    }
    if (doc.contains("out")) {
        std::string out;
        read(doc, "out", "out", out);
        c.out = out;
    }
    read(doc, "workers", "workers", c.workers);
    read(doc, "seed", "seed", c.seed);
    return c;
}

std::string config_to_json(const RunConfig& c) {
    json doc = {
        {"schema", kConfigSchema},
        {"data", {{"source", to_string(c.source)}, {"dir", c.data_dir.string()}}},
        {"countries", c.countries},
        {"years", {c.years.first, c.years.last}},
        {"omega", c.omega},
        {"cutoff", c.cutoff},
        {"horizon", c.horizon},
        {"split_age", c.split_age},
        {"mode", to_string(c.mode)},
        {"basis",
         {{"kct", c.basis.kct},
          {"cohort", c.basis.cohort},
          {"factor_smooth", c.basis.factor_smooth},
          {"single_factor_smooth", c.single_k}}},
        {"shrinkage_epsilon", c.shrinkage_epsilon},
        {"trim", {{"threshold", c.trim_threshold}, {"multi", c.trim_multi}, {"single", c.trim_single}}},
        {"optimizer",
         {{"rho0", c.fit.rho0},
          {"rho_min", c.fit.reml.rho_min},
          {"rho_max", c.fit.reml.rho_max},
          {"max_iterations", c.fit.reml.max_iterations},
          {"score_tolerance", c.fit.reml.score_tolerance},
          {"gradient_tolerance", c.fit.reml.gradient_tolerance},
          {"relative_tolerance", c.fit.reml.relative_tolerance},
          {"max_step", c.fit.reml.max_step},
          {"gradient", c.fit.reml.gradient == GradientMethod::Analytic ? "analytic" : "finite_difference"},
          {"search", c.fit.reml.search == SearchMethod::Newton ? "newton" : "bfgs"}}},
        {"diagnostics", {{"max_lag", c.max_lag}, {"scatter_ages", c.scatter_ages}, {"curve_grid", c.curve_grid}}},
        {"out", c.out.string()},
        {"workers", c.workers},
        {"seed", c.seed},
    };
    return doc.dump(2);
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, fmt::format("cannot read config {}", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

} // namespace mortgam
