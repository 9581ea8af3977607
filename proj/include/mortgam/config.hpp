#pragma once

#include "mortgam/data_ingest.hpp"
#include "mortgam/gam.hpp"
#include "mortgam/model_spec.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mortgam {

inline constexpr std::string_view kConfigSchema = "mortgam.config/1";

enum class RunMode { Multi, Single };
enum class DataSource { Hmd, Synthetic };

std::string_view to_string(RunMode mode) noexcept;
std::string_view to_string(DataSource source) noexcept;

/// Everything a pipeline run depends on. Defaults follow the two-country
/// protocol: AUT and CZE, train 1961-2010, forecast 2011-2019.
struct RunConfig {
    DataSource source = DataSource::Hmd;
    std::filesystem::path data_dir = "data";
    std::vector<std::string> countries{"AUT", "CZE"};
    YearRange years{1961, 2019};
    int omega = 100;
    int cutoff = 2010;
    int horizon = 9;
    int split_age = 40;
    RunMode mode = RunMode::Multi;

    BasisDimensions basis;
    int single_k = 5; ///< per-age curve dimension of the single-population model
    double shrinkage_epsilon = 0.1;

    double trim_threshold = 0.1;
    bool trim_multi = true;
    bool trim_single = false;

    FitOptions fit;

    int max_lag = 20;
    std::vector<int> scatter_ages{50, 60};
    int curve_grid = 100;

    std::filesystem::path out = "out";
    int workers = 1;
    std::uint64_t seed = 1961;

    /// Throws a config error naming the offending field.
    void validate() const;
    YearRange train_years() const { return {years.first, cutoff}; }
    /// Held-out years that a forecast of `horizon` steps covers.
    YearRange test_years() const { return {cutoff + 1, std::min(years.last, cutoff + horizon)}; }
};

/// Missing keys keep their defaults; unknown keys and wrong types raise a
/// config error, as does a schema tag other than kConfigSchema.
RunConfig config_from_json(std::string_view text);
std::string config_to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);

} // namespace mortgam
