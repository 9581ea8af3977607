#pragma once

#include "mortgam/data_ingest.hpp"
#include "mortgam/forecasting.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace mortgam {

struct PanelSplit {
    MortalityPanel train; ///< years <= cutoff
    MortalityPanel test;  ///< years > cutoff
};

/// Raises a split error when either side would be empty.
PanelSplit split_panel(const MortalityPanel& panel, int cutoff);

enum class Scale { Rate, Log };
std::string_view to_string(Scale scale) noexcept;

/// Mean squared difference of two aligned log-rate vectors on the given scale.
double mse(std::span<const double> actual_log, std::span<const double> predicted_log, Scale scale);

/// MSE of a prediction panel over the cells of `actual` for one population.
/// Every observed cell must have a prediction (alignment error otherwise);
/// predictions for excluded cells are ignored.
double panel_mse(const MortalityPanel& actual, const ForecastPanel& predicted, const std::string& country,
                 Gender gender, Scale scale);

struct MseRow {
    std::string country;
    Gender gender = Gender::Female;
    std::string model; ///< GAMM, LL or LC
    Scale scale = Scale::Rate;
    double train_mse = 0.0;
    double test_mse = 0.0;
};

struct RatioRow {
    std::string country;
    Gender gender = Gender::Female;
    std::string baseline;
    Scale scale = Scale::Rate;
    double baseline_test = 0.0;
    double gamm_test = 0.0;
    double ratio = 0.0; ///< baseline_test / gamm_test
};

struct EvalReport {
    std::vector<MseRow> rows;
    std::vector<RatioRow> ratios;
    std::vector<std::string> warnings;
};

/// Train and test MSE rows of one model for every population in `train`, both scales.
std::vector<MseRow> score_model(const std::string& model, const MortalityPanel& train, const MortalityPanel& test,
                                const ForecastPanel& fitted, const ForecastPanel& forecast);

/// Joins GAMM rows with baseline rows and adds baseline/GAMM ratios. An empty
/// baseline gives a GAMM-only report with a warning; populations present on
/// one side only raise a join error.
EvalReport compare(const std::vector<MseRow>& gamm, const std::vector<MseRow>& baseline);

void write_report_csv(std::ostream& out, const EvalReport& report);
/// Plain-text table: one block per scale with MSE rows per population and the ratio row.
void write_report_table(std::ostream& out, const EvalReport& report);

} // namespace mortgam
