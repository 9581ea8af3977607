#pragma once

#include "mortgam/covariates.hpp"
#include "mortgam/design.hpp"
#include "mortgam/reml.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mortgam {

inline constexpr std::string_view kModelSchema = "mortgam.model/1";

struct TrimInfo {
    bool applied = false;
    double threshold = 0.1;
    double retained_fraction = 1.0;
    std::size_t original_rows = 0;
    std::size_t retained_rows = 0;
};

/// Immutable result of a fit. The recipe carries the spec, the parametric
/// coding and every basis detail needed to predict on new rows.
struct FittedModel {
    DesignRecipe recipe;
    Eigen::VectorXd beta;
    Eigen::VectorXd rho;
    double sigma2 = 0.0;
    double reml_score = 0.0;
    double rss = 0.0;
    std::size_t n = 0;
    std::vector<double> edf; ///< per term, same order as recipe.terms
    int iterations = 0;
    bool used_fallback = false;
    TrimInfo trim;
    /// Training covariates, needed to forecast from a saved model.
    CovariateSet covariates;
    YearRange years;
    std::vector<std::string> countries;

    const ModelSpec& spec() const { return recipe.spec; }
    double total_edf() const;
    double term_edf(const std::string& name) const;
};

struct FitOptions {
    RemlOptions reml;
    double rho0 = 0.0;
};

/// Assembles the design, selects smoothing parameters by REML and returns
/// the fit. `rho_start`, when given and of matching length, replaces rho0.
FittedModel fit_gam(const ModelFrame& frame, const ModelSpec& spec, const FitOptions& options = {},
                    const Eigen::VectorXd* rho_start = nullptr);

/// Linear predictor for any frame whose factor levels were seen in training.
Eigen::VectorXd predict(const FittedModel& model, const ModelFrame& frame);

struct TrimResult {
    FittedModel model;
    ModelFrame retained;
    std::vector<std::size_t> dropped; ///< row indices into the original frame
};

/// Drops rows with |residual| > threshold once and refits the same spec on
/// the remainder (bases rebuilt on the retained rows, smoothing parameters
/// re-selected from rho0). Covariate values on the retained rows are kept as
/// they were.
TrimResult trim_refit(const FittedModel& model, const ModelFrame& frame, double threshold = 0.1,
                      const FitOptions& options = {});

std::string model_to_json(const FittedModel& model);
/// Throws a version error when the schema tag does not match.
FittedModel model_from_json(std::string_view text);
void save_model(const FittedModel& model, const std::filesystem::path& path);
FittedModel load_model(const std::filesystem::path& path);

} // namespace mortgam
