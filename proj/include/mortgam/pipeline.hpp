#pragma once

#include "mortgam/config.hpp"
#include "mortgam/evaluation.hpp"

#include <filesystem>
#include <iosfwd>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace mortgam {

/// Progress lines shared by worker threads.
class RunLog {
public:
    explicit RunLog(std::ostream* sink = nullptr) : sink_(sink) {}
    void line(std::string_view text);

private:
    std::ostream* sink_;
    std::mutex mutex_;
};

/// One unit of pipeline work: the whole panel in multi mode, one
/// (country, gender) population in single mode.
struct Scope {
    std::string name;
    MortalityPanel panel;
    std::filesystem::path dir;
    ModelSpec spec;
    bool trim = false;
    std::string baseline; ///< LL or LC
};

/// Full panel over the configured countries, years and ages 0..omega.
MortalityPanel load_panel(const RunConfig& config);
std::vector<Scope> make_scopes(const RunConfig& config, const MortalityPanel& panel);

/// Output layout of one scope.
struct ScopePaths {
    std::filesystem::path ingest, fit, diagnostics, forecast, report;
    explicit ScopePaths(const std::filesystem::path& dir);
};

void ingest_scope(const RunConfig& config, const Scope& scope);
void fit_scope(const RunConfig& config, const Scope& scope, RunLog& log);
void diagnose_scope(const RunConfig& config, const Scope& scope, RunLog& log);
void forecast_scope(const RunConfig& config, const Scope& scope, RunLog& log);
EvalReport evaluate_scope(const RunConfig& config, const Scope& scope, RunLog& log);

/// Writes the synthetic panel of `config` as HMD files into config.data_dir.
void cmd_synth(const RunConfig& config, RunLog& log);
void cmd_ingest(const RunConfig& config, RunLog& log);
void cmd_fit(const RunConfig& config, RunLog& log);
void cmd_diagnose(const RunConfig& config, RunLog& log);
void cmd_forecast(const RunConfig& config, RunLog& log);
EvalReport cmd_evaluate(const RunConfig& config, RunLog& log);
/// ingest, fit (with diagnostics), forecast and evaluate.
EvalReport cmd_run_all(const RunConfig& config, RunLog& log);

} // namespace mortgam
