#include "mortgam/config.hpp"
#include "mortgam/errors.hpp"
#include "mortgam/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Overrides {
    std::string config;
    std::optional<std::string> mode;
    std::optional<int> cutoff;
    std::optional<int> horizon;
    std::vector<std::string> countries;
    std::optional<std::string> out;
    std::optional<std::string> data_dir;
    std::optional<std::string> source;
    std::optional<int> workers;
    std::optional<std::uint64_t> seed;
    std::string scale = "rate";
};

mortgam::RunConfig effective_config(const Overrides& o) {
    using namespace mortgam;
    RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
    if (o.mode) {
        if (*o.mode == "multi") {
            c.mode = RunMode::Multi;
        } else if (*o.mode == "single") {
            c.mode = RunMode::Single;
        } else {
            throw Error(ErrorKind::Config, fmt::format("config field 'mode': '{}' is not multi or single", *o.mode));
        }
    }
    if (o.source) {
        if (*o.source == "hmd") {
            c.source = DataSource::Hmd;
        } else if (*o.source == "synthetic") {
            c.source = DataSource::Synthetic;
        } else {
            throw Error(ErrorKind::Config,
                        fmt::format("config field 'data.source': '{}' is not hmd or synthetic", *o.source));
        }
    }
    if (o.cutoff) c.cutoff = *o.cutoff;
    if (o.horizon) c.horizon = *o.horizon;
    if (!o.countries.empty()) c.countries = o.countries;
    if (o.out) c.out = *o.out;
    if (o.data_dir) c.data_dir = *o.data_dir;
    if (o.workers) c.workers = *o.workers;
    if (o.seed) c.seed = *o.seed;
    c.validate();
    return c;
}

void print_report(const mortgam::EvalReport& report, const std::string& scale) {
    using namespace mortgam;
    EvalReport shown;
    for (const auto& r : report.rows) {
        if (scale == "both" || to_string(r.scale) == scale) shown.rows.push_back(r);
    }
    for (const auto& r : report.ratios) {
        if (scale == "both" || to_string(r.scale) == scale) shown.ratios.push_back(r);
    }
    shown.warnings = report.warnings;
    write_report_table(std::cout, shown);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"mortgam: GAMM mortality modelling and forecasting"};
    app.require_subcommand(1);
    app.fallthrough();
    app.footer(
        "Settings come from --config (JSON, schema mortgam.config/1) and are overridden by flags.\n"
        "Every flag can also be set through an environment variable with the MORTGAM_ prefix:\n"
        "  MORTGAM_CONFIG, MORTGAM_MODE, MORTGAM_CUTOFF, MORTGAM_HORIZON, MORTGAM_COUNTRIES,\n"
        "  MORTGAM_OUT, MORTGAM_DATA_DIR, MORTGAM_SOURCE, MORTGAM_WORKERS, MORTGAM_SEED.\n"
        "Exit codes: 0 success, 2 invalid configuration, 1 any other failure.");

    Overrides o;
    app.add_option("--config", o.config, "run configuration JSON")->envname("MORTGAM_CONFIG");
    app.add_option("--mode", o.mode, "multi or single")->envname("MORTGAM_MODE");
    app.add_option("--cutoff", o.cutoff, "last training year")->envname("MORTGAM_CUTOFF");
    app.add_option("--horizon", o.horizon, "forecast horizon in years")->envname("MORTGAM_HORIZON");
    app.add_option("--countries", o.countries, "country codes")->delimiter(',')->envname("MORTGAM_COUNTRIES");
    app.add_option("--out", o.out, "output directory")->envname("MORTGAM_OUT");
    app.add_option("--data-dir", o.data_dir, "directory of <CODE>.Mx_1x1.txt files")->envname("MORTGAM_DATA_DIR");
    app.add_option("--source", o.source, "hmd or synthetic")->envname("MORTGAM_SOURCE");
    app.add_option("--workers", o.workers, "parallel populations in single mode")->envname("MORTGAM_WORKERS");
    app.add_option("--seed", o.seed, "seed of the synthetic generator")->envname("MORTGAM_SEED");

    auto* ingest = app.add_subcommand("ingest", "read data, write panel, covariate and scatter CSVs");
    auto* fit = app.add_subcommand("fit", "fit, trim-refit, write model JSON, diagnostics and run log");
    auto* diagnose = app.add_subcommand("diagnose", "recompute residual diagnostics from saved models");
    auto* forecast = app.add_subcommand("forecast", "GAMM, covariate and baseline forecasts");
    auto* evaluate = app.add_subcommand("evaluate", "train/test MSE report against the baseline");
    auto* synth = app.add_subcommand("synth", "write a synthetic panel as HMD files into the data directory");
    auto* run_all = app.add_subcommand("run-all", "ingest, fit, forecast and evaluate");
    auto* show = app.add_subcommand("config", "print the effective configuration");
    for (auto* sub : {evaluate, run_all}) {
        sub->add_option("--scale", o.scale, "scale printed to stdout")
            ->check(CLI::IsMember({"rate", "log", "both"}));
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    mortgam::RunLog log(&std::cerr);
    try {
        const auto config = effective_config(o);
        if (show->parsed()) {
            std::cout << mortgam::config_to_json(config) << '\n';
        } else if (ingest->parsed()) {
            mortgam::cmd_ingest(config, log);
        } else if (fit->parsed()) {
            mortgam::cmd_fit(config, log);
        } else if (diagnose->parsed()) {
            mortgam::cmd_diagnose(config, log);
        } else if (forecast->parsed()) {
            mortgam::cmd_forecast(config, log);
        } else if (evaluate->parsed()) {
            print_report(mortgam::cmd_evaluate(config, log), o.scale);
        } else if (synth->parsed()) {
            mortgam::cmd_synth(config, log);
        } else if (run_all->parsed()) {
            print_report(mortgam::cmd_run_all(config, log), o.scale);
        }
    } catch (const mortgam::Error& e) {
        std::cerr << "mortgam: " << e.what() << '\n';
        return e.kind() == mortgam::ErrorKind::Config ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << fmt::format("mortgam: error: {}\n", e.what());
        return 1;
    }
    return 0;
}
