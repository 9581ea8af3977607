#include "mortgam/pipeline.hpp"

#include "mortgam/baselines.hpp"
#include "mortgam/diagnostics.hpp"
#include "mortgam/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <thread>

namespace mortgam {

namespace fs = std::filesystem;

void RunLog::line(std::string_view text) {
    if (!sink_) return;
    std::lock_guard lock(mutex_);
    *sink_ << text << '\n';
    sink_->flush();
}

namespace {

std::mutex& write_mutex() {
    static std::mutex m;
    return m;
}

/// Serialized file write; a failed stream raises an I/O error.
template <typename Fn>
void write_file(const fs::path& path, Fn&& fn) {
    std::lock_guard lock(write_mutex());
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorKind::Io, fmt::format("cannot create {}: {}", path.parent_path().string(), ec.message()));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write {}", path.string()));
    fn(out);
    out.flush();
    if (!out) throw Error(ErrorKind::Io, fmt::format("write to {} failed", path.string()));
}

ForecastPanel read_panel_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, fmt::format("cannot read {}", path.string()));
    return read_forecast_csv(in);
}

void remove_stale(const fs::path& path) {
    std::lock_guard lock(write_mutex());
    std::error_code ec;
    fs::remove(path, ec);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Runs `fn` on every scope with up to `workers` threads. Every scope is
/// attempted; the first failure is rethrown afterwards.
template <typename Fn>
void for_each_scope(const RunConfig& config, const std::vector<Scope>& scopes, RunLog& log, Fn&& fn) {
    std::vector<std::exception_ptr> errors(scopes.size());
    auto run = [&](std::size_t i) {
        try {
            fn(scopes[i]);
        } catch (const std::exception& e) {
            log.line(fmt::format("[{}] failed: {}", scopes[i].name, e.what()));
            errors[i] = std::current_exception();
        }
    };
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(config.workers), scopes.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < scopes.size(); ++i) run(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < scopes.size(); i = next++) run(i);
            });
        }
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

ModelFrame retained_rows(const FittedModel& untrimmed, const ModelFrame& frame, double threshold) {
    const Eigen::VectorXd fitted = predict(untrimmed, frame);
    ModelFrame out;
    for (std::size_t i = 0; i < frame.size(); ++i) {
        if (std::abs(frame.rows[i].y - fitted(static_cast<Eigen::Index>(i))) <= threshold) out.rows.push_back(frame.rows[i]);
    }
    return out;
}

void write_report(const fs::path& dir, const DiagnosticsReport& report, std::string_view suffix) {
    write_file(dir / fmt::format("qq{}.csv", suffix), [&](std::ostream& o) { write_qq_csv(o, report.qq); });
    write_file(dir / fmt::format("acf{}.csv", suffix), [&](std::ostream& o) { write_acf_csv(o, report.acf.mean); });
    write_file(dir / fmt::format("resid_fitted{}.csv", suffix),
               [&](std::ostream& o) { write_resid_fitted_csv(o, report.table); });
    write_file(dir / fmt::format("spread{}.csv", suffix), [&](std::ostream& o) { write_spread_csv(o, report.spread); });
}

/// Residual diagnostics of the final model and, when trimming was applied,
/// of the untrimmed model; the final model is diagnosed on the retained rows.
void write_diagnostics(const RunConfig& config, const ScopePaths& paths, const FittedModel& model,
                       const FittedModel* untrimmed, const ModelFrame& frame, RunLog& log, const std::string& name) {
    std::string summary = "model,rows,lag1,acf_series,acf_skipped\n";
    auto add = [&](std::string_view label, std::size_t rows, const DiagnosticsReport& r) {
        summary += fmt::format("{},{},{:.10g},{},{}\n", label, rows, r.lag1, r.acf.series_used, r.acf.series_skipped);
        log.line(fmt::format("[{}] {} residuals: {} rows, mean lag-1 ACF {:.4f}", name, label, rows, r.lag1));
    };
    ModelFrame post = frame;
    if (untrimmed) {
        const auto pre = diagnose(*untrimmed, frame, config.max_lag);
        write_report(paths.diagnostics, pre, "_untrimmed");
        add("untrimmed", frame.size(), pre);
        post = retained_rows(*untrimmed, frame, model.trim.threshold);
    }
    const auto report = diagnose(model, post, config.max_lag);
    write_report(paths.diagnostics, report, "");
    add("final", post.size(), report);
    write_file(paths.diagnostics / "summary.csv", [&](std::ostream& o) { o << summary; });

    const auto curves = smooth_curves(model, config.curve_grid);
    write_file(paths.diagnostics / "smooth_curves.csv", [&](std::ostream& o) { write_curves_csv(o, curves); });

    const Eigen::VectorXd fitted = predict(model, frame);
    write_file(paths.diagnostics / "fitted_vs_kt.csv", [&](std::ostream& o) {
        o << "country,gender,age,year,kt,y,fitted\n";
        for (std::size_t i = 0; i < frame.size(); ++i) {
            const auto& r = frame.rows[i];
            o << fmt::format("{},{},{},{},{:.10g},{:.10g},{:.10g}\n", r.country, to_string(r.gender), r.age, r.year,
                             r.kt, r.y, fitted(static_cast<Eigen::Index>(i)));
        }
    });
}

std::string fit_summary(const FittedModel& m) {
    std::string s = fmt::format("rows {}  columns {}  smoothing parameters {}\n", m.n, m.beta.size(), m.rho.size());
    s += fmt::format("reml score {:.6f}  iterations {}  fallback {}\n", m.reml_score, m.iterations,
                     m.used_fallback ? "yes" : "no");
    s += fmt::format("rss {:.6g}  sigma2 {:.6g}  total edf {:.2f}\n", m.rss, m.sigma2, m.total_edf());
    s += fmt::format("{:<34}{:>8}{:>12}\n", "term", "width", "edf");
    for (std::size_t t = 0; t < m.recipe.terms.size(); ++t) {
        const auto& term = m.recipe.terms[t];
        s += fmt::format("{:<34}{:>8}{:>12.3f}\n", term.name, term.width, m.edf[t]);
    }
    return s;
}

MortalityPanel train_panel(const RunConfig& config, const Scope& scope) {
    return split_panel(scope.panel, config.cutoff).train;
}

FittedModel load_scope_model(const RunConfig& config, const Scope& scope, const MortalityPanel& train) {
    FittedModel model = load_model(ScopePaths(scope.dir).fit / "model.json");
    if (model.years.first != train.years.first || model.years.last != train.years.last ||
        model.countries != train.countries) {
        throw Error(ErrorKind::Alignment,
                    fmt::format("model in {} was fitted on {}-{} but the config trains on {}-{}", scope.dir.string(),
                                model.years.first, model.years.last, train.years.first, train.years.last));
    }
    if (model.covariates.split_age != config.split_age && config.mode == RunMode::Multi) {
        throw Error(ErrorKind::Alignment, "model split_age differs from the config");
    }
    return model;
}

} // namespace

ScopePaths::ScopePaths(const fs::path& dir)
    : ingest(dir / "ingest"), fit(dir / "fit"), diagnostics(dir / "diagnostics"), forecast(dir / "forecast"),
      report(dir / "report") {}

MortalityPanel load_panel(const RunConfig& config) {
    config.validate();
    if (config.source == DataSource::Synthetic) {
        return synth_panel(hmd_like_spec(config.countries, config.years, config.omega, config.seed), config.seed);
    }
    std::vector<MortalityTable> tables;
    for (const auto& c : config.countries) {
        const auto path = hmd_file_path(config.data_dir, c);
        if (!fs::exists(path)) throw Error(ErrorKind::Io, fmt::format("missing data file {}", path.string()));
        tables.push_back(read_hmd_mx_file(path, c));
    }
    return build_panel(tables, config.years, {0, config.omega});
}

std::vector<Scope> make_scopes(const RunConfig& config, const MortalityPanel& panel) {
    std::vector<Scope> scopes;
    if (config.mode == RunMode::Multi) {
        Scope s;
        s.name = "multi";
        s.panel = panel;
        s.dir = config.out;
        s.spec = multi_population_spec(config.basis, config.shrinkage_epsilon);
        s.trim = config.trim_multi;
        s.baseline = "LL";
        scopes.push_back(std::move(s));
        return scopes;
    }
    for (const auto& c : panel.countries) {
        for (Gender g : panel.genders) {
            Scope s;
            s.name = fmt::format("{}-{}", c, to_string(g));
            s.panel = select_population(panel, c, g);
            s.dir = config.out / "single" / s.name;
            s.spec = single_population_spec(config.single_k);
            s.trim = config.trim_single;
            s.baseline = "LC";
            scopes.push_back(std::move(s));
        }
    }
    return scopes;
}

void ingest_scope(const RunConfig& config, const Scope& scope) {
    const ScopePaths paths(scope.dir);
    const auto train = train_panel(config, scope);
    const auto cov = compute_covariates(train, config.split_age);
    write_file(paths.ingest / "panel.csv", [&](std::ostream& o) { write_panel_csv(o, scope.panel); });
    write_file(paths.ingest / "kt.csv", [&](std::ostream& o) { write_kt_csv(o, cov.kt); });
    write_file(paths.ingest / "kct.csv", [&](std::ostream& o) { write_kct_csv(o, cov.kct); });
    const auto frame = attach_covariates(train, cov);
    write_file(paths.ingest / "y_vs_kt.csv", [&](std::ostream& o) {
        o << "country,gender,age,year,kt,y\n";
        for (const auto& r : frame.rows) {
            if (std::find(config.scatter_ages.begin(), config.scatter_ages.end(), r.age) == config.scatter_ages.end()) {
                continue;
            }
            o << fmt::format("{},{},{},{},{:.10g},{:.10g}\n", r.country, to_string(r.gender), r.age, r.year, r.kt, r.y);
        }
    });
}

void fit_scope(const RunConfig& config, const Scope& scope, RunLog& log) {
    const ScopePaths paths(scope.dir);
    const auto train = train_panel(config, scope);
    const auto cov = compute_covariates(train, config.split_age);
    const auto frame = attach_covariates(train, cov);

    const auto t0 = std::chrono::steady_clock::now();
    FittedModel model = fit_gam(frame, scope.spec, config.fit);
    model.covariates = cov;
    model.years = train.years;
    model.countries = train.countries;
    const double fit_seconds = seconds_since(t0);
    log.line(fmt::format("[{}] fit: {} rows, {} columns, {} iterations, {:.1f} s", scope.name, model.n,
                         model.beta.size(), model.iterations, fit_seconds));

    std::optional<FittedModel> untrimmed;
    double trim_seconds = 0.0;
    if (scope.trim) {
        const auto t1 = std::chrono::steady_clock::now();
        auto trimmed = trim_refit(model, frame, config.trim_threshold, config.fit);
        trim_seconds = seconds_since(t1);
        untrimmed = std::move(model);
        model = std::move(trimmed.model);
        log.line(fmt::format("[{}] trim-refit: retained {:.1f}% of rows, {} iterations, {:.1f} s", scope.name,
                             100.0 * model.trim.retained_fraction, model.iterations, trim_seconds));
    }

    write_file(paths.fit / "model.json", [&](std::ostream& o) { o << model_to_json(model) << '\n'; });
    if (untrimmed) {
        write_file(paths.fit / "model_untrimmed.json", [&](std::ostream& o) { o << model_to_json(*untrimmed) << '\n'; });
    } else {
        remove_stale(paths.fit / "model_untrimmed.json");
    }

    std::string text = fmt::format("scope {}\nspec {}\n\n", scope.name, fmt::join(model.spec().term_names(), " + "));
    if (untrimmed) text += "untrimmed fit\n" + fit_summary(*untrimmed) + "\n";
    text += (untrimmed ? "final fit (trimmed)\n" : "final fit\n") + fit_summary(model);
    if (model.trim.applied) {
        text += fmt::format("\ntrim threshold {}  retained {} of {} rows ({:.2f}%)\n", model.trim.threshold,
                            model.trim.retained_rows, model.trim.original_rows, 100.0 * model.trim.retained_fraction);
    }
    text += fmt::format("\ntiming: fit {:.2f} s", fit_seconds);
    if (untrimmed) text += fmt::format(", trim-refit {:.2f} s", trim_seconds);
    text += '\n';
    write_file(paths.fit / "fit_log.txt", [&](std::ostream& o) { o << text; });

    write_diagnostics(config, paths, model, untrimmed ? &*untrimmed : nullptr, frame, log, scope.name);
}

void diagnose_scope(const RunConfig& config, const Scope& scope, RunLog& log) {
    const ScopePaths paths(scope.dir);
    const auto train = train_panel(config, scope);
    const FittedModel model = load_scope_model(config, scope, train);
    std::optional<FittedModel> untrimmed;
    if (fs::exists(paths.fit / "model_untrimmed.json")) untrimmed = load_model(paths.fit / "model_untrimmed.json");
    const auto frame = attach_covariates(train, model.covariates);
    write_diagnostics(config, paths, model, untrimmed ? &*untrimmed : nullptr, frame, log, scope.name);
}

void forecast_scope(const RunConfig& config, const Scope& scope, RunLog& log) {
    const ScopePaths paths(scope.dir);
    const auto train = train_panel(config, scope);
    const FittedModel model = load_scope_model(config, scope, train);
    const int h = config.horizon;

    const auto forecast = forecast_asdr(model, train, model.covariates, h);
    const auto fitted = fitted_panel(model, train, model.covariates);
    const auto cf = forecast_covariates(model.covariates, h);
    write_file(paths.forecast / "gamm_forecast.csv", [&](std::ostream& o) { write_forecast_csv(o, forecast); });
    write_file(paths.forecast / "gamm_fitted.csv", [&](std::ostream& o) { write_forecast_csv(o, fitted); });
    write_file(paths.forecast / "covariate_forecast.csv", [&](std::ostream& o) { write_covariate_forecast_csv(o, cf); });

    std::vector<int> future(static_cast<std::size_t>(h));
    std::iota(future.begin(), future.end(), train.years.last + 1);
    const auto base_forecast = paths.forecast / "baseline_forecast.csv";
    const auto base_fitted = paths.forecast / "baseline_fitted.csv";

    if (scope.baseline == "LC") {
        const auto& c = train.countries.front();
        const Gender g = train.genders.front();
        const auto lc = lee_carter_fit(log_rate_matrix(train, c, g));
        const auto bf = lee_carter_panel(lc, lc.fitted(), lc.years);
        const auto bp = lee_carter_panel(lc, lee_carter_forecast(lc, h), future);
        write_file(base_forecast, [&](std::ostream& o) { write_forecast_csv(o, bp); });
        write_file(base_fitted, [&](std::ostream& o) { write_forecast_csv(o, bf); });
        write_file(paths.forecast / "lc_age_factors.csv", [&](std::ostream& o) { write_age_factors_csv(o, lc); });
        write_file(paths.forecast / "lc_period_factors.csv", [&](std::ostream& o) { write_period_factors_csv(o, lc); });
        log.line(fmt::format("[{}] forecast: GAMM and LC, {} years", scope.name, h));
        return;
    }
    if (train.countries.size() < 2) {
        remove_stale(base_forecast);
        remove_stale(base_fitted);
        log.line(fmt::format("[{}] forecast: GAMM only; Li-Lee needs at least two countries", scope.name));
        return;
    }
    ForecastPanel bf;
    ForecastPanel bp;
    for (Gender g : train.genders) {
        std::vector<AgeYearMatrix> mats;
        for (const auto& c : train.countries) mats.push_back(log_rate_matrix(train, c, g));
        const auto ll = li_lee_fit(mats);
        std::vector<Eigen::MatrixXd> in_sample;
        for (std::size_t c = 0; c < ll.countries.size(); ++c) in_sample.push_back(ll.fitted(c));
        auto f1 = li_lee_panel(ll, in_sample, ll.years);
        auto f2 = li_lee_panel(ll, li_lee_forecast(ll, h), future);
        bf.records.insert(bf.records.end(), f1.records.begin(), f1.records.end());
        bp.records.insert(bp.records.end(), f2.records.begin(), f2.records.end());
    }
    write_file(base_forecast, [&](std::ostream& o) { write_forecast_csv(o, bp); });
    write_file(base_fitted, [&](std::ostream& o) { write_forecast_csv(o, bf); });
    log.line(fmt::format("[{}] forecast: GAMM and LL, {} years", scope.name, h));
}

EvalReport evaluate_scope(const RunConfig& config, const Scope& scope, RunLog& log) {
    const ScopePaths paths(scope.dir);
    const auto split = split_panel(scope.panel, config.cutoff);
    const auto test = select_years(split.test, config.test_years());
    const auto gamm = score_model("GAMM", split.train, test, read_panel_file(paths.forecast / "gamm_fitted.csv"),
                                  read_panel_file(paths.forecast / "gamm_forecast.csv"));
    std::vector<MseRow> baseline;
    const auto bf = paths.forecast / "baseline_fitted.csv";
    const auto bp = paths.forecast / "baseline_forecast.csv";
    if (fs::exists(bf) && fs::exists(bp)) {
        baseline = score_model(scope.baseline, split.train, test, read_panel_file(bf), read_panel_file(bp));
    }
    const auto report = compare(gamm, baseline);
    write_file(paths.report / "report.csv", [&](std::ostream& o) { write_report_csv(o, report); });
    write_file(paths.report / "report.txt", [&](std::ostream& o) { write_report_table(o, report); });
    for (const auto& w : report.warnings) log.line(fmt::format("[{}] warning: {}", scope.name, w));
    for (const auto& r : report.ratios) {
        if (r.scale == Scale::Rate) {
            log.line(fmt::format("[{}] {} {}: {}/GAMM test MSE ratio {:.3f}", scope.name, r.country,
                                 to_string(r.gender), r.baseline, r.ratio));
        }
    }
    return report;
}

void cmd_synth(const RunConfig& config, RunLog& log) {
    config.validate();
    const auto panel =
        synth_panel(hmd_like_spec(config.countries, config.years, config.omega, config.seed), config.seed);
    for (const auto& c : panel.countries) {
        const auto path = hmd_file_path(config.data_dir, c);
        write_file(path, [&](std::ostream& o) { write_hmd_mx(o, panel, c); });
        log.line(fmt::format("synth: wrote {}", path.string()));
    }
}

void cmd_ingest(const RunConfig& config, RunLog& log) {
    const auto panel = load_panel(config);
    log.line(fmt::format("ingest: {} records, {} excluded cells", panel.size(), panel.excluded));
    const auto scopes = make_scopes(config, panel);
    for_each_scope(config, scopes, log, [&](const Scope& s) { ingest_scope(config, s); });
}

void cmd_fit(const RunConfig& config, RunLog& log) {
    const auto scopes = make_scopes(config, load_panel(config));
    for_each_scope(config, scopes, log, [&](const Scope& s) { fit_scope(config, s, log); });
}

void cmd_diagnose(const RunConfig& config, RunLog& log) {
    const auto scopes = make_scopes(config, load_panel(config));
    for_each_scope(config, scopes, log, [&](const Scope& s) { diagnose_scope(config, s, log); });
}

void cmd_forecast(const RunConfig& config, RunLog& log) {
    const auto scopes = make_scopes(config, load_panel(config));
    for_each_scope(config, scopes, log, [&](const Scope& s) { forecast_scope(config, s, log); });
}

EvalReport cmd_evaluate(const RunConfig& config, RunLog& log) {
    const auto scopes = make_scopes(config, load_panel(config));
    std::vector<EvalReport> reports(scopes.size());
    // Scopes are evaluated in order so the merged report is deterministic.
    for (std::size_t i = 0; i < scopes.size(); ++i) reports[i] = evaluate_scope(config, scopes[i], log);
    if (scopes.size() == 1) return reports.front();
    EvalReport merged;
    for (std::size_t i = 0; i < scopes.size(); ++i) {
        const auto& r = reports[i];
        merged.rows.insert(merged.rows.end(), r.rows.begin(), r.rows.end());
        merged.ratios.insert(merged.ratios.end(), r.ratios.begin(), r.ratios.end());
        for (const auto& w : r.warnings) merged.warnings.push_back(fmt::format("{}: {}", scopes[i].name, w));
    }
    const ScopePaths paths(config.out);
    write_file(paths.report / "summary.csv", [&](std::ostream& o) { write_report_csv(o, merged); });
    write_file(paths.report / "summary.txt", [&](std::ostream& o) { write_report_table(o, merged); });
    return merged;
}

EvalReport cmd_run_all(const RunConfig& config, RunLog& log) {
    const auto scopes = make_scopes(config, load_panel(config));
    for_each_scope(config, scopes, log, [&](const Scope& s) {
        ingest_scope(config, s);
        fit_scope(config, s, log);
        forecast_scope(config, s, log);
    });
    return cmd_evaluate(config, log);
}

} // namespace mortgam
