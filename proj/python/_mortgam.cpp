#include "mortgam/baselines.hpp"
#include "mortgam/diagnostics.hpp"
#include "mortgam/forecasting.hpp"
#include "mortgam/gam.hpp"
#include "mortgam/pipeline.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace mortgam;

namespace {

Gender gender_arg(const std::string& g) { return parse_gender(g); }

py::dict panel_columns(const MortalityPanel& p) {
    const auto n = static_cast<py::ssize_t>(p.size());
    py::list country, gender;
    py::array_t<int> age(n), year(n), cohort(n);
    py::array_t<double> rate(n), log_rate(n);
    auto a = age.mutable_unchecked<1>();
    auto y = year.mutable_unchecked<1>();
    auto c = cohort.mutable_unchecked<1>();
    auto r = rate.mutable_unchecked<1>();
    auto l = log_rate.mutable_unchecked<1>();
    for (py::ssize_t i = 0; i < n; ++i) {
        const auto& rec = p.records[static_cast<std::size_t>(i)];
        country.append(rec.country);
        gender.append(std::string(to_string(rec.gender)));
        a(i) = rec.age, y(i) = rec.year, c(i) = rec.cohort, r(i) = rec.rate, l(i) = rec.log_rate;
    }
    py::dict out;
    out["country"] = country;
    out["gender"] = gender;
    out["age"] = age;
    out["year"] = year;
    out["cohort"] = cohort;
    out["rate"] = rate;
    out["log_rate"] = log_rate;
    return out;
}

py::dict forecast_columns(const ForecastPanel& f) {
    py::list country, gender, age, year;
    std::vector<double> log_rate;
    for (const auto& r : f.records) {
        country.append(r.country);
        gender.append(std::string(to_string(r.gender)));
        age.append(r.age);
        year.append(r.year);
        log_rate.push_back(r.log_rate);
    }
    py::dict out;
    out["country"] = country;
    out["gender"] = gender;
    out["age"] = age;
    out["year"] = year;
    out["log_rate"] = py::array_t<double>(static_cast<py::ssize_t>(log_rate.size()), log_rate.data());
    return out;
}

ModelSpec spec_for(const std::string& model, int k) {
    if (model == "multi") return multi_population_spec();
    if (model == "single") return single_population_spec(k);
    throw Error(ErrorKind::Spec, "model must be 'multi' or 'single'");
}

/// A fitted model with the panel and covariates it was trained on.
struct PyModel {
    FittedModel model;
    MortalityPanel panel;
    CovariateSet covariates;
    std::vector<std::size_t> dropped;
};

} // namespace

PYBIND11_MODULE(_mortgam, m) {
    m.doc() = "Additive mixed models for mortality forecasting";

    static py::exception<Error> error(m, "MortgamError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = error;
            py::object instance = exc(e.what());
            instance.attr("kind") = std::string(to_string(e.kind()));
            PyErr_SetObject(exc.ptr(), instance.ptr());
        }
    });

    py::class_<MortalityPanel>(m, "Panel")
        .def_static(
            "synthetic",
            [](std::vector<std::string> countries, int first_year, int last_year, int omega, std::uint64_t seed) {
                return synth_panel(hmd_like_spec(std::move(countries), {first_year, last_year}, omega, seed), seed);
            },
            py::arg("countries"), py::arg("first_year"), py::arg("last_year"), py::arg("omega") = 100,
            py::arg("seed") = 1961)
        .def_static(
            "rank_one",
            [](std::vector<std::string> countries, std::vector<double> a, std::vector<double> b, std::vector<double> k,
               int first_year, double noise_sd, std::uint64_t seed) {
                return synth_panel(rank_one_spec(std::move(countries), std::move(a), std::move(b), std::move(k), 0,
                                                 first_year, noise_sd),
                                   seed);
            },
            py::arg("countries"), py::arg("a"), py::arg("b"), py::arg("k"), py::arg("first_year"),
            py::arg("noise_sd") = 0.0, py::arg("seed") = 1)
        .def_static(
            "from_hmd",
            [](const std::filesystem::path& dir, const std::vector<std::string>& countries, int first_year,
               int last_year, int omega) {
                std::vector<MortalityTable> tables;
                for (const auto& c : countries) tables.push_back(read_hmd_mx_file(hmd_file_path(dir, c), c));
                return build_panel(tables, {first_year, last_year}, {0, omega});
            },
            py::arg("dir"), py::arg("countries"), py::arg("first_year"), py::arg("last_year"), py::arg("omega") = 100)
        .def("__len__", &MortalityPanel::size)
        .def_property_readonly("countries", [](const MortalityPanel& p) { return p.countries; })
        .def_property_readonly("years", [](const MortalityPanel& p) { return std::pair{p.years.first, p.years.last}; })
        .def_property_readonly("ages", [](const MortalityPanel& p) { return std::pair{p.ages.first, p.ages.last}; })
        .def("select", [](const MortalityPanel& p, const std::string& c, const std::string& g) {
            return select_population(p, c, gender_arg(g));
        })
        .def("select_years", [](const MortalityPanel& p, int first, int last) { return select_years(p, {first, last}); })
        .def("columns", &panel_columns, "Column arrays of the long-format panel.");

    m.def(
        "covariates",
        [](const MortalityPanel& p, int split_age) {
            const auto c = compute_covariates(p, split_age);
            py::dict kct;
            for (const auto& [key, series] : c.kct) kct[py::make_tuple(key.first, std::string(to_string(key.second)))] = series;
            py::dict out;
            out["kt"] = c.kt;
            out["kct"] = kct;
            return out;
        },
        py::arg("panel"), py::arg("split_age") = 40, "k_t per year and k_ct per (country, segment) and year.");

    py::class_<PyModel>(m, "Model")
        .def_property_readonly("rho", [](const PyModel& p) { return p.model.rho; })
        .def_property_readonly("beta", [](const PyModel& p) { return p.model.beta; })
        .def_property_readonly("sigma2", [](const PyModel& p) { return p.model.sigma2; })
        .def_property_readonly("reml_score", [](const PyModel& p) { return p.model.reml_score; })
        .def_property_readonly("rss", [](const PyModel& p) { return p.model.rss; })
        .def_property_readonly("n", [](const PyModel& p) { return p.model.n; })
        .def_property_readonly("retained_fraction", [](const PyModel& p) { return p.model.trim.retained_fraction; })
        .def_property_readonly("dropped", [](const PyModel& p) { return p.dropped; })
        .def_property_readonly("edf", [](const PyModel& p) {
            py::dict out;
            for (std::size_t t = 0; t < p.model.recipe.terms.size(); ++t) out[py::str(p.model.recipe.terms[t].name)] = p.model.edf[t];
            return out;
        })
        .def("predict", [](const PyModel& p, const MortalityPanel& panel) {
            return predict(p.model, attach_covariates(panel, p.covariates));
        }, "Linear predictor (log rate) for panel cells inside the training years.")
        .def("forecast", [](const PyModel& p, int horizon) {
            return forecast_columns(forecast_asdr(p.model, p.panel, p.covariates, horizon));
        })
        .def("residuals", [](const PyModel& p) {
            const auto frame = attach_covariates(p.panel, p.covariates);
            const Eigen::VectorXd eta = predict(p.model, frame);
            Eigen::VectorXd r(eta.size());
            for (Eigen::Index i = 0; i < eta.size(); ++i) r(i) = frame.rows[static_cast<std::size_t>(i)].y - eta(i);
            return r;
        })
        .def("to_json", [](const PyModel& p) { return model_to_json(p.model); });

    m.def(
        "fit",
        [](const MortalityPanel& panel, const std::string& model, int split_age, int k) {
            PyModel out;
            out.panel = panel;
            out.covariates = compute_covariates(panel, split_age);
            {
                py::gil_scoped_release release;
                out.model = fit_gam(attach_covariates(panel, out.covariates), spec_for(model, k));
            }
            out.model.covariates = out.covariates;
            out.model.years = panel.years;
            out.model.countries = panel.countries;
            return out;
        },
        py::arg("panel"), py::arg("model") = "multi", py::arg("split_age") = 40, py::arg("k") = 5,
        "Fits the multi-population or single-population model by REML.");

    m.def(
        "trim_refit",
        [](const PyModel& fitted, double threshold) {
            PyModel out = fitted;
            TrimResult t;
            {
                py::gil_scoped_release release;
                t = trim_refit(fitted.model, attach_covariates(fitted.panel, fitted.covariates), threshold);
            }
            out.model = std::move(t.model);
            out.model.covariates = fitted.covariates;
            out.model.years = fitted.panel.years;
            out.model.countries = fitted.panel.countries;
            out.dropped = std::move(t.dropped);
            return out;
        },
        py::arg("model"), py::arg("threshold") = 0.1);

    m.def(
        "lee_carter",
        [](const MortalityPanel& panel, const std::string& country, const std::string& gender) {
            const auto fit = lee_carter_fit(log_rate_matrix(panel, country, gender_arg(gender)));
            py::dict out;
            out["a"] = fit.a;
            out["b"] = fit.b;
            out["kappa"] = fit.kappa;
            out["fitted"] = fit.fitted();
            return out;
        },
        py::arg("panel"), py::arg("country"), py::arg("gender"));

    m.def("acf", [](const std::vector<double>& r, int max_lag) { return acf(r, max_lag); }, py::arg("series"),
          py::arg("max_lag") = 20);
    m.def(
        "qq",
        [](const std::vector<double>& r) {
            const auto pts = qq_points(r);
            Eigen::MatrixXd out(static_cast<Eigen::Index>(pts.size()), 2);
            for (std::size_t i = 0; i < pts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) << pts[i].theoretical, pts[i].sample;
            return out;
        },
        py::arg("residuals"), "Columns: theoretical normal quantile, standardized sorted residual.");
    m.def("mse", [](const std::vector<double>& a, const std::vector<double>& p, const std::string& scale) {
        return mse(a, p, scale == "log" ? Scale::Log : Scale::Rate);
    }, py::arg("actual_log"), py::arg("predicted_log"), py::arg("scale") = "rate");

    m.def(
        "run",
        [](const std::string& config_json) {
            const auto config = config_from_json(config_json);
            RunLog log;
            EvalReport report;
            {
                py::gil_scoped_release release;
                report = cmd_run_all(config, log);
            }
            std::ostringstream csv;
            write_report_csv(csv, report);
            return csv.str();
        },
        py::arg("config_json"), "Runs the whole pipeline for a JSON config and returns the report CSV.");
    m.def("default_config", [] { return config_to_json(RunConfig{}); });
}
