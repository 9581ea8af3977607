#include "mortgam/gam.hpp"

#include "mortgam/errors.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mortgam {

using nlohmann::json;

double FittedModel::total_edf() const { return std::accumulate(edf.begin(), edf.end(), 0.0); }

double FittedModel::term_edf(const std::string& name) const {
    for (std::size_t t = 0; t < recipe.terms.size(); ++t) {
        if (recipe.terms[t].name == name) return edf[t];
    }
    throw Error(ErrorKind::Spec, fmt::format("no term named '{}'", name));
}

FittedModel fit_gam(const ModelFrame& frame, const ModelSpec& spec, const FitOptions& options,
                    const Eigen::VectorXd* rho_start) {
    const Design design = assemble_design(frame, spec);
    RemlObjective objective(design);
    const int m = design.lambda_count();
    Eigen::VectorXd rho0 = Eigen::VectorXd::Constant(m, options.rho0);
    if (rho_start && rho_start->size() == m) rho0 = *rho_start;
    const RemlResult reml = optimize_reml(objective, rho0, options.reml);
    const auto& system = objective.system();

    FittedModel model;
    model.recipe = design.recipe;
    model.beta = system.beta();
    model.rho = reml.rho;
    model.reml_score = reml.score;
    model.rss = system.rss();
    model.n = frame.size();
    model.edf = system.term_edf();
    model.iterations = reml.iterations;
    model.used_fallback = reml.used_fallback;
    const double residual_df = static_cast<double>(model.n) - model.total_edf();
    if (!(residual_df > 0.0)) throw Error(ErrorKind::Conditioning, "no residual degrees of freedom left");
    model.sigma2 = model.rss / residual_df;
    if (!(model.sigma2 > 0.0)) model.sigma2 = std::numeric_limits<double>::min();
    model.trim.original_rows = model.n;
    model.trim.retained_rows = model.n;
    return model;
}

Eigen::VectorXd predict(const FittedModel& model, const ModelFrame& frame) {
    if (frame.empty()) return Eigen::VectorXd(0);
    return rows_for(model.recipe, frame) * model.beta;
}

TrimResult trim_refit(const FittedModel& model, const ModelFrame& frame, double threshold, const FitOptions& options) {
    if (!(threshold > 0.0)) throw Error(ErrorKind::Spec, "trim threshold must be positive");
    const Eigen::VectorXd fitted = predict(model, frame);
    TrimResult out;
    for (std::size_t i = 0; i < frame.size(); ++i) {
        if (std::abs(frame.rows[i].y - fitted(static_cast<Eigen::Index>(i))) > threshold) {
            out.dropped.push_back(i);
        } else {
            out.retained.rows.push_back(frame.rows[i]);
        }
    }
    const double fraction = static_cast<double>(out.retained.size()) / static_cast<double>(frame.size());
    if (fraction < 0.5) {
        throw Error(ErrorKind::ExcessiveTrim,
                    fmt::format("only {:.1f}% of rows have |residual| <= {}", 100.0 * fraction, threshold));
    }
    if (out.dropped.empty()) {
        out.model = model;
    } else {
        out.model = fit_gam(out.retained, model.spec(), options);
        out.model.covariates = model.covariates;
        out.model.years = model.years;
        out.model.countries = model.countries;
    }
    out.model.trim = {true, threshold, fraction, frame.size(), out.retained.size()};
    return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json vec_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd json_vec(const json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json mat_json(const Eigen::MatrixXd& M) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(M.cols()));
        for (Eigen::Index c = 0; c < M.cols(); ++c) row[static_cast<std::size_t>(c)] = M(r, c);
        rows.push_back(row);
    }
    return {{"rows", M.rows()}, {"cols", M.cols()}, {"data", rows}};
}

Eigen::MatrixXd json_mat(const json& j) {
    Eigen::MatrixXd M(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
    const auto& data = j.at("data");
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        for (Eigen::Index c = 0; c < M.cols(); ++c) M(r, c) = data.at(r).at(c).get<double>();
    }
    return M;
}

std::string_view layout_name(BlockLayout layout) {
    switch (layout) {
    case BlockLayout::Plain: return "plain";
    case BlockLayout::ByLevel: return "by_level";
    case BlockLayout::PerLevel: return "per_level";
    case BlockLayout::Indicator: return "indicator";
    }
    return "plain";
}

BlockLayout parse_layout(const std::string& s) {
    for (auto l : {BlockLayout::Plain, BlockLayout::ByLevel, BlockLayout::PerLevel, BlockLayout::Indicator}) {
        if (layout_name(l) == s) return l;
    }
    throw Error(ErrorKind::Parse, fmt::format("unknown block layout '{}'", s));
}

json spec_json(const ModelSpec& spec) {
    json parametric = json::array();
    for (auto p : spec.parametric) parametric.push_back(std::string(to_string(p)));
    json smooths = json::array();
    for (const auto& s : spec.smooths) {
        smooths.push_back({{"name", s.name},
                           {"kind", std::string(to_string(s.kind))},
                           {"covariate", s.covariate},
                           {"factors", s.factors},
                           {"k", s.k},
                           {"m", s.m}});
    }
    return {{"parametric", parametric}, {"smooths", smooths}, {"shrinkage_epsilon", spec.shrinkage_epsilon}};
}

ModelSpec json_spec(const json& j) {
    ModelSpec spec;
    for (const auto& p : j.at("parametric")) spec.parametric.push_back(parse_parametric_term(p.get<std::string>()));
    for (const auto& s : j.at("smooths")) {
        SmoothTermSpec t;
        t.name = s.at("name").get<std::string>();
        t.kind = parse_smooth_kind(s.at("kind").get<std::string>());
        t.covariate = s.at("covariate").get<std::string>();
        t.factors = s.at("factors").get<std::vector<std::string>>();
        t.k = s.at("k").get<int>();
        t.m = s.at("m").get<int>();
        spec.smooths.push_back(std::move(t));
    }
    spec.shrinkage_epsilon = j.at("shrinkage_epsilon").get<double>();
    return spec;
}

json block_json(const SmoothBlock& b) {
    json pens = json::array();
    for (const auto& p : b.penalties) {
        pens.push_back({{"matrix", mat_json(p.matrix)}, {"offset", p.offset}, {"replicate", p.replicate}});
    }
    json j = {{"layout", std::string(layout_name(b.layout))},
              {"width", b.width()},
              {"knots", b.knots()},
              {"level_width", b.level_width},
              {"levels", b.levels},
              {"boundary_low", b.boundary_low},
              {"boundary_high", b.boundary_high},
              {"penalties", pens}};
    j["constraint"] = b.constraint ? mat_json(*b.constraint) : json(nullptr);
    return j;
}

SmoothBlock json_block(const json& j) {
    SmoothBlock b;
    b.layout = parse_layout(j.at("layout").get<std::string>());
    const auto knots = j.at("knots").get<std::vector<double>>();
    if (!knots.empty()) b.spline = CubicRegressionSpline(knots);
    if (!j.at("constraint").is_null()) b.constraint = json_mat(j.at("constraint"));
    b.level_width = j.at("level_width").get<Eigen::Index>();
    b.levels = j.at("levels").get<std::vector<std::string>>();
    b.boundary_low = j.at("boundary_low").get<double>();
    b.boundary_high = j.at("boundary_high").get<double>();
    for (const auto& p : j.at("penalties")) {
        b.penalties.push_back(
            {json_mat(p.at("matrix")), p.at("offset").get<Eigen::Index>(), p.at("replicate").get<Eigen::Index>()});
    }
    b.columns.resize(0, j.at("width").get<Eigen::Index>());
    return b;
}

json series_json(const YearSeries& s) {
    json out = json::array();
    for (const auto& [year, value] : s) out.push_back(json::array({year, value}));
    return out;
}

YearSeries json_series(const json& j) {
    YearSeries s;
    for (const auto& e : j) s[e.at(0).get<int>()] = e.at(1).get<double>();
    return s;
}

} // namespace

std::string model_to_json(const FittedModel& model) {
    const auto& r = model.recipe;
    json terms = json::array();
    for (std::size_t t = 0; t < r.terms.size(); ++t) {
        const auto& term = r.terms[t];
        json jt = {{"name", term.name},
                   {"first", term.first},
                   {"width", term.width},
                   {"smooth", term.smooth},
                   {"edf", model.edf.at(t)}};
        if (term.smooth) jt["block"] = block_json(term.block);
        terms.push_back(std::move(jt));
    }
    json kct = json::array();
    for (const auto& [key, series] : model.covariates.kct) {
        kct.push_back({{"country", key.first}, {"segment", std::string(to_string(key.second))}, {"series", series_json(series)}});
    }
    json doc = {
        {"schema", std::string(kModelSchema)},
        {"spec", spec_json(r.spec)},
        {"coding", {{"ages", r.coding.ages}, {"age", r.coding.age}, {"gender_age", r.coding.gender_age}}},
        {"columns", r.cols},
        {"terms", terms},
        {"beta", vec_json(model.beta)},
        {"rho", vec_json(model.rho)},
        {"sigma2", model.sigma2},
        {"reml_score", model.reml_score},
        {"rss", model.rss},
        {"n", model.n},
        {"iterations", model.iterations},
        {"used_fallback", model.used_fallback},
        {"trim",
         {{"applied", model.trim.applied},
          {"threshold", model.trim.threshold},
          {"retained_fraction", model.trim.retained_fraction},
          {"original_rows", model.trim.original_rows},
          {"retained_rows", model.trim.retained_rows}}},
        {"covariates",
         {{"split_age", model.covariates.split_age},
          {"missing_cells", model.covariates.missing_cells},
          {"kt", series_json(model.covariates.kt)},
          {"kct", kct}}},
        {"years", {model.years.first, model.years.last}},
        {"countries", model.countries},
    };
    return doc.dump(1);
}

FittedModel model_from_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Parse, fmt::format("model file is not valid JSON: {}", e.what()));
    }
    const auto schema = doc.value("schema", std::string{});
    if (schema != kModelSchema) {
        throw Error(ErrorKind::Version, fmt::format("model schema '{}' is not supported (expected '{}')", schema, kModelSchema));
    }
    try {
        FittedModel m;
        m.recipe.spec = json_spec(doc.at("spec"));
        const auto& coding = doc.at("coding");
        m.recipe.coding.ages = coding.at("ages").get<std::vector<int>>();
        m.recipe.coding.age = coding.at("age").get<bool>();
        m.recipe.coding.gender_age = coding.at("gender_age").get<bool>();
        m.recipe.cols = doc.at("columns").get<Eigen::Index>();
        std::size_t smooth_index = 0;
        for (const auto& jt : doc.at("terms")) {
            DesignTerm t;
            t.name = jt.at("name").get<std::string>();
            t.first = jt.at("first").get<Eigen::Index>();
            t.width = jt.at("width").get<Eigen::Index>();
            t.smooth = jt.at("smooth").get<bool>();
            if (t.smooth) {
                t.spec = m.recipe.spec.smooths.at(smooth_index++);
                t.block = json_block(jt.at("block"));
            }
            m.edf.push_back(jt.at("edf").get<double>());
            m.recipe.terms.push_back(std::move(t));
        }
        m.beta = json_vec(doc.at("beta"));
        m.rho = json_vec(doc.at("rho"));
        m.sigma2 = doc.at("sigma2").get<double>();
        m.reml_score = doc.at("reml_score").get<double>();
        m.rss = doc.at("rss").get<double>();
        m.n = doc.at("n").get<std::size_t>();
        m.iterations = doc.at("iterations").get<int>();
        m.used_fallback = doc.at("used_fallback").get<bool>();
        const auto& trim = doc.at("trim");
        m.trim = {trim.at("applied").get<bool>(), trim.at("threshold").get<double>(),
                  trim.at("retained_fraction").get<double>(), trim.at("original_rows").get<std::size_t>(),
                  trim.at("retained_rows").get<std::size_t>()};
        const auto& cov = doc.at("covariates");
        m.covariates.split_age = cov.at("split_age").get<int>();
        m.covariates.missing_cells = cov.at("missing_cells").get<std::size_t>();
        m.covariates.kt = json_series(cov.at("kt"));
        for (const auto& e : cov.at("kct")) {
            const auto seg = e.at("segment").get<std::string>() == "low" ? Segment::Low : Segment::High;
            m.covariates.kct[{e.at("country").get<std::string>(), seg}] = json_series(e.at("series"));
        }
        m.years = {doc.at("years").at(0).get<int>(), doc.at("years").at(1).get<int>()};
        m.countries = doc.at("countries").get<std::vector<std::string>>();
        if (m.beta.size() != m.recipe.cols) throw Error(ErrorKind::Parse, "coefficient count differs from column count");
        return m;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Parse, fmt::format("malformed model file: {}", e.what()));
    }
}

void save_model(const FittedModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write {}", path.string()));
    out << model_to_json(model) << '\n';
    if (!out) throw Error(ErrorKind::Io, fmt::format("failed writing {}", path.string()));
}

FittedModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, fmt::format("cannot read {}", path.string()));
    std::stringstream buffer;
    buffer << in.rdbuf();
    return model_from_json(buffer.str());
}

} // namespace mortgam
