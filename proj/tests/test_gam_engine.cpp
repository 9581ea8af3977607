#include "support.hpp"

#include "mortgam/forecasting.hpp"
#include "mortgam/gam.hpp"
#include "mortgam/pls.hpp"
#include "mortgam/reml.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace mortgam;

namespace {

ModelFrame synthetic_frame(std::vector<std::string> countries, YearRange years, int omega, std::uint64_t seed,
                           int split_age) {
    const auto panel = synth_panel(hmd_like_spec(std::move(countries), years, omega, seed), seed);
    return attach_covariates(panel, compute_covariates(panel, split_age));
}

/// About 400 rows through every term kind of the multi-population formula.
Design small_multi_design() {
    const auto frame = synthetic_frame({"AUT", "CZE"}, {1990, 1999}, 9, 4, 4);
    return assemble_design(frame, multi_population_spec({5, 5, 3}));
}

Eigen::VectorXd spread_lambda(int m, double lo, double hi) {
    Eigen::VectorXd rho = Eigen::VectorXd::LinSpaced(m, lo, hi);
    return rho.array().exp();
}

double grid_argmin(const Design& d, double lo, double hi, double step) {
    double best = lo, best_score = INFINITY;
    for (double r = lo; r <= hi; r += step) {
        const double s = support::dense_reml(d, Eigen::VectorXd::Constant(1, r));
        if (s < best_score) best_score = s, best = r;
    }
    return best;
}

} // namespace

TEST_CASE("treatment coding column count") {
    ModelFrame frame;
    for (auto g : {Gender::Female, Gender::Male}) {
        for (int age : {0, 1, 2}) {
            for (int year : {2000, 2001}) frame.rows.push_back({"A", g, age, year, year - age, -1.0 - age, 0.0, 0.0});
        }
    }
    ModelSpec spec;
    spec.parametric = {ParametricTerm::Age, ParametricTerm::GenderAge};
    const auto d = assemble_design(frame, spec);
    CHECK(d.cols() == 1 + 2 + 3);
    CHECK(d.penalties.empty());
}

TEST_CASE("single-population column accounting") {
    const int omega = 12, k = 4;
    const auto frame = synthetic_frame({"AUT"}, {1980, 1995}, omega, 2, 6);
    ModelFrame one;
    for (const auto& r : frame.rows) {
        if (r.gender == Gender::Female) one.rows.push_back(r);
    }
    const auto d = assemble_design(one, single_population_spec(k));
    CHECK(d.cols() == 1 + omega + (omega + 1) * k);
    CHECK(d.lambda_count() == 2);
    CHECK(d.recipe.spec.term_names() == std::vector<std::string>{"age", "s(kt,age)"});
}

TEST_CASE("multi-population term list and penalty count") {
    const auto d = small_multi_design();
    std::vector<std::string> names;
    for (const auto& t : d.terms()) names.push_back(t.name);
    CHECK(names == std::vector<std::string>{"(Intercept)", "age", "gender:age", "s(kct)", "s(kct):gender:age",
                                            "s(cohort)", "s(country:gender:age)", "s(kt,country:gender:age)",
                                            "s(cohort,country:gender:age)"});
    // s(kct) 1, by-term one per gender:age level (20), s(cohort) 1, re 1, two fs terms 2 each.
    CHECK(d.lambda_count() == 1 + 20 + 1 + 1 + 2 + 2);
    for (Eigen::Index j = 0; j < d.X.cols(); ++j) CHECK(d.X.col(j).norm() > 0.0);
}

TEST_CASE("spec and coding errors") {
    const auto frame = synthetic_frame({"AUT"}, {1980, 1984}, 5, 1, 2);
    ModelSpec bad;
    bad.parametric = {ParametricTerm::Age};
    bad.smooths.push_back({"s(foo)", SmoothKind::CenteredShrinkage1d, "foo", {}, 4, 2});
    CHECK(support::error_kind([&] { assemble_design(frame, bad); }) == ErrorKind::Spec);

    ModelFrame females;
    for (const auto& r : frame.rows) {
        if (r.gender == Gender::Female) females.rows.push_back(r);
    }
    ModelSpec coded;
    coded.parametric = {ParametricTerm::Age, ParametricTerm::GenderAge};
    CHECK(support::error_kind([&] { assemble_design(females, coded); }) == ErrorKind::Coding);
}

TEST_CASE("closed-form ridge") {
    const auto d = support::hand_design(Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(2.0, 4.0),
                                        {{0, Eigen::MatrixXd::Identity(2, 2)}});
    const auto r = pls_solve(d, Eigen::VectorXd::Ones(1));
    CHECK(std::abs(r.beta(0) - 1.0) < 1e-14);
    CHECK(std::abs(r.beta(1) - 2.0) < 1e-14);
}

TEST_CASE("vanishing penalty gives least squares") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd X(40, 5);
    Eigen::VectorXd y(40);
    for (int i = 0; i < 40; ++i) {
        for (int j = 0; j < 5; ++j) X(i, j) = n01(rng);
        y(i) = n01(rng);
    }
    const Eigen::MatrixXd S = (Eigen::MatrixXd(3, 3) << 2, -1, 0, -1, 2, -1, 0, -1, 2).finished();
    const auto d = support::hand_design(X, y, {{2, S}});
    const Eigen::VectorXd ols = X.colPivHouseholderQr().solve(y);
    const auto r = pls_solve(d, Eigen::VectorXd::Constant(1, 1e-12));
    CHECK((r.beta - ols).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("huge full-rank penalties shrink smooth coefficients away") {
    Eigen::MatrixXd X(12, 4);
    Eigen::VectorXd y(12);
    for (int i = 0; i < 12; ++i) {
        X.row(i) << 1.0, std::sin(i), std::cos(0.7 * i), 0.1 * i;
        y(i) = 1.0 + 2.0 * std::sin(i) + 0.3 * i;
    }
    const auto d = support::hand_design(X, y, {{1, Eigen::MatrixXd::Identity(3, 3)}});
    const auto r = pls_solve(d, Eigen::VectorXd::Constant(1, 1e12));
    CHECK(r.beta.tail(3).norm() < 1e-6);
}

TEST_CASE("sparse solve matches the dense reference") {
    const auto d = small_multi_design();
    REQUIRE(d.rows() <= 500);
    PenalizedSystem sys(d);
    for (auto [lo, hi] : {std::pair{-3.0, 3.0}, std::pair{2.0, -4.0}, std::pair{0.0, 0.0}}) {
        const Eigen::VectorXd lambda = spread_lambda(d.lambda_count(), lo, hi);
        sys.factorize(lambda);
        const Eigen::VectorXd dense = support::dense_beta(d, lambda);
        CHECK((sys.beta() - dense).cwiseAbs().maxCoeff() < 1e-8 * std::max(1.0, dense.cwiseAbs().maxCoeff()));
        const Eigen::VectorXd residual = sys.system().selfadjointView<Eigen::Lower>() * sys.beta() - sys.xty();
        CHECK(residual.cwiseAbs().maxCoeff() < 1e-8 * sys.xty().cwiseAbs().maxCoeff());
    }
}

TEST_CASE("selected inverse against a dense inverse") {
    const auto d = small_multi_design();
    const Eigen::VectorXd lambda = spread_lambda(d.lambda_count(), -2.0, 2.0);
    PenalizedSystem sys(d);
    sys.factorize(lambda);
    const Eigen::MatrixXd X = Eigen::MatrixXd(d.X);
    const Eigen::MatrixXd A = X.transpose() * X + support::dense_penalty(d, lambda);
    const Eigen::MatrixXd Ainv = A.inverse();
    for (int j = 0; j < d.lambda_count(); ++j) {
        const auto& p = d.penalties[j];
        const Eigen::MatrixXd Sj = p.penalty.dense(p.penalty.span());
        const double dense = (Ainv.block(p.first_column, p.first_column, Sj.rows(), Sj.cols()) * Sj).trace();
        CHECK(sys.trace_inverse_penalty(j) == doctest::Approx(dense).epsilon(1e-8));
    }
    const Eigen::VectorXd hat = (X * Ainv * X.transpose()).diagonal();
    CHECK((sys.hat_diagonal() - hat).cwiseAbs().maxCoeff() < 1e-9);
    const Eigen::MatrixXd F = Ainv * (X.transpose() * X);
    const auto edf = sys.term_edf();
    for (std::size_t t = 0; t < d.terms().size(); ++t) {
        const auto& term = d.terms()[t];
        CHECK(edf[t] == doctest::Approx(F.diagonal().segment(term.first, term.width).sum()).epsilon(1e-8));
    }
    for (Eigen::Index i = 0; i < d.cols(); i += 17) CHECK(sys.inverse_entry(i, i) == doctest::Approx(Ainv(i, i)).epsilon(1e-9));
}

TEST_CASE("singular system names the term") {
    Eigen::MatrixXd X(6, 3);
    X << 1, 1, 0.1, 1, 1, 0.5, 1, 1, 0.2, 1, 1, 0.9, 1, 1, 0.4, 1, 1, 0.3;
    const auto d = support::hand_design(X, Eigen::VectorXd::LinSpaced(6, 0.0, 1.0), {{2, Eigen::MatrixXd::Identity(1, 1)}});
    try {
        pls_solve(d, Eigen::VectorXd::Ones(1));
        FAIL("expected a singular fit");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::SingularFit);
        CHECK(std::string(e.what()).find("(parametric)") != std::string::npos);
    }
}

TEST_CASE("restricted likelihood matches the dense formula") {
    const auto ridge = support::hand_design(Eigen::MatrixXd::Identity(3, 3), Eigen::Vector3d(1.0, 2.0, 3.0),
                                            {{0, Eigen::MatrixXd::Identity(3, 3)}});
    RemlObjective obj(ridge);
    CHECK(obj.score(Eigen::VectorXd::Zero(1)) == doctest::Approx(support::dense_reml(ridge, Eigen::VectorXd::Zero(1))).epsilon(1e-12));
    CHECK(obj.score(Eigen::VectorXd::Zero(1)) == obj.score(Eigen::VectorXd::Zero(1)));

    const auto d = small_multi_design();
    RemlObjective multi(d);
    for (double shift : {-2.0, 0.0, 1.5}) {
        const Eigen::VectorXd rho = Eigen::VectorXd::LinSpaced(d.lambda_count(), -1.0, 1.0).array() + shift;
        CHECK(multi.score(rho) == doctest::Approx(support::dense_reml(d, rho)).epsilon(1e-9));
    }
}

TEST_CASE("analytic gradient agrees with central differences") {
    const auto d = small_multi_design();
    RemlObjective obj(d);
    const Eigen::VectorXd rho = Eigen::VectorXd::LinSpaced(d.lambda_count(), -2.0, 3.0);
    const auto ev = obj.evaluate(rho, true);
    const Eigen::VectorXd fd = obj.finite_difference_gradient(rho, 1e-5);
    CHECK((ev.gradient - fd).cwiseAbs().maxCoeff() < 1e-5 * (1.0 + std::abs(ev.score)));
}

TEST_CASE("optimizer finds the grid minimum of the random-intercept toy") {
    const auto d = support::anova_toy();
    const double grid = grid_argmin(d, -8.0, 8.0, 1e-4);
    for (double start : {-5.0, 0.0, 4.0}) {
        RemlObjective obj(d);
        const auto r = optimize_reml(obj, Eigen::VectorXd::Constant(1, start));
        CHECK(std::abs(r.rho(0) - grid) < 1e-3);
        const Eigen::VectorXd fd = obj.finite_difference_gradient(r.rho);
        CHECK(fd.cwiseAbs().maxCoeff() < 1e-3 * (1.0 + std::abs(r.score)));
    }
}

TEST_CASE("scaling the response leaves the argmin in place") {
    const double base = grid_argmin(support::anova_toy(1.0), -8.0, 8.0, 1e-3);
    for (double c : {0.01, 7.5, 300.0}) CHECK(std::abs(grid_argmin(support::anova_toy(c), -8.0, 8.0, 1e-3) - base) < 1e-9);
}

TEST_CASE("smooth with no signal is shrunk out") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n01;
    const int n = 300;
    std::vector<double> x(n);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        x[i] = 10.0 * i / (n - 1);
        y(i) = 3.0 + 0.2 * n01(rng);
    }
    const auto block = center_constraint(shrinkage_modify(crs_basis(x, 10), 0.1));
    Eigen::MatrixXd X(n, 1 + block.width());
    X.col(0).setOnes();
    X.rightCols(block.width()) = Eigen::MatrixXd(block.columns);
    const auto d = support::hand_design(X, y, {{1, block.penalties[0].matrix}});
    RemlObjective obj(d);
    optimize_reml(obj, Eigen::VectorXd::Zero(1));
    CHECK(obj.system().term_edf()[1] < 1.5);
}

TEST_CASE("term edf never grows with its smoothing parameter") {
    const int n = 120;
    std::vector<double> x(n);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        x[i] = 6.0 * i / (n - 1);
        y(i) = std::sin(x[i]) + 0.1 * std::cos(13.0 * i);
    }
    // The spline already spans constants, so it is centered against the intercept.
    const auto centered = center_constraint(crs_basis(x, 12));
    Eigen::MatrixXd X(n, 1 + centered.width());
    X.col(0).setOnes();
    X.rightCols(centered.width()) = Eigen::MatrixXd(centered.columns);
    const auto d = support::hand_design(X, y, {{1, centered.penalties[0].matrix}});
    PenalizedSystem sys(d);
    double previous = INFINITY;
    for (double rho = -10.0; rho <= 15.0; rho += 0.5) {
        sys.factorize(Eigen::VectorXd::Constant(1, std::exp(rho)));
        const double edf = sys.term_edf()[1];
        CHECK(edf <= previous + 1e-9);
        previous = edf;
    }
}

TEST_CASE("iteration cap raises a convergence error with its trace") {
    const auto d = small_multi_design();
    RemlObjective obj(d);
    RemlOptions opt;
    opt.max_iterations = 1;
    try {
        optimize_reml(obj, Eigen::VectorXd::Constant(d.lambda_count(), 5.0), opt);
        FAIL("expected a convergence error");
    } catch (const ConvergenceError& e) {
        CHECK(e.kind() == ErrorKind::Convergence);
        CHECK_FALSE(e.trace().empty());
    }
}

TEST_CASE("noiseless rank-one data: exact fit and linear forecast") {
    const int omega = 20, years = 30;
    std::vector<double> a, b, k;
    for (int x = 0; x <= omega; ++x) {
        a.push_back(-9.0 + 0.09 * x + 0.5 * std::exp(-x));
        b.push_back((1.5 - 0.04 * x) / 22.0);
    }
    for (int t = 0; t < years + 10; ++t) k.push_back(12.0 - 0.8 * t);
    const std::vector<double> k_train(k.begin(), k.begin() + years);
    const auto panel = select_population(synth_panel(rank_one_spec({"AAA"}, a, b, k_train, 0, 1970, 0.0), 1), "AAA",
                                         Gender::Female);
    const auto cov = compute_covariates(panel, 10);
    const auto frame = attach_covariates(panel, cov);
    auto model = fit_gam(frame, single_population_spec(5));
    model.covariates = cov;
    CHECK(model.rss / static_cast<double>(model.n) < 1e-6);

    const auto forecast = forecast_asdr(model, panel, cov, 10);
    CHECK(forecast.records.size() == static_cast<std::size_t>((omega + 1) * 10));
    double worst = 0.0;
    for (const auto& r : forecast.records) {
        const double truth = a[r.age] + b[r.age] * k[r.year - 1970];
        worst = std::max(worst, std::abs(r.log_rate - truth));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("trim keeps everything when residuals are small and drops planted outliers") {
    const int omega = 15;
    std::vector<double> a, b, k;
    for (int x = 0; x <= omega; ++x) {
        a.push_back(-8.0 + 0.1 * x);
        b.push_back(1.0 / 16.0 + 0.002 * x);
    }
    for (int t = 0; t < 25; ++t) k.push_back(5.0 - 0.5 * t + 0.3 * std::sin(t));
    auto panel = synth_panel(rank_one_spec({"AAA", "BBB"}, a, b, k, 0, 1980, 0.01), 21);
    const auto cov = compute_covariates(panel, 7);
    auto frame = attach_covariates(panel, cov);
    const auto spec = multi_population_spec({5, 5, 3});
    const auto model = fit_gam(frame, spec);

    const auto same = trim_refit(model, frame, 0.1);
    CHECK(same.dropped.empty());
    CHECK(same.model.trim.retained_fraction == 1.0);
    CHECK((same.model.beta - model.beta).cwiseAbs().maxCoeff() == 0.0);

    std::vector<std::size_t> planted;
    for (std::size_t i = 7; i < frame.size() && planted.size() < 10; i += frame.size() / 10) planted.push_back(i);
    for (std::size_t j = 0; j < planted.size(); ++j) frame.rows[planted[j]].y += j % 2 ? 1.0 : -1.0;
    const auto dirty = fit_gam(frame, spec);
    const auto trimmed = trim_refit(dirty, frame, 0.1);
    CHECK(trimmed.dropped == planted);
    CHECK(trimmed.model.trim.retained_rows == frame.size() - 10);

    CHECK(support::error_kind([&] { trim_refit(model, frame, 1e-6); }) == ErrorKind::ExcessiveTrim);
}

TEST_CASE("prediction contract and serialization") {
    const auto frame = synthetic_frame({"AUT", "CZE"}, {1990, 2001}, 9, 8, 4);
    const auto model = fit_gam(frame, multi_population_spec({5, 5, 3}));
    const Eigen::VectorXd eta = predict(model, frame);

    ModelFrame reversed;
    reversed.rows.assign(frame.rows.rbegin(), frame.rows.rend());
    CHECK(predict(model, reversed).reverse() == eta);

    const auto restored = model_from_json(model_to_json(model));
    CHECK(predict(restored, frame) == eta);
    CHECK(model_to_json(restored) == model_to_json(model));

    ModelFrame unseen;
    unseen.rows.push_back(frame.rows.front());
    unseen.rows.back().country = "SVK";
    CHECK(support::error_kind([&] { predict(model, unseen); }) == ErrorKind::Level);

    auto text = model_to_json(model);
    text.replace(text.find(kModelSchema), kModelSchema.size(), "mortgam.model/0");
    CHECK(support::error_kind([&] { model_from_json(text); }) == ErrorKind::Version);
    CHECK(support::error_kind([] { model_from_json("{"); }) == ErrorKind::Parse);

    CHECK(model.sigma2 > 0.0);
    CHECK(model.total_edf() <= static_cast<double>(model.beta.size()));
}
