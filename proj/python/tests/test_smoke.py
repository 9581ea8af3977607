import json
import math

import numpy as np
import pytest

import mortgam


@pytest.fixture(scope="module")
def panel():
    return mortgam.Panel.synthetic(["AUT", "CZE"], 1990, 2004, omega=9, seed=3)


def test_panel_columns(panel):
    cols = panel.columns()
    assert len(panel) == 2 * 2 * 10 * 15
    assert np.allclose(np.exp(cols["log_rate"]), cols["rate"], rtol=1e-12)
    assert np.all(cols["cohort"] == cols["year"] - cols["age"])
    assert panel.years == (1990, 2004)


def test_covariates_match_numpy(panel):
    cols = panel.columns()
    cov = mortgam.covariates(panel, split_age=4)
    for year, value in cov["kt"].items():
        assert value == pytest.approx(cols["log_rate"][cols["year"] == year].mean(), abs=1e-12)
    country = np.array(cols["country"])
    low = (country == "CZE") & (cols["age"] <= 4) & (cols["year"] == 1995)
    assert cov["kct"][("CZE", "low")][1995] == pytest.approx(cols["log_rate"][low].mean(), abs=1e-12)


def test_acf_and_qq():
    a = mortgam.acf([1.0, -1.0] * 50, 3)
    assert a[0] == 1.0
    assert a[1] == pytest.approx(-0.99, abs=1e-12)
    q = mortgam.qq([1.0, -1.0, 0.0])
    assert q[:, 1] == pytest.approx([-math.sqrt(1.5), 0.0, math.sqrt(1.5)], abs=1e-12)
    assert mortgam.mse([0.0, 0.0], [1.0, 2.0], "log") == 2.5


def test_single_population_fit_and_forecast():
    a = [-7.0 + 0.4 * x for x in range(8)]
    b = [0.2 - 0.01 * x for x in range(8)]
    k = [4.0 - 0.5 * t for t in range(30)]
    p = mortgam.Panel.rank_one(["AAA"], a, b, k, first_year=1970).select("AAA", "female")
    model = mortgam.fit(p, model="single", split_age=3)
    assert model.rss / model.n < 1e-6
    assert set(model.edf) == {"(Intercept)", "age", "s(kt,age)"}
    f = model.forecast(5)
    truth = [a[x] + b[x] * (4.0 - 0.5 * (y - 1970)) for x, y in zip(f["age"], f["year"])]
    assert np.max(np.abs(f["log_rate"] - np.array(truth))) < 1e-4


def test_multi_fit_trim_and_json(panel):
    model = mortgam.fit(panel, split_age=4)
    resid = model.residuals()
    assert resid.shape == (len(panel),)
    assert np.allclose(model.predict(panel), panel.columns()["log_rate"] - resid)
    assert json.loads(model.to_json())["schema"] == "mortgam.model/1"
    trimmed = mortgam.trim_refit(model, 1.0)
    assert 0.5 <= trimmed.retained_fraction <= 1.0
    assert len(trimmed.dropped) == round(len(panel) * (1.0 - trimmed.retained_fraction))


def test_lee_carter_normalization(panel):
    lc = mortgam.lee_carter(panel, "AUT", "male")
    assert lc["b"].sum() == pytest.approx(1.0, abs=1e-12)
    assert lc["kappa"].sum() == pytest.approx(0.0, abs=1e-9)


def test_errors_carry_their_kind(panel):
    with pytest.raises(mortgam.MortgamError) as info:
        mortgam.covariates(panel, split_age=200)
    assert info.value.kind == "spec"
    with pytest.raises(mortgam.MortgamError) as info:
        mortgam.run(json.dumps({"cutoff": 1900}))
    assert info.value.kind == "config"


def test_run_pipeline(tmp_path):
    config = json.loads(mortgam.default_config())
    config.update(
        data={"source": "synthetic", "dir": str(tmp_path / "data")},
        countries=["AUT"],
        years=[1990, 2005],
        omega=9,
        split_age=4,
        cutoff=2001,
        horizon=4,
        mode="single",
        out=str(tmp_path / "out"),
    )
    config["diagnostics"].update(scatter_ages=[3, 7], max_lag=5, curve_grid=10)
    config["basis"]["single_factor_smooth"] = 4
    report = mortgam.run(json.dumps(config)).splitlines()
    assert report[0] == "kind,country,gender,model,scale,train_mse,test_mse,ratio"
    assert sum(line.startswith("ratio,") for line in report) == 4
