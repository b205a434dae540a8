import json

import numpy as np
import pandas as pd
import pytest
import yaml

import main
from src.cli_io import load_csv, load_run_config, run, sim_spec_from_config, simulate, write_series_csv
from src.errors import ConfigError, DataError
from src.fp_sird import conjugate_posteriors, exposures, posterior_medians
from src.schema import (
    BacktestConfig,
    DataConfig,
    ForecastConfig,
    McmcConfig,
    OutputConfig,
    RateTriple,
    RunConfig,
    SimSpec,
)
from tests.conftest import TRUE_RATES, make_params

PARAMS_HEADER = (
    "date,s_prev,"
    "beta_median,beta_lower,beta_upper,gamma_median,gamma_lower,gamma_upper,nu_median,nu_lower,nu_upper,"
    "eR_median,eR_lower,eR_upper,delta_c,fitted_delta_c,delta_d,fitted_delta_d"
)
FORECAST_HEADER = "horizon,date,target,point,mean,lower,upper"
QUICK_CHAIN = McmcConfig(n_iter=60, burn_in=20, adapt_start=30, adapt_every=10, path_draws=5)


def _write_frame(path, columns: dict):
    pd.DataFrame(columns).to_csv(path, index=False)
    return path


def _first_line(path) -> str:
    with open(path, "r", encoding="utf-8") as f:
        return f.readline().rstrip("\n")


@pytest.fixture(scope="module")
def simulated_file(tmp_path_factory):
    result = simulate(SimSpec(params=make_params(), n_days=60, population=1e7, i0=1000), seed=17)
    return write_series_csv(result.series, tmp_path_factory.mktemp("sim") / "series.csv"), result.series


# ============ ingestion ============

def test_load_daily_file(tmp_path):
    path = _write_frame(tmp_path / "daily.csv", {
        "date": ["2020-03-01", "2020-03-02", "2020-03-03"],
        "confirmed_daily": [10, 12, 8],
        "deaths_daily": [1, 0, 1],
        "recovered_daily": [2, 3, 4],
        "active": [107, 116, 119],
        "population": [1e6, 1e6, 1e6],
    })
    loaded = load_csv(path, start_threshold=None)
    series = loaded.series
    # the first row is the initial state
    assert series.n_days == 2
    assert series.i0 == 107
    np.testing.assert_array_equal(series.delta_c, [12, 8])
    np.testing.assert_array_equal(series.i[1:], [116, 119])
    assert series.population == 1e6
    assert series.name == "daily"
    assert loaded.testing is None and loaded.weekly is None


def test_load_cumulative_file(tmp_path):
    path = _write_frame(tmp_path / "cum.csv", {
        "date": ["2020-03-01", "2020-03-02", "2020-03-03"],
        "confirmed_cum": [1000, 1010, 1030],
        "deaths_daily": [0, 0, 0],
        "population": [1e7] * 3,
    })
    series = load_csv(path).series
    np.testing.assert_array_equal(series.delta_c, [10, 20])
    assert series.i0 == 1000
    assert series.missing_rc.all()
    assert str(series.dates[0]) == "2020-03-02"


def test_sample_starts_at_the_threshold(tmp_path):
    path = _write_frame(tmp_path / "late.csv", {
        "date": pd.date_range("2020-03-01", periods=5).strftime("%Y-%m-%d"),
        "confirmed_daily": [100, 400, 600, 300, 200],
        "deaths_daily": [0, 0, 1, 0, 1],
        "population": [1e7] * 5,
    })
    series = load_csv(path, start_threshold=1000).series
    assert series.n_days == 2
    assert str(series.dates[0]) == "2020-03-04"
    np.testing.assert_array_equal(series.delta_c, [300, 200])
    # confirmed up to the start row less its deaths
    assert series.i0 == 1099
    with pytest.raises(DataError, match="threshold"):
        load_csv(path, start_threshold=1e6)


def test_daily_and_cumulative_layouts_agree(tmp_path):
    dates = pd.date_range("2020-03-01", periods=5).strftime("%Y-%m-%d")
    common = {"date": dates, "deaths_daily": [0, 0, 1, 0, 1], "population": [1e7] * 5}
    daily = _write_frame(tmp_path / "daily.csv", {**common, "confirmed_daily": [100, 400, 600, 300, 200]})
    cumulative = _write_frame(tmp_path / "cum.csv", {**common, "confirmed_cum": [100, 500, 1100, 1400, 1600]})
    first, second = load_csv(daily).series, load_csv(cumulative).series
    np.testing.assert_array_equal(first.dates, second.dates)
    np.testing.assert_array_equal(first.delta_c, second.delta_c)
    np.testing.assert_array_equal(first.delta_d, second.delta_d)
    assert first.i0 == second.i0 == 1099


def test_date_gap_is_rejected(tmp_path):
    path = _write_frame(tmp_path / "gap.csv", {
        "date": ["2020-03-01", "2020-03-03", "2020-03-04"],
        "confirmed_daily": [1, 2, 3],
        "deaths_daily": [0, 0, 0],
        "population": [1e6] * 3,
    })
    with pytest.raises(DataError, match="date gap"):
        load_csv(path, start_threshold=None)


def test_negative_counts_are_floored(tmp_path):
    path = _write_frame(tmp_path / "neg.csv", {
        "date": ["2020-03-01", "2020-03-02", "2020-03-03"],
        "confirmed_daily": [10, -2, 5],
        "deaths_daily": [0, 0, 0],
        "population": [1e6] * 3,
    })
    loaded = load_csv(path, start_threshold=None, i0=100)
    np.testing.assert_array_equal(loaded.series.delta_c, [0, 5])
    assert loaded.diagnostics.as_dict() == {"negative_counts_floored": 1}


def test_missing_columns_and_files(tmp_path):
    path = _write_frame(tmp_path / "bad.csv", {"date": ["2020-03-01"], "confirmed_daily": [1]})
    with pytest.raises(DataError, match="deaths_daily"):
        load_csv(path, population=1e6, start_threshold=None)
    with pytest.raises(DataError, match="not found"):
        load_csv(tmp_path / "absent.csv")
    no_population = _write_frame(tmp_path / "nopop.csv", {
        "date": ["2020-03-01", "2020-03-02"], "confirmed_daily": [1, 2], "deaths_daily": [0, 0]})
    with pytest.raises(DataError, match="population"):
        load_csv(no_population, start_threshold=None, i0=10)


def test_non_numeric_counts_are_rejected(tmp_path):
    path = _write_frame(tmp_path / "text.csv", {
        "date": ["2020-03-01", "2020-03-02", "2020-03-03"],
        "confirmed_daily": [10, 12, 8],
        "deaths_daily": [1, 0, 1],
        "tests": [100, "pending", 90],
        "positives": [5, 6, 4],
        "population": [1e6] * 3,
    })
    with pytest.raises(DataError, match="non-numeric tests"):
        load_csv(path, start_threshold=None)


def test_missing_recoveries_are_masked(tmp_path):
    path = _write_frame(tmp_path / "rc.csv", {
        "date": ["2020-03-01", "2020-03-02", "2020-03-03", "2020-03-04"],
        "confirmed_daily": [5, 10, 12, 8],
        "deaths_daily": [0, 1, 0, 1],
        "recovered_daily": [2, 3, None, 4],
        "population": [1e6] * 4,
    })
    series = load_csv(path, start_threshold=None, i0=100).series
    assert series.missing_rc.tolist() == [False, True, False]
    assert series.delta_rc[1] == 0.0


def test_written_series_reads_back(simulated_file):
    path, original = simulated_file
    loaded = load_csv(path).series
    np.testing.assert_array_equal(loaded.dates, original.dates)
    for attr in ("delta_c", "delta_d", "delta_rc", "i", "s"):
        np.testing.assert_array_equal(getattr(loaded, attr), getattr(original, attr))
    assert loaded.population == original.population


def test_mixed_frequency_columns_read_back(tmp_path):
    sim = simulate(SimSpec(params=make_params(k=2.0), n_days=56, population=1e7, i0=2000), seed=3).datasets[0]
    path = write_series_csv(sim.series, tmp_path / "mf.csv", sim.testing, sim.weekly)
    data = load_csv(path).mixed_frequency()
    np.testing.assert_allclose(data.testing.rho, sim.testing.rho, rtol=1e-15)
    np.testing.assert_array_equal(data.weekly.total, sim.weekly.total)
    np.testing.assert_array_equal(data.weekly.release_days, [7, 14, 21, 28, 35, 42, 49, 56])
    with pytest.raises(ConfigError):
        load_csv(write_series_csv(sim.series, tmp_path / "plain.csv")).mixed_frequency()


# ============ simulation ============

def test_simulation_is_seeded():
    spec = SimSpec(params=make_params(alpha=[0.05, 0.02, 0.02]), n_days=50, population=1e7, i0=1000)
    first, second = simulate(spec, seed=8), simulate(spec, seed=8)
    np.testing.assert_array_equal(first.series.delta_c, second.series.delta_c)
    np.testing.assert_array_equal(first.datasets[0].rates, second.datasets[0].rates)
    assert not np.array_equal(first.series.delta_c, simulate(spec, seed=9).series.delta_c)


def test_zero_loadings_keep_rates_constant():
    result = simulate(SimSpec(params=make_params(), n_days=40), seed=1)
    rates = result.datasets[0].rates
    assert np.ptp(rates, axis=0).max() == 0.0
    np.testing.assert_allclose(rates[0], TRUE_RATES.as_array(), rtol=1e-12)


def test_simulated_counts_have_poisson_moments():
    rates = RateTriple(beta=0.1, gamma=0.095, nu=0.005)
    result = simulate(SimSpec(params=make_params(rates), n_days=1000, population=1e8, i0=5000), seed=12)
    series = result.series
    assert not result.truncated
    means = exposures(series) * rates.as_array()
    residuals = (series.observations() - means) / np.sqrt(means)
    assert np.all(np.abs(residuals.mean(axis=0)) < 0.15)
    assert np.all(np.abs(residuals.var(axis=0) - 1.0) < 0.15)


def test_extinction_truncates_the_sample():
    spec = SimSpec(params=make_params(RateTriple(beta=0.01, gamma=0.9, nu=0.05)), n_days=60, population=1e6, i0=5)
    result = simulate(spec, seed=0)
    assert result.truncated
    assert result.series.n_days < 60
    assert result.series.i[-1] == 0
    assert len(result.datasets[0].rates) == result.series.n_days


def test_mixed_frequency_simulation_under_reports():
    sim = simulate(SimSpec(params=make_params(k=2.0), n_days=56, population=1e7, i0=2000), seed=4).datasets[0]
    assert np.all(sim.extras["i_star"] >= sim.series.i[1:])
    assert np.all(sim.weekly.excess >= 0)
    np.testing.assert_allclose(sim.extras["inflation"], np.exp(2.0 * sim.testing.rho))


# ============ configuration ============

def test_sim_spec_from_config():
    spec = sim_spec_from_config({"n_days": 50, "rates": {"beta": 0.2, "gamma": 0.1, "nu": 0.01},
                                 "alpha": [0.05, 0.0, 0.0], "k": 2.0})
    assert spec.n_days == 50
    assert spec.params.k == 2.0
    np.testing.assert_array_equal(spec.params.alpha, [0.05, 0.0, 0.0])
    for section in (None, {"n_days": 10, "rates": {"beta": 0.2, "gamma": 0.1, "nu": 0.01}},
                    {"rates": {"beta": -0.2, "gamma": 0.1, "nu": 0.01}}, {"rates": {"beta": 0.2}}):
        with pytest.raises(ConfigError):
            sim_spec_from_config(section)


def test_load_run_config(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump({"model": "tvp-beta", "seed": 1, "mcmc": {"n_iter": 100, "burn_in": 10}}))
    config = load_run_config(path, {"seed": 7, "model": None, "output.directory": str(tmp_path / "out")})
    assert config.seed == 7
    assert config.model.value == "tvp-beta"
    assert config.mcmc.n_iter == 100
    assert config.output.directory == str(tmp_path / "out")

    path.write_text(yaml.safe_dump({"model": "seir"}))
    with pytest.raises(ConfigError):
        load_run_config(path)
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "absent.yaml")


# ============ commands ============

def test_fixed_rate_fit_writes_conjugate_medians(toy_series, tmp_path):
    path = write_series_csv(toy_series, tmp_path / "toy.csv")
    config = RunConfig(model="fp", seed=1, data=DataConfig(path=str(path), start_threshold=None),
                       mcmc=McmcConfig(n_iter=300, burn_in=100), output=OutputConfig(directory=str(tmp_path / "out")))
    summary = run(config, "fit")
    assert summary["n_draws"] == 200
    out = tmp_path / "out"
    assert _first_line(out / "params.csv") == PARAMS_HEADER
    params = pd.read_csv(out / "params.csv")
    medians = posterior_medians(conjugate_posteriors(toy_series))
    assert len(params) == toy_series.n_days
    np.testing.assert_allclose(params["beta_median"], medians.beta, rtol=1e-15)
    np.testing.assert_allclose(params["nu_median"], medians.nu, rtol=1e-15)
    er = params["beta_median"] * params["s_prev"] / toy_series.population / (params["gamma_median"] + params["nu_median"])
    np.testing.assert_allclose(params["eR_median"], er, rtol=1e-12)
    assert (params["eR_lower"] <= params["eR_upper"]).all()
    assert json.loads((out / "summary.json").read_text())["model"] == "fp"


def test_forecast_run_is_byte_identical(simulated_file, tmp_path):
    path, series = simulated_file

    def forecast_into(directory):
        config = RunConfig(model="tvp-beta", seed=5, data=DataConfig(path=str(path)),
                           mcmc=QUICK_CHAIN.model_copy(update={"harmonics": False}),
                           forecast=ForecastConfig(horizon=7, reps_per_draw=5, max_draws=10),
                           output=OutputConfig(directory=str(directory)))
        return run(config, "forecast")

    summary = forecast_into(tmp_path / "a")
    forecast_into(tmp_path / "b")
    for name in ("params.csv", "posterior.csv", "forecast.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert _first_line(tmp_path / "a" / "params.csv") == PARAMS_HEADER
    assert _first_line(tmp_path / "a" / "forecast.csv") == FORECAST_HEADER
    forecast = pd.read_csv(tmp_path / "a" / "forecast.csv")
    assert len(forecast) == 14
    assert forecast["date"].iloc[0] == str(series.dates[-1] + np.timedelta64(1, "D"))
    assert set(summary["acceptance"]) == {"alpha", "theta_l0"}
    assert len(summary["weekly_totals_median"]["delta_c"]) == 1


def test_simulate_command(tmp_path):
    config = RunConfig(seed=2, output=OutputConfig(directory=str(tmp_path)),
                       simulation={"n_days": 40, "rates": {"beta": 0.2, "gamma": 0.1, "nu": 0.01}})
    summary = run(config, "simulate")
    assert summary["files"] == ["series.csv"]
    frame = pd.read_csv(tmp_path / "series.csv")
    assert {"beta_true", "gamma_true", "nu_true"} <= set(frame.columns)
    assert load_csv(tmp_path / "series.csv").series.n_days == 40


def test_evaluate_command(tmp_path):
    dates = pd.date_range("2020-05-01", periods=12).strftime("%Y-%m-%d")
    rows = [{"date": d, "model": model, "horizon": 1, "target": "delta_c", "forecast": y + offset, "realized": y}
            for model, offset in (("a", 1.0), ("b", 3.0)) for d, y in zip(dates, range(12))]
    records = _write_frame(tmp_path / "records.csv", pd.DataFrame(rows).to_dict("list"))
    config = RunConfig(data=DataConfig(forecasts_path=str(records)), backtest=BacktestConfig(reference="b"),
                       output=OutputConfig(directory=str(tmp_path / "out")))
    summary = run(config, "evaluate")
    assert summary["evaluated_rows"] == 2
    table = pd.read_csv(tmp_path / "out" / "eval.csv").set_index("model")
    assert table.loc["a", "relative_rmsfe"] == pytest.approx(1 / 3)

    _write_frame(tmp_path / "short.csv", {"date": dates, "model": ["a"] * 12})
    with pytest.raises(DataError, match="missing columns"):
        run(config.model_copy(update={"data": DataConfig(forecasts_path=str(tmp_path / "short.csv"))}), "evaluate")
    with pytest.raises(ConfigError):
        run(config, "plot")


def test_cli_reports_configuration_errors(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump({"model": "tvp", "data": {"path": str(tmp_path / "absent.csv")}}))
    out = tmp_path / "out"
    assert main.main(["fit", "--config", str(path), "--out", str(out)]) == 2
    record = json.loads((out / "summary.json").read_text())
    assert record["error"]["type"] == "ConfigError"
    assert record["command"] == "fit"


def test_evaluate_rejects_malformed_records(tmp_path):
    records = tmp_path / "records.csv"
    records.write_text("date,model,horizon\n2020-05-01,a,1\n2020-05-02,a,1,delta_c,3\n", encoding="utf-8")
    config = RunConfig(data=DataConfig(forecasts_path=str(records)), output=OutputConfig(directory=str(tmp_path / "out")))
    with pytest.raises(DataError, match="cannot parse"):
        run(config, "evaluate")


@pytest.mark.parametrize("model", ["fp", "tvp"])
def test_fit_on_cumulative_only_file(simulated_file, tmp_path, model):
    path, series = simulated_file
    frame = pd.read_csv(path)[["date", "confirmed_cum", "deaths_daily", "population"]]
    cumulative = _write_frame(tmp_path / "cum.csv", frame.to_dict("list"))
    config = RunConfig(model=model, seed=3, data=DataConfig(path=str(cumulative)),
                       mcmc=QUICK_CHAIN.model_copy(update={"harmonics": False}),
                       output=OutputConfig(directory=str(tmp_path / "out")))
    run(config, "fit")
    params = pd.read_csv(tmp_path / "out" / "params.csv")
    assert len(params) == series.n_days
    assert np.isfinite(params["beta_median"]).all()
    if model == "tvp":
        # no recoveries observed: gamma stays at the default rate
        np.testing.assert_allclose(params["gamma_median"], 0.07, rtol=1e-9)
    else:
        assert params["gamma_median"].iloc[0] == pytest.approx(0.07, rel=0.01)


def test_cli_reports_unexpected_errors(tmp_path, monkeypatch):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump({"model": "fp"}))
    out = tmp_path / "out"

    def broken(config, command):
        raise RuntimeError("disk vanished")

    monkeypatch.setattr(main, "run", broken)
    assert main.main(["fit", "--config", str(path), "--out", str(out)]) == 1
    record = json.loads((out / "summary.json").read_text())
    assert record["error"] == {"type": "RuntimeError", "message": "disk vanished", "exit_code": 1}
    assert record["command"] == "fit"
