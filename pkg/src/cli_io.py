"""
Command-line plumbing: CSV ingestion, synthetic data, run configuration and
the orchestration that writes every run artifact
"""
import logging
import time
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from src.core_model import aggregate_weekly, effective_reproduction, impute_missing_recoveries, link_forward, poisson_means_array
from src.data_processor import DataProcessor, DataValidator
from src.errors import ConfigError, DataError, DomainError, TvpSirdError
from src.forecasting import TARGETS, evaluation_table, recursive_backtest, simulate_forecast, weekly_totals
from src.fp_sird import conjugate_posteriors, exposures, gibbs_fixed, loglik as fixed_loglik, posterior_medians
from src.inference import build_target, hpdi, rwmh_within_gibbs, summarize_draws
from src.mixed_frequency import weekly_death_mean, weekly_death_score
from src.schema import (
    N_HARMONICS,
    PARAMETERS,
    SEASON_PERIOD,
    CompartmentSeries,
    Diagnostics,
    McmcConfig,
    MixedFrequencyData,
    ModelVariant,
    Panel,
    PosteriorDraws,
    RateTriple,
    RunConfig,
    SimSpec,
    StaticParams,
    TestingSeries,
    TvpState,
    WeeklyDeaths,
)
from src.score_dynamics import cap_outflows, compose_rates, level_step, propagate, scaled_scores_array, seasonal_step

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "fit", "forecast", "backtest", "evaluate")
EVALUATION_COLUMNS = ("date", "model", "horizon", "target", "forecast", "realized")

# default positivity path of the mixed-frequency simulation
POSITIVITY_MEAN = 0.1
POSITIVITY_AMPLITUDE = 0.08
POSITIVITY_PERIOD = 120.0


# ============ CSV ingestion ============

@dataclass
class LoadedData:
    """One country's file turned into model inputs"""
    series: CompartmentSeries
    testing: Optional[TestingSeries] = None
    weekly: Optional[WeeklyDeaths] = None
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def mixed_frequency(self) -> MixedFrequencyData:
        if self.testing is None or self.weekly is None:
            raise ConfigError(
                f"the mixed-frequency model needs tests, positives and excess_weekly columns ({self.series.name})")
        return MixedFrequencyData(series=self.series, testing=self.testing, weekly=self.weekly)


def _column(frame: pd.DataFrame, name: str) -> np.ndarray:
    return pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=float)


def _sample_start(cumulative: np.ndarray, threshold: Optional[float]) -> int:
    if threshold is None:
        return 0
    hits = np.flatnonzero(np.nan_to_num(cumulative) >= threshold)
    if not len(hits):
        raise DataError(f"cumulative confirmed cases never reach the start threshold {threshold:g}")
    return int(hits[0])


def _floor_negative(values: np.ndarray, dates: np.ndarray, column: str, diagnostics: Diagnostics) -> np.ndarray:
    negative = values < 0
    for t in np.flatnonzero(negative):
        logger.warning("Negative %s (%g) on %s floored to 0", column, values[t], dates[t])
    diagnostics.bump("negative_counts_floored", int(negative.sum()))
    return np.where(negative, 0.0, values)


def load_csv(path: Union[str, Path], population: Optional[float] = None,
             start_threshold: Optional[float] = 1000.0, i0: Optional[float] = None,
             name: Optional[str] = None) -> LoadedData:
    """Read one country's daily file.

    The start row is the first whose cumulative confirmed count reaches
    ``start_threshold`` (None starts at the first row). It supplies the
    initial state and the observations are the rows after it, whether the
    file carries ``confirmed_daily`` or only ``confirmed_cum``. I_0 comes from
    the argument, else the ``active`` column on the start row, else
    cumulative confirmed minus deaths and recoveries up to the start row; the
    population from the argument, else the ``population`` column.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"cannot parse {path}: {e}") from e
    if frame.empty:
        raise DataError(f"{path.name}: no data rows")
    report = DataValidator().validate_frame(frame)
    if not report["valid"]:
        raise DataError(f"{path.name}: " + "; ".join(report["issues"]))

    diagnostics = Diagnostics()
    dates = pd.to_datetime(frame["date"]).to_numpy().astype("datetime64[D]")
    daily_input = "confirmed_daily" in frame.columns
    if daily_input:
        confirmed = _column(frame, "confirmed_daily")
        if "confirmed_cum" in frame.columns:
            cumulative = _column(frame, "confirmed_cum")
        else:
            cumulative = np.cumsum(np.nan_to_num(confirmed))
    else:
        cumulative = _column(frame, "confirmed_cum")
        confirmed = np.concatenate([[np.nan], np.diff(cumulative)])
    start = _sample_start(cumulative, start_threshold)
    first = start + 1
    if first >= len(frame):
        raise DataError(f"{path.name}: no observations after the sample start {dates[start]}")

    deaths = _column(frame, "deaths_daily")
    recovered = _column(frame, "recovered_daily") if "recovered_daily" in frame.columns else np.full(len(frame), np.nan)
    obs_dates = dates[first:]
    for column, values in (("confirmed", confirmed[first:]), ("deaths_daily", deaths[first:])):
        if np.isnan(values).any():
            raise DataError(f"{path.name}: missing {column} value on {obs_dates[int(np.argmax(np.isnan(values)))]}")
    delta_c = _floor_negative(confirmed[first:], obs_dates, "confirmed", diagnostics)
    delta_d = _floor_negative(deaths[first:], obs_dates, "deaths_daily", diagnostics)
    delta_rc = _floor_negative(recovered[first:], obs_dates, "recovered_daily", diagnostics)

    if i0 is None:
        active = _column(frame, "active") if "active" in frame.columns else np.full(len(frame), np.nan)
        if np.isfinite(active[start]):
            i0 = active[start]
        else:
            i0 = cumulative[start] - np.nansum(deaths[:first]) - np.nansum(recovered[:first])
        if i0 < 0:
            raise DataError(f"{path.name}: negative initial active infections ({i0:g})")
    if population is None:
        if "population" not in frame.columns or frame["population"].isna().all():
            raise DataError(f"{path.name}: population not given and no population column")
        population = float(frame["population"].dropna().iloc[0])

    try:
        series = CompartmentSeries.from_counts(
            obs_dates, delta_c, delta_d, population, float(i0), delta_rc=delta_rc, name=name or path.stem)
    except ValidationError as e:
        raise DataError(f"{path.name}: {e}") from e

    testing = None
    if "tests" in frame.columns and "positives" in frame.columns:
        full = TestingSeries.from_counts(_column(frame, "tests"), _column(frame, "positives"))
        testing = TestingSeries(tests=full.tests[first:], positives=full.positives[first:],
                                rho=full.rho[first:], carried=full.carried[first:])
    weekly = None
    if "excess_weekly" in frame.columns:
        n_weeks = series.n_days // SEASON_PERIOD
        values = np.nan_to_num(_column(frame, "excess_weekly")[first:])
        weekly = WeeklyDeaths.from_daily(series, values[:n_weeks * SEASON_PERIOD].reshape(n_weeks, SEASON_PERIOD).sum(axis=1))
        diagnostics.bump("excess_weeks_floored", int(weekly.floored.sum()))

    logger.info("Loaded %s: %d days from %s, I0=%g, N=%g", series.name, series.n_days, obs_dates[0], i0, population)
    return LoadedData(series=series, testing=testing, weekly=weekly, diagnostics=diagnostics)


def load_vintages(directory: Union[str, Path], population: Optional[float] = None,
                  start_threshold: Optional[float] = 1000.0) -> List[Tuple[date, CompartmentSeries]]:
    """Load every YYYY-MM-DD.csv snapshot of a directory, oldest first"""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"vintage directory not found: {directory}")
    vintages = []
    for path in sorted(directory.glob("*.csv")):
        try:
            as_of = date.fromisoformat(path.stem)
        except ValueError:
            logger.warning("Skipping %s: file name is not an ISO date", path.name)
            continue
        vintages.append((as_of, load_csv(path, population, start_threshold).series))
    if not vintages:
        raise DataError(f"no YYYY-MM-DD.csv vintages in {directory}")
    return vintages


def write_series_csv(series: CompartmentSeries, path: Union[str, Path], testing: Optional[TestingSeries] = None,
                     weekly: Optional[WeeklyDeaths] = None, truth: Optional[Dict[str, np.ndarray]] = None) -> Path:
    """Write a series in the layout ``load_csv`` reads back.

    The first row is the day before the first observation and carries the
    initial state (active = I_0, cumulative confirmed = I_0) with empty flows.
    """
    path = Path(path)

    def with_start(values) -> np.ndarray:
        return np.concatenate([[np.nan], np.asarray(values, dtype=float)])

    start_date = series.dates[0] - np.timedelta64(series.step_days, "D")
    frame = pd.DataFrame({
        "date": np.datetime_as_string(np.concatenate([[start_date], series.dates]), unit="D"),
        "confirmed_daily": with_start(series.delta_c),
        "confirmed_cum": series.i0 + np.concatenate([[0.0], np.cumsum(series.delta_c)]),
        "recovered_daily": with_start(np.where(series.missing_rc, np.nan, series.delta_rc)),
        "deaths_daily": with_start(series.delta_d),
        "active": series.i,
        "population": series.population,
    })
    if testing is not None:
        frame["tests"] = with_start(testing.tests)
        frame["positives"] = with_start(testing.positives)
    if weekly is not None:
        excess = np.full(series.n_days, np.nan)
        excess[weekly.release_days - 1] = weekly.excess
        frame["excess_weekly"] = with_start(excess)
    for column, values in (truth or {}).items():
        frame[column] = with_start(values)
    return DataProcessor(path.parent).export_to_csv(frame, path.name)


# ============ Synthetic data ============

@dataclass
class SimulatedData:
    """One simulated country with its latent truth"""
    series: CompartmentSeries
    rates: np.ndarray
    testing: Optional[TestingSeries] = None
    weekly: Optional[WeeklyDeaths] = None
    extras: Dict[str, np.ndarray] = field(default_factory=dict)
    truncated: bool = False


@dataclass
class SimulationResult:
    datasets: List[SimulatedData]
    diagnostics: Diagnostics

    @property
    def series(self) -> CompartmentSeries:
        return self.datasets[0].series

    @property
    def truncated(self) -> bool:
        return any(d.truncated for d in self.datasets)


def default_positivity(n_days: int) -> np.ndarray:
    t = np.arange(1, n_days + 1)
    return POSITIVITY_MEAN + POSITIVITY_AMPLITUDE * np.sin(2.0 * np.pi * t / POSITIVITY_PERIOD)


def _surviving_days(i_path: np.ndarray, n_days: int) -> int:
    """Number of days up to and including the first day with no active infections"""
    extinct = np.flatnonzero(i_path[1:] <= 0)
    return int(extinct[0]) + 1 if len(extinct) else n_days


def _sim_dates(spec: SimSpec, n: int) -> np.ndarray:
    return np.datetime64(spec.start_date, "D") + np.arange(n)


def _simulate_tvp(spec: SimSpec, rng: np.random.Generator, diagnostics: Diagnostics) -> SimulatedData:
    phi = spec.params
    state = TvpState.initial(phi.theta_l0)
    paths = propagate(
        state.level[None, :], state.harmonics[None], state.harmonics_star[None],
        phi.alpha, phi.psi, phi.psi_star, np.array([spec.i0]), np.array([spec.population - spec.i0]),
        spec.population, spec.n_days, rng, diagnostics,
    )
    counts, rates = paths["counts"][0], paths["rates"][0]
    n = _surviving_days(paths["i"][0], spec.n_days)
    series = CompartmentSeries.from_counts(
        _sim_dates(spec, n), counts[:n, 0], counts[:n, 2], spec.population, spec.i0,
        delta_rc=counts[:n, 1], name="simulated",
    )
    return SimulatedData(series=series, rates=rates[:n], truncated=n < spec.n_days)


def _simulate_mf(spec: SimSpec, rng: np.random.Generator, diagnostics: Diagnostics) -> SimulatedData:
    """Epidemic on the inflated scale; each flow is reported with probability exp(-k rho_t)"""
    phi = spec.params
    T, N = spec.n_days, spec.population
    rho = np.asarray(spec.rho[:T]) if spec.rho is not None else default_positivity(T)
    reported_share = np.exp(-phi.k * rho)

    state = TvpState.initial(phi.theta_l0)
    level, harmonics, harmonics_star = np.array(state.level), np.array(state.harmonics), np.array(state.harmonics_star)
    i_star = np.empty(T + 1)
    s_star = np.empty(T + 1)
    i_star[0] = spec.i0 / reported_share[0]
    s_star[0] = N - i_star[0]
    i_rep, s_rep = spec.i0, N - spec.i0
    star = np.empty((T, 3))
    counts = np.empty((T, 3))
    rates = np.empty((T, 3))
    for t in range(T):
        rates[t] = compose_rates(level, harmonics, diagnostics)
        means = poisson_means_array(rates[t], i_star[t], s_star[t], N)
        star[t] = cap_outflows(rng.poisson(means).astype(float), i_star[t], s_star[t], diagnostics)
        reported = rng.binomial(star[t].astype(np.int64), reported_share[t]).astype(float)
        counts[t] = cap_outflows(reported, i_rep, s_rep, diagnostics)
        i_rep += counts[t, 0] - counts[t, 1] - counts[t, 2]
        s_rep -= counts[t, 0]
        i_star[t + 1] = i_star[t] + star[t, 0] - star[t, 1] - star[t, 2]
        s_star[t + 1] = s_star[t] - star[t, 0]

        score = scaled_scores_array(np.array([star[t, 0], star[t, 1], np.nan]), means, rates[t], out_of_domain="zero")
        day = t + 1
        window = i_star[day - SEASON_PERIOD:day]
        if day % SEASON_PERIOD == 0 and weekly_death_mean(window, rates[t, 2]) > 0:
            score[2] = weekly_death_score(star[day - SEASON_PERIOD:day, 2].sum(), window, rates[t, 2])
        level = level_step(level, phi.alpha, score)
        harmonics, harmonics_star = seasonal_step(harmonics, harmonics_star, phi.psi, phi.psi_star, score)

    n = _surviving_days(i_star, T)
    series = CompartmentSeries.from_counts(
        _sim_dates(spec, n), counts[:n, 0], counts[:n, 2], N, spec.i0, delta_rc=counts[:n, 1], name="simulated",
    )
    n_weeks = n // SEASON_PERIOD
    true_weekly = star[:n_weeks * SEASON_PERIOD, 2].reshape(n_weeks, SEASON_PERIOD).sum(axis=1)
    reported_weekly = counts[:n_weeks * SEASON_PERIOD, 2].reshape(n_weeks, SEASON_PERIOD).sum(axis=1)
    return SimulatedData(
        series=series, rates=rates[:n], testing=TestingSeries.from_rho(rho[:n]),
        weekly=WeeklyDeaths.from_daily(series, true_weekly - reported_weekly),
        extras={"inflation": 1.0 / reported_share[:n], "i_star": i_star[1:n + 1]},
        truncated=n < T,
    )


def _simulate_factor(spec: SimSpec, rng: np.random.Generator, diagnostics: Diagnostics) -> List[SimulatedData]:
    """Countries whose infection rates share a sinusoidal common factor"""
    fs = spec.factor
    T = spec.n_days
    factor = fs.amplitude * np.sin(2.0 * np.pi * np.arange(1, T + 1) / fs.period)
    simulated = []
    for tau, base, N, i0 in zip(fs.tau, fs.base_rates, fs.populations, fs.i0):
        rates = np.column_stack([base.beta * np.exp(tau * factor), np.full(T, base.gamma), np.full(T, base.nu)])
        counts = np.empty((T, 3))
        i_path = np.empty(T + 1)
        i, s = i0, N - i0
        i_path[0] = i
        for t in range(T):
            counts[t] = cap_outflows(rng.poisson(poisson_means_array(rates[t], i, s, N)).astype(float), i, s, diagnostics)
            i += counts[t, 0] - counts[t, 1] - counts[t, 2]
            s -= counts[t, 0]
            i_path[t + 1] = i
        simulated.append((rates, counts, i_path))

    n = min(_surviving_days(i_path, T) for _, _, i_path in simulated)
    datasets = []
    for k, ((rates, counts, _), N, i0) in enumerate(zip(simulated, fs.populations, fs.i0)):
        series = CompartmentSeries.from_counts(
            _sim_dates(spec, n), counts[:n, 0], counts[:n, 2], N, i0, delta_rc=counts[:n, 1], name=f"country_{k + 1}",
        )
        datasets.append(SimulatedData(series=series, rates=rates[:n], extras={"factor": factor[:n]}, truncated=n < T))
    return datasets


def simulate(spec: SimSpec, seed: int = 0) -> SimulationResult:
    """Draw a synthetic dataset from the model law together with its true rate paths.

    A factor specification simulates a panel, parameters with k the
    mixed-frequency model, anything else the daily score-driven model. An
    epidemic that dies out before the last day is truncated at extinction.
    """
    rng = np.random.default_rng(seed)
    diagnostics = Diagnostics()
    if spec.factor is not None:
        datasets = _simulate_factor(spec, rng, diagnostics)
    elif spec.params.k is not None:
        datasets = [_simulate_mf(spec, rng, diagnostics)]
    else:
        datasets = [_simulate_tvp(spec, rng, diagnostics)]
    result = SimulationResult(datasets=datasets, diagnostics=diagnostics)
    if result.truncated:
        logger.warning("Epidemic died out after %d of %d days; output truncated", result.series.n_days, spec.n_days)
    return result


# ============ Configuration ============

def sim_spec_from_config(section: Optional[Dict[str, Any]]) -> SimSpec:
    """Build a SimSpec from the ``simulation`` section.

    ``rates`` gives the initial (beta, gamma, nu); ``alpha``, ``psi`` and
    ``psi_star`` default to zero and ``k`` switches on the mixed-frequency law.
    """
    if not section:
        raise ConfigError("the configuration has no simulation section")
    section = dict(section)
    try:
        params = None
        if "rates" in section:
            zeros = np.zeros((3, N_HARMONICS))
            params = StaticParams(
                theta_l0=link_forward(RateTriple(**section.pop("rates"))),
                alpha=section.pop("alpha", np.zeros(3)),
                psi=section.pop("psi", zeros),
                psi_star=section.pop("psi_star", zeros),
                k=section.pop("k", None),
            )
        return SimSpec(params=params, **section)
    except (ValidationError, DomainError, TypeError) as e:
        raise ConfigError(f"invalid simulation section: {e}") from e


def _set_dotted(config: Dict[str, Any], key: str, value: Any):
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def load_run_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Read the YAML configuration and apply dotted-key overrides (None values are skipped)"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(raw, key, value)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration {path}: {e}") from e


def _mcmc_config(config: RunConfig) -> McmcConfig:
    update = {"seed": config.seed}
    if config.data.frequency == "weekly":
        update["harmonics"] = False
    return config.mcmc.model_copy(update=update)


def _existing(path: Optional[str], what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} is required for this command")
    if not Path(path).exists():
        raise ConfigError(f"{what} not found: {path}")
    return Path(path)


# ============ Fitting ============

@dataclass
class FitOutput:
    posterior: PosteriorDraws
    params: pd.DataFrame
    loglik: float
    diagnostics: Diagnostics
    forecast_data: Any = None
    data_report: Dict[str, Any] = field(default_factory=dict)


def _forecast_inputs(data):
    """Single-country data with missing recoveries imputed, as the filters saw it"""
    if isinstance(data, MixedFrequencyData):
        return MixedFrequencyData(series=impute_missing_recoveries(data.series), testing=data.testing,
                                  weekly=data.weekly)
    return impute_missing_recoveries(data)


def _load_inputs(config: RunConfig):
    data_cfg = config.data
    if config.model == ModelVariant.FACTOR:
        if len(data_cfg.paths) < 2:
            raise ConfigError("the factor model needs at least two country files in data.paths")
        if data_cfg.populations and len(data_cfg.populations) != len(data_cfg.paths):
            raise ConfigError("data.populations must list one population per country file")
        populations = data_cfg.populations or [None] * len(data_cfg.paths)
        diagnostics = Diagnostics()
        countries = []
        for path, population in zip(data_cfg.paths, populations):
            loaded = load_csv(_existing(path, "data.paths entry"), population, data_cfg.start_threshold)
            diagnostics.merge(loaded.diagnostics)
            countries.append(loaded.series)
        return Panel.from_series(countries), diagnostics

    loaded = load_csv(_existing(data_cfg.path, "data.path"), data_cfg.population, data_cfg.start_threshold)
    if config.model == ModelVariant.MF:
        return loaded.mixed_frequency(), loaded.diagnostics
    series = loaded.series
    if data_cfg.frequency == "weekly":
        series = aggregate_weekly(series)
    return series, loaded.diagnostics


def _rate_frame(dates, s_prev, population: float, median_rates: np.ndarray, lower: np.ndarray,
                upper: np.ndarray, er_draws: np.ndarray, level: float) -> pd.DataFrame:
    frame = pd.DataFrame({"date": np.datetime_as_string(dates, unit="D"), "s_prev": s_prev})
    for j, p in enumerate(PARAMETERS):
        frame[f"{p}_median"] = median_rates[:, j]
        frame[f"{p}_lower"] = lower[:, j]
        frame[f"{p}_upper"] = upper[:, j]
    # the point eR is recomputable from the emitted median columns
    frame["eR_median"] = effective_reproduction(median_rates, s_prev, population)
    frame["eR_lower"], frame["eR_upper"] = hpdi(er_draws, level)
    return frame


def _add_fitted(frame: pd.DataFrame, series: CompartmentSeries, means: np.ndarray) -> pd.DataFrame:
    frame["delta_c"] = series.delta_c
    frame["fitted_delta_c"] = means[:, 0]
    frame["delta_d"] = series.delta_d
    frame["fitted_delta_d"] = means[:, 2]
    return frame


def _fit_fixed(raw: CompartmentSeries, mcmc: McmcConfig, level: float) -> FitOutput:
    series = impute_missing_recoveries(raw)
    posterior = gibbs_fixed(series, mcmc.n_iter - mcmc.burn_in, mcmc.seed)
    medians = posterior_medians(conjugate_posteriors(series))
    T = series.n_days
    lower, upper = hpdi(posterior.draws, level)
    s_prev = series.s[:-1]
    er_draws = effective_reproduction(posterior.draws[:, None, :], s_prev, series.population)
    frame = _rate_frame(series.dates, s_prev, series.population, np.tile(medians.as_array(), (T, 1)),
                        np.tile(lower, (T, 1)), np.tile(upper, (T, 1)), er_draws, level)
    frame = _add_fitted(frame, series, exposures(series) * medians.as_array())
    return FitOutput(posterior=posterior, params=frame, loglik=fixed_loglik(series, medians),
                     diagnostics=Diagnostics(), forecast_data=raw)


def _fit_single(data, variant: ModelVariant, mcmc: McmcConfig, level: float) -> FitOutput:
    target = build_target(variant, data, mcmc.harmonics, mcmc.psi_blocking)
    posterior = rwmh_within_gibbs(data, mcmc, variant, target=target)
    result = target.filter_fn(posterior.median())
    is_mf = variant == ModelVariant.MF
    series = data.series if is_mf else data

    paths = posterior.param_paths
    lower, upper = hpdi(paths, level)
    s_prev = result.s[:-1]
    er_draws = effective_reproduction(paths, s_prev, series.population)
    frame = _rate_frame(series.dates, s_prev, series.population, np.median(paths, axis=0), lower, upper, er_draws, level)
    means = result.means.copy()
    if is_mf:
        # confirmed cases back on the reported scale
        means[:, 0] /= result.extras["inflation"]
    frame = _add_fitted(frame, series, means)
    if is_mf:
        frame["inflation"] = result.extras["inflation"]
        frame["i_star"] = result.i[1:]
    return FitOutput(posterior=posterior, params=frame, loglik=result.loglik,
                     diagnostics=Diagnostics().merge(result.diagnostics), forecast_data=data)


def _fit_factor(panel: Panel, mcmc: McmcConfig, level: float) -> FitOutput:
    target = build_target(ModelVariant.FACTOR, panel, mcmc.harmonics, mcmc.psi_blocking)
    posterior = rwmh_within_gibbs(panel, mcmc, ModelVariant.FACTOR, target=target)
    result = target.filter_fn(posterior.median())
    paths = posterior.param_paths
    frames = []
    for k, (name, series) in enumerate(zip(panel.names, panel.countries)):
        lower, upper = hpdi(paths[:, k], level)
        s_prev = series.s[:-1]
        er_draws = effective_reproduction(paths[:, k], s_prev, series.population)
        frame = _rate_frame(series.dates, s_prev, series.population, np.median(paths[:, k], axis=0),
                            lower, upper, er_draws, level)
        frame.insert(0, "country", name)
        frame["factor"] = result.factor
        frames.append(_add_fitted(frame, series, result.means[k]))
    return FitOutput(posterior=posterior, params=pd.concat(frames, ignore_index=True), loglik=result.loglik,
                     diagnostics=Diagnostics().merge(result.diagnostics))


def fit(config: RunConfig) -> FitOutput:
    """Load the configured data and estimate the configured model"""
    data, load_diagnostics = _load_inputs(config)
    mcmc = _mcmc_config(config)
    level = config.forecast.level
    if config.model == ModelVariant.FP:
        output = _fit_fixed(data, mcmc, level)
    elif config.model == ModelVariant.FACTOR:
        output = _fit_factor(data, mcmc, level)
    else:
        output = _fit_single(data, config.model, mcmc, level)
    output.diagnostics.merge(load_diagnostics)
    countries = data.countries if isinstance(data, Panel) else [data.series if isinstance(data, MixedFrequencyData) else data]
    output.data_report = DataValidator().generate_report(countries)
    for name, entry in output.data_report.items():
        for issue in entry["issues"]:
            logger.warning("%s: %s", name, issue)
    return output


def _posterior_frame(posterior: PosteriorDraws) -> pd.DataFrame:
    frame = pd.DataFrame(posterior.draws, columns=posterior.names)
    frame.insert(0, "draw", np.arange(posterior.n_draws))
    frame["log_posterior"] = posterior.log_posts
    return frame


def _forecast_frame(forecast) -> pd.DataFrame:
    rows = []
    for target in TARGETS:
        for h, day in enumerate(forecast.dates):
            rows.append({
                "horizon": int(forecast.horizons[h]), "date": str(day), "target": target,
                "point": forecast.point[target][h], "mean": forecast.mean[target][h],
                "lower": forecast.intervals[target][h, 0], "upper": forecast.intervals[target][h, 1],
            })
    return pd.DataFrame(rows, columns=["horizon", "date", "target", "point", "mean", "lower", "upper"])


# ============ Commands ============

def _run_simulate(config: RunConfig, processor: DataProcessor) -> Dict[str, Any]:
    result = simulate(sim_spec_from_config(config.simulation), config.seed)
    files = []
    for data in result.datasets:
        truth = {f"{p}_true": data.rates[:, j] for j, p in enumerate(PARAMETERS)}
        truth.update({f"{key}_true": values for key, values in data.extras.items()})
        filename = "series.csv" if len(result.datasets) == 1 else f"series_{data.series.name}.csv"
        path = write_series_csv(data.series, processor.output_dir / filename, data.testing, data.weekly, truth)
        files.append(path.name)
    return {"files": files, "n_days": result.series.n_days, "truncated": result.truncated,
            "diagnostics": result.diagnostics.as_dict()}


def _run_fit(config: RunConfig, processor: DataProcessor, forecast: bool) -> Dict[str, Any]:
    output = fit(config)
    processor.export_to_csv(output.params, "params.csv")
    processor.export_to_csv(_posterior_frame(output.posterior), "posterior.csv")
    summary = {
        "acceptance": output.posterior.acc_rates,
        "acceptance_post_adapt": output.posterior.acc_rates_post_adapt,
        "loglik_at_median": output.loglik,
        "posterior": summarize_draws(output.posterior, config.forecast.level),
        "flags": output.posterior.flags,
        "n_draws": output.posterior.n_draws,
        "data_report": output.data_report,
    }
    if forecast:
        if output.forecast_data is None:
            raise ConfigError("forecasting is available for single-country models")
        fc_cfg = config.forecast
        forecast_set = simulate_forecast(
            _forecast_inputs(output.forecast_data), output.posterior, fc_cfg.horizon, fc_cfg.reps_per_draw, config.seed,
            fc_cfg.max_draws, fc_cfg.level, progress=config.mcmc.progress,
        )
        processor.export_to_csv(_forecast_frame(forecast_set), "forecast.csv")
        output.diagnostics.merge(Diagnostics(forecast_set.flags))
        summary["weekly_totals_median"] = {
            target: np.median(weekly_totals(forecast_set, target), axis=0).tolist() for target in TARGETS}
    summary["diagnostics"] = output.diagnostics.as_dict()
    if output.diagnostics:
        logger.warning("Diagnostics: %s", output.diagnostics.as_dict())
    return summary


def _format_dates(frame: pd.DataFrame) -> pd.DataFrame:
    return frame.assign(date=pd.to_datetime(frame["date"]).dt.strftime("%Y-%m-%d"))


def _run_backtest(config: RunConfig, processor: DataProcessor) -> Dict[str, Any]:
    directory = _existing(config.data.vintages_dir, "data.vintages_dir")
    vintages = load_vintages(directory, config.data.population, config.data.start_threshold)
    mcmc = _mcmc_config(config)
    bt = config.backtest
    result = recursive_backtest(vintages, bt.models, bt.horizons, bt, mcmc, config.seed, progress=mcmc.progress)
    processor.export_to_csv(_format_dates(result.records), "backtest_forecasts.csv")
    processor.export_to_csv(result.table, "eval.csv")
    return {"vintages": len(vintages), "failures": result.failures, "evaluated_rows": len(result.table)}


def _run_evaluate(config: RunConfig, processor: DataProcessor) -> Dict[str, Any]:
    path = _existing(config.data.forecasts_path, "data.forecasts_path")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"cannot parse {path}: {e}") from e
    missing = [c for c in EVALUATION_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path.name}: missing columns {', '.join(missing)}")
    table = evaluation_table(_format_dates(frame), config.backtest.reference)
    processor.export_to_csv(table, "eval.csv")
    return {"evaluated_rows": len(table), "reference": config.backtest.reference}


def run(config: RunConfig, command: str) -> Dict[str, Any]:
    """Execute one command and write its artifacts into the output directory"""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command '{command}'")
    started = time.perf_counter()
    processor = DataProcessor(config.output.directory)
    summary = {"command": command, "model": config.model.value, "seed": config.seed,
               "config": config.model_dump(mode="json")}
    if command == "simulate":
        summary.update(_run_simulate(config, processor))
    elif command in ("fit", "forecast"):
        summary.update(_run_fit(config, processor, forecast=command == "forecast" or config.forecast.enabled))
    elif command == "backtest":
        summary.update(_run_backtest(config, processor))
    else:
        summary.update(_run_evaluate(config, processor))
    summary["runtime_seconds"] = round(time.perf_counter() - started, 3)
    processor.export_to_json(summary, "summary.json")
    return summary


def write_error_summary(directory: Union[str, Path], command: str, error: Exception) -> Path:
    """Machine-readable error record in place of the run summary"""
    exit_code = error.exit_code if isinstance(error, TvpSirdError) else TvpSirdError.exit_code
    record = {"command": command,
              "error": {"type": type(error).__name__, "message": str(error), "exit_code": exit_code}}
    return DataProcessor(directory).export_to_json(record, "summary.json")
