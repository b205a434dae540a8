"""
Predictive simulation, point/interval summaries and forecast evaluation
(RMSFE, Diebold-Mariano tests, recursive vintage backtests)
"""
import logging
import math
from dataclasses import dataclass
from datetime import date
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import t as t_dist
from tqdm import tqdm

from src.core_model import impute_missing_recoveries, link_forward
from src.errors import ConfigError, DomainError, TvpSirdError
from src.fp_sird import RollingFit, fit_rolling, weekday_index
from src.inference import build_target, hpdi, point_mass_posterior, rwmh_within_gibbs, thin_indices
from src.mixed_frequency import mf_filter_path, mf_propagate, next_release_offset
from src.schema import (
    PARAMETERS,
    BacktestConfig,
    CompartmentSeries,
    Diagnostics,
    ForecastSet,
    LossSeries,
    McmcConfig,
    MixedFrequencyData,
    ModelVariant,
    PosteriorDraws,
    StaticParams,
    WindowConfig,
)
from src.score_dynamics import cap_outflows, filter_path, propagate

logger = logging.getLogger(__name__)

TARGETS = ("delta_c", "delta_d")
_TARGET_COLUMN = {"delta_c": 0, "delta_rc": 1, "delta_d": 2}
MIN_DM_LENGTH = 10


# ============ Predictive simulation ============

def summarize_forecast(draws: Dict[str, np.ndarray], horizons: np.ndarray, dates: np.ndarray,
                       level: float, diagnostics: Diagnostics) -> ForecastSet:
    point, mean, intervals = {}, {}, {}
    for target, values in draws.items():
        point[target] = np.median(values, axis=0)
        mean[target] = values.mean(axis=0)
        lower, upper = hpdi(values, level)
        intervals[target] = np.column_stack([lower, upper])
    return ForecastSet(horizons=horizons, dates=dates, draws=draws, point=point, mean=mean,
                       intervals=intervals, flags=diagnostics.as_dict())


def _draw_params(posterior: PosteriorDraws, m: int, has_k: bool) -> StaticParams:
    if posterior.names == list(PARAMETERS):
        # conjugate fixed-rate draws
        return StaticParams.constant(link_forward(posterior.draws[m]))
    return StaticParams.from_vector(posterior.draws[m], has_k=has_k)


def _future_dates(series: CompartmentSeries, horizon: int) -> np.ndarray:
    return series.dates[-1] + np.arange(1, horizon + 1) * np.timedelta64(series.step_days, "D")


def simulate_forecast(data: Union[CompartmentSeries, MixedFrequencyData], posterior: PosteriorDraws,
                      h_max: int, reps_per_draw: int = 10, seed: int = 0, max_draws: Optional[int] = None,
                      level: float = 0.95, progress: bool = False) -> ForecastSet:
    """Joint simulation of counts and parameters h_max days past the sample.

    Every retained draw is filtered to the end of the sample; its terminal
    state then evolves with scores of the simulated counts. Replicates of draw
    m use the random stream seeded by (seed, m). Mixed-frequency forecasts are
    simulated on the inflated scale with nu~ moving only on weekly release
    days, then deflated with the last positivity.
    """
    if posterior.n_draws == 0:
        raise DomainError("empty posterior")
    variant = ModelVariant(posterior.variant)
    if variant == ModelVariant.FACTOR:
        raise ConfigError("forecasting is available for single-country models")
    is_mf = variant == ModelVariant.MF
    if is_mf and not isinstance(data, MixedFrequencyData):
        raise ConfigError("mixed-frequency forecasts need testing and weekly death data")
    series = data.series if is_mf else data

    diagnostics = Diagnostics()
    rows = thin_indices(posterior.n_draws, max_draws or posterior.n_draws)
    simulated = []
    for m in tqdm(rows, desc="Forecast draws", disable=not progress):
        phi = _draw_params(posterior, m, is_mf)
        if is_mf:
            result = mf_filter_path(series, data.testing, data.weekly, phi)
        else:
            result = filter_path(series, phi)
        state = result.final_state
        rng = np.random.default_rng([seed, int(m)])
        args = (
            np.tile(state.level, (reps_per_draw, 1)),
            np.tile(state.harmonics, (reps_per_draw, 1, 1)),
            np.tile(state.harmonics_star, (reps_per_draw, 1, 1)),
            phi.alpha, phi.psi, phi.psi_star,
            np.full(reps_per_draw, result.i[-1]), np.full(reps_per_draw, result.s[-1]),
            series.population, h_max, rng,
        )
        if is_mf:
            paths = mf_propagate(*args, first_release=next_release_offset(series.n_days), diagnostics=diagnostics)
        else:
            paths = propagate(*args, diagnostics)
        counts = paths["counts"]
        if is_mf:
            observed = data.testing.rho[np.isfinite(data.testing.rho)]
            rho_last = observed[-1] if len(observed) else 0.0
            counts = counts.copy()
            counts[..., :2] *= math.exp(-phi.k * rho_last)
        simulated.append(counts)

    counts = np.concatenate(simulated)
    draws = {target: counts[..., _TARGET_COLUMN[target]] for target in TARGETS}
    if diagnostics:
        logger.warning("Forecast diagnostics: %s", diagnostics.as_dict())
    return summarize_forecast(draws, np.arange(1, h_max + 1), _future_dates(series, h_max), level, diagnostics)


def simulate_fixed_forecast(series: CompartmentSeries, fit: RollingFit, h_max: int, n_draws: int = 1000,
                            seed: int = 0, level: float = 0.95) -> ForecastSet:
    """Predictive draws of the fixed-rate model: Gamma posterior rates times
    the day-of-week multiplier of each future date"""
    rng = np.random.default_rng(seed)
    rates = fit.sample(n_draws, rng)
    multipliers = fit.multipliers[weekday_index(_future_dates(series, h_max))]
    diagnostics = Diagnostics()
    i = np.full(n_draws, series.i[-1])
    s = np.full(n_draws, series.s[-1])
    counts = np.empty((n_draws, h_max, 3))
    for h in range(h_max):
        means = np.column_stack([rates[:, 0] * s * i / series.population, rates[:, 1] * i, rates[:, 2] * i])
        means *= multipliers[h]
        draws = cap_outflows(rng.poisson(means).astype(float), i, s, diagnostics)
        i, s = i + draws[:, 0] - draws[:, 1] - draws[:, 2], s - draws[:, 0]
        counts[:, h] = draws
    draws = {target: counts[..., _TARGET_COLUMN[target]] for target in TARGETS}
    return summarize_forecast(draws, np.arange(1, h_max + 1), _future_dates(series, h_max), level, diagnostics)


def weekly_totals(forecast: ForecastSet, target: str = "delta_c") -> np.ndarray:
    """Per-draw sums over consecutive 7-day blocks of the horizon"""
    values = forecast.draws[target]
    n_weeks = values.shape[1] // 7
    return values[:, :n_weeks * 7].reshape(len(values), n_weeks, 7).sum(axis=2)


# ============ Accuracy measures ============

def rmsfe(forecasts, realizations) -> float:
    forecasts = np.asarray(forecasts, dtype=float)
    realizations = np.asarray(realizations, dtype=float)
    if forecasts.shape != realizations.shape or forecasts.size == 0:
        raise DomainError("forecasts and realizations must be aligned and non-empty")
    return float(np.sqrt(np.mean((forecasts - realizations) ** 2)))


def relative_rmsfe(rmsfe_model: float, rmsfe_reference: float) -> float:
    """RMSFE ratio; 0/0 is 1"""
    if rmsfe_reference == 0:
        return 1.0 if rmsfe_model == 0 else math.inf
    return rmsfe_model / rmsfe_reference


def harvey_factor(n: int, horizon: int) -> float:
    """Small-sample correction sqrt((T + 1 - 2h + h(h-1)/T) / T)"""
    return math.sqrt((n + 1 - 2 * horizon + horizon * (horizon - 1) / n) / n)


def dm_test(loss_a, loss_b, horizon: int = 1) -> Tuple[float, float]:
    """Diebold-Mariano test of equal predictive accuracy.

    Bartlett-weighted autocovariances up to lag h-1, Harvey-corrected
    statistic, two-sided p-value from t(T-1). Identical losses give (0, 1).
    """
    if isinstance(loss_a, LossSeries):
        loss_a, loss_b, horizon = loss_a.loss_a, loss_a.loss_b, loss_a.horizon
    d = np.asarray(loss_a, dtype=float) - np.asarray(loss_b, dtype=float)
    n = len(d)
    if n < MIN_DM_LENGTH:
        raise DomainError(f"DM test needs at least {MIN_DM_LENGTH} loss pairs, got {n}")
    if horizon < 1:
        raise DomainError("horizon must be at least 1")
    if np.all(d == 0):
        return 0.0, 1.0
    d_bar = d.mean()
    centred = d - d_bar
    variance = np.dot(centred, centred) / n
    for lag in range(1, horizon):
        variance += 2.0 * (1.0 - lag / horizon) * np.dot(centred[lag:], centred[:-lag]) / n
    if variance <= 0:
        # constant nonzero differential
        return math.copysign(math.inf, d_bar), 0.0
    statistic = d_bar / math.sqrt(variance / n) * harvey_factor(n, horizon)
    return float(statistic), float(2.0 * t_dist.sf(abs(statistic), n - 1))


def evaluation_table(records: pd.DataFrame, reference: str) -> pd.DataFrame:
    """RMSFE, relative RMSFE and DM p-values per (model, horizon, target).

    ``records`` holds one row per forecast with columns date, model, horizon,
    target, forecast, realized. Comparisons with the reference use only the
    dates where both models produced a forecast.
    """
    records = records.dropna(subset=["forecast", "realized"])
    records = records.assign(error=records["forecast"] - records["realized"])
    errors = records.pivot_table(index=["target", "horizon", "date"], columns="model", values="error")
    rows = []
    for (target, horizon), block in errors.groupby(level=["target", "horizon"]):
        for model in block.columns:
            own = block[model].dropna()
            if own.empty:
                continue
            row = {"model": model, "horizon": int(horizon), "target": target, "n": len(own),
                   "rmsfe": rmsfe(own, np.zeros(len(own))),
                   "relative_rmsfe": np.nan, "dm_statistic": np.nan, "dm_p_value": np.nan}
            if model == reference:
                row["relative_rmsfe"] = 1.0
                if len(own) >= MIN_DM_LENGTH:
                    row["dm_statistic"], row["dm_p_value"] = 0.0, 1.0
            elif reference in block.columns:
                pair = block[[model, reference]].dropna()
                if len(pair):
                    row["relative_rmsfe"] = relative_rmsfe(
                        rmsfe(pair[model], np.zeros(len(pair))), rmsfe(pair[reference], np.zeros(len(pair))))
                if len(pair) >= MIN_DM_LENGTH:
                    stat, p_value = dm_test(pair[model] ** 2, pair[reference] ** 2, int(horizon))
                    row["dm_statistic"], row["dm_p_value"] = stat, p_value
            rows.append(row)
    columns = ["model", "horizon", "target", "n", "rmsfe", "relative_rmsfe", "dm_statistic", "dm_p_value"]
    return pd.DataFrame(rows, columns=columns).sort_values(["target", "horizon", "model"]).reset_index(drop=True)


# ============ Recursive vintage backtest ============

@dataclass
class BacktestResult:
    records: pd.DataFrame
    table: pd.DataFrame
    failures: List[Dict]


def _forecast_model(model: str, series: CompartmentSeries, h_max: int, config: BacktestConfig,
                    mcmc: McmcConfig, seed: int) -> ForecastSet:
    # recoveries imputed the way build_target sees them
    imputed = impute_missing_recoveries(series)
    if model.startswith("rw-"):
        try:
            window = int(model[3:])
        except ValueError:
            raise ConfigError(f"unknown model '{model}'")
        fit = fit_rolling(imputed, WindowConfig(window_len=window, dow_effects=True), series.n_days)
        return simulate_fixed_forecast(imputed, fit, h_max, config.reps_per_draw * config.max_draws, seed)
    if model not in (ModelVariant.TVP.value, ModelVariant.TVP_BETA.value):
        raise ConfigError(f"unknown backtest model '{model}'")
    if config.tvp_fit == "mode":
        posterior = point_mass_posterior(build_target(model, series, mcmc.harmonics, mcmc.psi_blocking))
    else:
        posterior = rwmh_within_gibbs(series, mcmc, model)
    return simulate_forecast(imputed, posterior, h_max, config.reps_per_draw, seed, config.max_draws)


def recursive_backtest(vintages: Sequence[Tuple[date, CompartmentSeries]], models: List[str],
                       horizons: List[int], config: BacktestConfig, mcmc: Optional[McmcConfig] = None,
                       seed: int = 0, progress: bool = False) -> BacktestResult:
    """Fit every model on every vintage and score against the latest vintage.

    Each vintage is fitted using only its own snapshot. A model that fails on
    a vintage is recorded and left out of the comparisons on that date.
    """
    if not vintages:
        raise DomainError("no vintages to backtest")
    as_of_dates = [d for d, _ in vintages]
    if as_of_dates != sorted(as_of_dates):
        raise DomainError("vintages must be ordered by as-of date")
    mcmc = mcmc or McmcConfig()
    h_max = max(horizons)
    final = vintages[-1][1]
    realized = pd.DataFrame(
        {t: getattr(final, t) for t in config.targets}, index=pd.DatetimeIndex(final.dates.astype("datetime64[ns]")))

    records, failures = [], []
    for v, (as_of, series) in enumerate(tqdm(vintages, desc="Vintages", disable=not progress)):
        for model in models:
            try:
                forecast = _forecast_model(model, series, h_max, config, mcmc, seed + v)
            except ConfigError:
                raise
            except TvpSirdError as e:
                logger.warning("Model %s failed on vintage %s: %s", model, as_of, e)
                failures.append({"as_of": str(as_of), "model": model, "error": str(e)})
                continue
            for h in horizons:
                target_date = pd.Timestamp(forecast.dates[h - 1])
                for target in config.targets:
                    value = realized[target].get(target_date, np.nan)
                    records.append({
                        "as_of": str(as_of), "date": target_date, "model": model, "horizon": h,
                        "target": target, "forecast": float(forecast.point[target][h - 1]),
                        "mean": float(forecast.mean[target][h - 1]), "realized": value,
                    })
    frame = pd.DataFrame(records, columns=["as_of", "date", "model", "horizon", "target", "forecast", "mean", "realized"])
    return BacktestResult(records=frame, table=evaluation_table(frame, config.reference), failures=failures)
