"""
Mixed-frequency extension: positivity-driven underreporting and weekly total
deaths (reported plus excess) released every seventh day
"""
import logging
from dataclasses import dataclass
from typing import Dict, Literal, Optional

import numpy as np

from src.core_model import poisson_logpmf, poisson_means_array
from src.errors import DataError, DomainError, NumericalError
from src.schema import (
    SEASON_PERIOD,
    CompartmentSeries,
    Diagnostics,
    StaticParams,
    TestingSeries,
    TvpState,
    WeeklyDeaths,
)
from src.score_dynamics import (
    FilterResult,
    compose_rates,
    level_step,
    poisson_loglik,
    scaled_scores_array,
    seasonal_step,
    simulate_day,
)

logger = logging.getLogger(__name__)

DeathFlow = Literal["expected", "reported"]


def underreporting_fraction(rho, k: float):
    """delta_t = 1 - exp(-k rho_t)"""
    rho = np.asarray(rho, dtype=float)
    if k < 0:
        raise DomainError("k must be nonnegative")
    finite = rho[np.isfinite(rho)]
    if np.any((finite < 0) | (finite > 1)):
        raise DomainError("positivity must lie in [0, 1]")
    delta = -np.expm1(-k * rho)
    return delta if delta.ndim else float(delta)


def inflation_factor(rho, k: float):
    """1 / (1 - delta_t) = exp(k rho_t)"""
    return 1.0 / (1.0 - underreporting_fraction(rho, k))


def _positivity(series: CompartmentSeries, testing: TestingSeries, diagnostics: Diagnostics) -> np.ndarray:
    rho = np.array(testing.rho)
    undefined = np.isnan(rho)
    if np.any(undefined & (series.delta_c > 0)):
        first = int(np.argmax(undefined & (series.delta_c > 0)))
        raise DataError(f"no positivity data on {series.dates[first]} although cases were reported")
    diagnostics.bump("positivity_carried_forward", int(testing.carried.sum()))
    return np.where(undefined, 0.0, rho)


def _death_scale(series: CompartmentSeries, weekly: WeeklyDeaths) -> np.ndarray:
    """Per-day factor that lifts reported daily deaths to the weekly totals"""
    scale = np.ones(series.n_days)
    for day, reported, total in zip(weekly.release_days, weekly.reported_weekly, weekly.total):
        if reported > 0:
            scale[day - SEASON_PERIOD:day] = total / reported
    return scale


@dataclass
class StarredSeries:
    """Underreporting-corrected flows and states (I*, S* carry the initial value at 0)"""
    delta_c: np.ndarray
    delta_rc: np.ndarray
    deaths: np.ndarray
    i_star: np.ndarray
    s_star: np.ndarray
    inflation: np.ndarray


def inflate_series(series: CompartmentSeries, testing: TestingSeries, k: float,
                   nu: Optional[np.ndarray] = None, weekly: Optional[WeeklyDeaths] = None,
                   diagnostics: Optional[Diagnostics] = None) -> StarredSeries:
    """Inflate confirmed cases and recoveries by exp(k rho_t) and rebuild I*, S*.

    Daily deaths in the identity are nu_t I*_{t-1} when a nu path is given and
    the reported deaths (lifted to the weekly totals when ``weekly`` is given)
    otherwise. I*_0 = I_0 exp(k rho_1).
    """
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    rho = _positivity(series, testing, diagnostics)
    inflation = inflation_factor(rho, k)
    delta_c = series.delta_c * inflation
    delta_rc = series.delta_rc * inflation
    reported = series.delta_d * (_death_scale(series, weekly) if weekly is not None else 1.0)

    T = series.n_days
    i_star = np.empty(T + 1)
    s_star = np.empty(T + 1)
    deaths = np.empty(T)
    i_star[0] = series.i0 * inflation[0]
    s_star[0] = series.population - i_star[0]
    for t in range(T):
        deaths[t] = nu[t] * i_star[t] if nu is not None else reported[t]
        i_star[t + 1] = i_star[t] + delta_c[t] - delta_rc[t] - deaths[t]
        s_star[t + 1] = s_star[t] - delta_c[t]
    diagnostics.bump("starred_infections_clipped", int(np.count_nonzero(i_star < 0)))
    diagnostics.bump("starred_susceptibles_clipped", int(np.count_nonzero(s_star < 0)))
    return StarredSeries(
        delta_c=delta_c, delta_rc=delta_rc, deaths=deaths,
        i_star=np.maximum(i_star, 0.0), s_star=np.maximum(s_star, 0.0), inflation=inflation,
    )


def weekly_death_mean(i_star_window, nu_t: float) -> float:
    """lambda3 bar = nu_t * sum of I*_{s-1} over the 7 days of the week"""
    return float(nu_t * np.sum(i_star_window))


def weekly_death_score(total_weekly: float, i_star_window, nu_t: float) -> float:
    """Scaled nu~ score of a weekly death release"""
    mean = weekly_death_mean(i_star_window, nu_t)
    if mean <= 0:
        raise DomainError("weekly death mean must be positive")
    return (total_weekly - mean) / mean / (1.0 - nu_t)


def mf_filter_path(series: CompartmentSeries, testing: TestingSeries, weekly: WeeklyDeaths,
                   phi: StaticParams, deaths: DeathFlow = "expected") -> FilterResult:
    """Forward pass of the mixed-frequency model.

    Confirmed cases and recoveries enter daily on the inflated scale; deaths
    enter as weekly totals on release days with mean nu_t sum I*_{s-1}, and
    the nu~ score is zero on every other day. ``deaths`` selects the daily
    death flow in the I* identity: the model-expected nu_t I*_{t-1} or the
    reported deaths lifted to the weekly totals. With k = 0 and no excess
    deaths only ``deaths="reported"`` gives I* = I and hence the beta and
    gamma paths of ``filter_path``; the default ``"expected"`` replaces the
    reported deaths by their means.
    """
    if phi.k is None:
        raise DomainError("the mixed-frequency model needs the reporting-decay constant k")
    diagnostics = Diagnostics()
    T = series.n_days
    rho = _positivity(series, testing, diagnostics)
    inflation = inflation_factor(rho, phi.k)
    obs = series.observations()
    obs[:, :2] *= inflation[:, None]
    reported_deaths = series.delta_d * _death_scale(series, weekly)
    release = np.zeros(T + 1, dtype=bool)
    release[weekly.release_days[weekly.release_days <= T]] = True
    totals = dict(zip(weekly.release_days.tolist(), weekly.total.tolist()))

    state = TvpState.initial(phi.theta_l0)
    level, harmonics, harmonics_star = np.array(state.level), np.array(state.harmonics), np.array(state.harmonics_star)
    i_star = np.empty(T + 1)
    s_star = np.empty(T + 1)
    i_star[0] = series.i0 * inflation[0]
    s_star[0] = series.population - i_star[0]

    rates = np.empty((T, 3))
    theta = np.empty((T, 3))
    means = np.empty((T, 3))
    scores = np.zeros((T, 3))
    weekly_terms = []
    weekly_means = np.full(T, np.nan)
    for t in range(T):
        day = t + 1
        theta[t] = level + harmonics.sum(axis=-1)
        rates[t] = compose_rates(level, harmonics, diagnostics)
        means[t] = poisson_means_array(rates[t], i_star[t], s_star[t], series.population)
        daily = np.array([obs[t, 0], obs[t, 1], np.nan])
        try:
            scores[t] = scaled_scores_array(daily, means[t], rates[t])
        except DomainError as e:
            raise NumericalError(f"impossible observation on {series.dates[t]}: {e}") from e

        death_flow = means[t, 2] if deaths == "expected" else reported_deaths[t]
        i_next = i_star[t] + obs[t, 0] - series.delta_rc[t] * inflation[t] - death_flow
        if i_next < 0:
            diagnostics.bump("starred_infections_clipped")
        i_star[t + 1] = max(i_next, 0.0)
        s_star[t + 1] = max(s_star[t] - obs[t, 0], 0.0)

        if release[day]:
            mean = weekly_death_mean(i_star[day - SEASON_PERIOD:day], rates[t, 2])
            weekly_means[t] = mean
            try:
                weekly_terms.append(poisson_logpmf(totals[day], mean))
                scores[t, 2] = weekly_death_score(totals[day], i_star[day - SEASON_PERIOD:day], rates[t, 2])
            except DomainError as e:
                raise NumericalError(f"impossible weekly deaths on {series.dates[t]}: {e}") from e

        level = level_step(level, phi.alpha, scores[t])
        harmonics, harmonics_star = seasonal_step(harmonics, harmonics_star, phi.psi, phi.psi_star, scores[t])

    if not (np.all(np.isfinite(level)) and np.all(np.isfinite(harmonics))):
        raise NumericalError("non-finite filter state")
    daily_obs = obs.copy()
    daily_obs[:, 2] = np.nan
    components = poisson_loglik(daily_obs, means)
    components["d"] = float(np.sum(weekly_terms))
    diagnostics.bump("gamma_nu_above_one", int(np.count_nonzero(rates[:, 1] + rates[:, 2] > 1)))
    return FilterResult(
        rates=rates, theta=theta, means=means, scores=scores,
        loglik=sum(components.values()), loglik_components=components,
        final_state=TvpState(level=level, harmonics=harmonics, harmonics_star=harmonics_star),
        i=i_star, s=s_star, diagnostics=diagnostics,
        extras={"inflation": inflation, "weekly_means": weekly_means, "delta_c_star": obs[:, 0]},
    )


def next_release_offset(n_days: int) -> int:
    """Days from the end of an ``n_days`` sample to the next weekly release"""
    return SEASON_PERIOD - n_days % SEASON_PERIOD


def mf_propagate(level, harmonics, harmonics_star, alpha, psi, psi_star,
                 i_start, s_start, population: float, horizon: int, rng: np.random.Generator,
                 first_release: int = SEASON_PERIOD,
                 diagnostics: Optional[Diagnostics] = None) -> Dict[str, np.ndarray]:
    """Simulate the mixed-frequency law forward on the inflated scale.

    Cases and recoveries score daily. The nu~ score is zero except on release
    days ``first_release``, ``first_release + 7``, ..., where it is the weekly
    score of the deaths simulated since the previous release (since the origin
    for the first one). Arrays follow ``propagate``.
    """
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    if not 1 <= first_release <= SEASON_PERIOD:
        raise DomainError(f"first release must fall within a week of the origin, got {first_release}")
    level = np.array(level, dtype=float)
    harmonics = np.array(harmonics, dtype=float)
    harmonics_star = np.array(harmonics_star, dtype=float)
    i = np.array(i_start, dtype=float)
    s = np.array(s_start, dtype=float)
    reps = level.shape[0]

    counts = np.empty((reps, horizon, 3))
    rates_path = np.empty((reps, horizon, 3))
    i_path = np.empty((reps, horizon + 1))
    s_path = np.empty((reps, horizon + 1))
    i_path[:, 0], s_path[:, 0] = i, s
    for h in range(horizon):
        day = h + 1
        rates, _, draws, score = simulate_day(level, harmonics, i, s, population, rng, diagnostics)
        i = i + draws[:, 0] - draws[:, 1] - draws[:, 2]
        s = s - draws[:, 0]
        counts[:, h] = draws
        rates_path[:, h] = rates
        i_path[:, h + 1], s_path[:, h + 1] = i, s

        score[:, 2] = 0.0
        if day >= first_release and (day - first_release) % SEASON_PERIOD == 0:
            lo = max(day - SEASON_PERIOD, 0)
            mean = rates[:, 2] * i_path[:, lo:day].sum(axis=1)
            total = counts[:, lo:day, 2].sum(axis=1)
            live = mean > 0
            safe = np.where(live, mean, 1.0)
            score[:, 2] = np.where(live, (total - safe) / safe / (1.0 - rates[:, 2]), 0.0)
        level = level_step(level, alpha, score)
        harmonics, harmonics_star = seasonal_step(harmonics, harmonics_star, psi, psi_star, score)
    return {"counts": counts, "rates": rates_path, "i": i_path, "s": s_path}
