"""
Fixed-parameter SIRD baseline: conjugate Gamma posteriors and rolling windows
with day-of-week effects
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy.stats import gamma as gamma_dist

from src.core_model import DEFAULT_RECOVERY_RATE, poisson_logpmf
from src.errors import DomainError
from src.schema import (
    PARAMETERS,
    SEASON_PERIOD,
    CompartmentSeries,
    GammaPosterior,
    ModelVariant,
    PosteriorDraws,
    RateTriple,
    WindowConfig,
)

logger = logging.getLogger(__name__)

MAX_NEWTON_ITER = 100

# prior-only recovery posterior for windows without observed recoveries
RECOVERY_PRIOR = GammaPosterior(shape=100.0, rate=100.0 / DEFAULT_RECOVERY_RATE)


def weekday_index(dates) -> np.ndarray:
    """Monday = 0, ..., Sunday = 6"""
    days = np.asarray(dates, dtype="datetime64[D]").astype(np.int64)
    return (days + 3) % SEASON_PERIOD


def exposures(series: CompartmentSeries) -> np.ndarray:
    """(T, 3) exposures S I / N, I, I; recoveries zeroed on missing days"""
    i_prev, s_prev = series.i[:-1], series.s[:-1]
    x = np.column_stack([s_prev * i_prev / series.population, i_prev, i_prev])
    x[series.missing_rc, 1] = 0.0
    return x


def _counts(series: CompartmentSeries) -> np.ndarray:
    y = np.column_stack([series.delta_c, series.delta_rc, series.delta_d])
    y[series.missing_rc, 1] = 0.0
    return y


def conjugate_posteriors(series: CompartmentSeries, multipliers: Optional[np.ndarray] = None) -> Dict[str, GammaPosterior]:
    """Gamma(sum counts + 1, sum exposure) posteriors under flat priors.

    ``multipliers`` are optional per-day factors exp(d_dow(t)) on every intensity.
    Without recovery exposure gamma falls back to RECOVERY_PRIOR.
    """
    x = exposures(series)
    if multipliers is not None:
        x = x * np.asarray(multipliers)[:, None]
    y = _counts(series)
    totals, rates = y.sum(axis=0), x.sum(axis=0)
    posteriors = {}
    for p, shape, rate in zip(PARAMETERS, totals + 1.0, rates):
        if rate <= 0 and p == "gamma":
            posteriors[p] = RECOVERY_PRIOR
            continue
        if rate <= 0:
            raise DomainError(f"zero exposure for {p}: posterior is improper")
        posteriors[p] = GammaPosterior(shape=shape, rate=rate)
    return posteriors


def loglik(series: CompartmentSeries, rates: RateTriple, multipliers: Optional[np.ndarray] = None) -> float:
    """Exact Poisson log-likelihood of the series at fixed rates"""
    means = exposures(series) * rates.as_array()
    if multipliers is not None:
        means = means * np.asarray(multipliers)[:, None]
    # missing recoveries have zero count and zero exposure, so they add nothing
    return float(poisson_logpmf(_counts(series), means).sum())


def posterior_medians(posteriors: Dict[str, GammaPosterior]) -> RateTriple:
    medians = {p: float(gamma_dist.median(post.shape, scale=1.0 / post.rate)) for p, post in posteriors.items()}
    # tiny windows can push the recovery or death median past 1
    medians["gamma"] = min(medians["gamma"], 1.0 - 1e-9)
    medians["nu"] = min(medians["nu"], 1.0 - 1e-9)
    return RateTriple(**medians)


def gibbs_fixed(series: CompartmentSeries, draws: int, seed: int = 0) -> PosteriorDraws:
    """Posterior draws of (beta, gamma, nu) for the fixed-parameter model.

    The three conditional posteriors are independent Gammas, so each sweep
    draws the blocks directly.
    """
    if series.n_days < 2:
        raise DomainError("fixed-parameter estimation needs at least 2 days")
    posteriors = conjugate_posteriors(series)
    rng = np.random.default_rng(seed)
    samples = np.column_stack([
        rng.gamma(posteriors[p].shape, 1.0 / posteriors[p].rate, size=draws) for p in PARAMETERS
    ])
    x, y = exposures(series).sum(axis=0), _counts(series).sum(axis=0)
    # log-likelihood up to the rate-free constant, which cancels in comparisons
    log_posts = (y * np.log(samples) - samples * x).sum(axis=1)
    return PosteriorDraws(
        variant=ModelVariant.FP, names=list(PARAMETERS), draws=samples, log_posts=log_posts,
        acc_rates={p: 1.0 for p in PARAMETERS},
    )


@dataclass
class RollingFit:
    """Fixed-rate posterior on one trailing window"""
    posteriors: Dict[str, GammaPosterior]
    dow_effects: np.ndarray
    converged: bool
    iterations: int
    t_end: int
    window_len: int

    @property
    def rates(self) -> RateTriple:
        return posterior_medians(self.posteriors)

    @property
    def multipliers(self) -> np.ndarray:
        """exp(d) by weekday, Monday first"""
        return np.exp(self.dow_effects)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.column_stack([
            rng.gamma(self.posteriors[p].shape, 1.0 / self.posteriors[p].rate, size=n) for p in PARAMETERS
        ])


def estimate_dow_effects(series: CompartmentSeries):
    """Profile-likelihood Newton iterations for sum-to-zero day-of-week effects.

    With the rates profiled out, the objective is
    sum_w n_w d_w - sum_j Y_j log(sum_w E_jw exp(d_w)).
    Returns (d, converged, iterations).
    """
    weekday = weekday_index(series.dates)
    x, y = exposures(series), _counts(series)
    n_w = np.array([y[weekday == w].sum() for w in range(SEASON_PERIOD)])
    e_jw = np.array([x[weekday == w].sum(axis=0) for w in range(SEASON_PERIOD)]).T
    y_j = y.sum(axis=0)
    tol = 1e-8 * (1.0 + y_j.sum())

    d = np.zeros(SEASON_PERIOD)
    for iteration in range(1, MAX_NEWTON_ITER + 1):
        weights = e_jw * np.exp(d)
        totals = weights.sum(axis=1, keepdims=True)
        p = np.divide(weights, totals, out=np.zeros_like(weights), where=totals > 0)
        grad = n_w - (y_j[:, None] * p).sum(axis=0)
        hess = -sum(y_j[j] * (np.diag(p[j]) - np.outer(p[j], p[j])) for j in range(3))
        step = np.linalg.pinv(hess) @ grad
        d = d - step
        d -= d.mean()
        if np.max(np.abs(grad)) < tol or np.max(np.abs(step)) < 1e-10:
            return d, True, iteration
    logger.warning("Day-of-week Newton iterations did not converge in %d steps", MAX_NEWTON_ITER)
    return d, False, MAX_NEWTON_ITER


def fit_rolling(series: CompartmentSeries, config: WindowConfig, t_end: int) -> RollingFit:
    """Fit the fixed-rate model on observations t_end - M + 1 .. t_end (1-based)"""
    M = config.window_len
    if t_end - M < 0 or t_end > series.n_days:
        raise DomainError(f"window of {M} days ending at day {t_end} outside a {series.n_days}-day sample")
    window = series.slice(t_end - M, t_end)
    if not config.dow_effects:
        return RollingFit(posteriors=conjugate_posteriors(window), dow_effects=np.zeros(SEASON_PERIOD),
                          converged=True, iterations=0, t_end=t_end, window_len=M)
    d, converged, iterations = estimate_dow_effects(window)
    multipliers = np.exp(d)[weekday_index(window.dates)]
    return RollingFit(posteriors=conjugate_posteriors(window, multipliers), dow_effects=d,
                      converged=converged, iterations=iterations, t_end=t_end, window_len=M)
