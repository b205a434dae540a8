"""
SIRD core: link transforms, Poisson/Skellam kernels and compartment bookkeeping
"""
import logging
from typing import Tuple

import numpy as np
from scipy.special import expit, gammaln, logit, xlogy
from scipy.stats import gamma as gamma_dist

from src.errors import DomainError
from src.schema import SEASON_PERIOD, CompartmentSeries, PoissonMeans, RateTriple

logger = logging.getLogger(__name__)

# transformed-parameter clamp applied before exponentiation
TRANSFORM_BOUND = 30.0

# recovery rate of a 14-day infectious period, used when no recoveries are observed
DEFAULT_RECOVERY_RATE = 0.07


def link_forward(raw) -> np.ndarray:
    """(beta, gamma, nu) -> (ln beta, logit gamma, logit nu).

    Accepts a RateTriple or an array whose last axis holds the three rates.
    """
    rates = raw.as_array() if isinstance(raw, RateTriple) else np.asarray(raw, dtype=float)
    beta, gamma, nu = rates[..., 0], rates[..., 1], rates[..., 2]
    if np.any(beta <= 0):
        raise DomainError("beta must be positive")
    if np.any((gamma <= 0) | (gamma >= 1)) or np.any((nu <= 0) | (nu >= 1)):
        raise DomainError("gamma and nu must lie in (0, 1)")
    return np.stack([np.log(beta), logit(gamma), logit(nu)], axis=-1)


def link_backward(transformed) -> np.ndarray:
    """Inverse of link_forward on the last axis"""
    theta = np.asarray(transformed, dtype=float)
    return np.stack([np.exp(theta[..., 0]), expit(theta[..., 1]), expit(theta[..., 2])], axis=-1)


def clamp_transformed(theta: np.ndarray) -> Tuple[np.ndarray, int]:
    """Clip transformed values to the overflow guard; returns the number of clipped entries"""
    clipped = np.clip(theta, -TRANSFORM_BOUND, TRANSFORM_BOUND)
    return clipped, int(np.count_nonzero(clipped != theta))


def poisson_means(rates, i_prev, s_prev, n) -> PoissonMeans:
    """Conditional intensities lambda1 = beta S I / N, lambda2 = gamma I, lambda3 = nu I"""
    beta, gamma, nu = rates.as_array() if isinstance(rates, RateTriple) else rates
    if i_prev < 0 or s_prev < 0 or s_prev > n:
        raise DomainError(f"invalid states I={i_prev}, S={s_prev}, N={n}")
    return PoissonMeans(lambda1=beta * s_prev * i_prev / n, lambda2=gamma * i_prev, lambda3=nu * i_prev)


def poisson_means_array(rates: np.ndarray, i_prev, s_prev, n) -> np.ndarray:
    """Vectorised poisson_means: rates (..., 3) with matching I, S -> means (..., 3)"""
    i_prev = np.asarray(i_prev, dtype=float)
    s_prev = np.asarray(s_prev, dtype=float)
    return np.stack([
        rates[..., 0] * s_prev * i_prev / n,
        rates[..., 1] * i_prev,
        rates[..., 2] * i_prev,
    ], axis=-1)


def poisson_logpmf(count, mean):
    """Poisson log-density with the Gamma-function extension to real counts.

    A zero mean gives 0 for a zero count; a zero mean with a positive count is
    an impossible event and raises DomainError.
    """
    count = np.asarray(count, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if np.any(count < 0):
        raise DomainError("counts must be nonnegative")
    if np.any(mean < 0):
        raise DomainError("Poisson mean must be nonnegative")
    if np.any((mean == 0) & (count > 0)):
        raise DomainError("positive count under a zero Poisson mean")
    out = xlogy(count, mean) - mean - gammaln(count + 1.0)
    return out if out.ndim else float(out)


def skellam_conditional_moments(rates, i_prev, s_prev, n) -> Tuple[float, float]:
    """Mean and variance of I_t given the previous day's states"""
    means = poisson_means(rates, i_prev, s_prev, n)
    mean = i_prev + means.lambda1 - means.lambda2 - means.lambda3
    variance = means.lambda1 + means.lambda2 + means.lambda3
    return mean, variance


def basic_reproduction(rates: RateTriple) -> float:
    return effective_reproduction(rates, 1.0, 1.0)


def unconditional_moments(rates: RateTriple, i0: float, t: int) -> Tuple[float, float]:
    """E[I_t] and Var(I_t) in the S/N ~ 1 regime"""
    if t < 0:
        raise DomainError("t must be nonnegative")
    r0 = basic_reproduction(rates)
    pi = 1.0 + rates.beta * (1.0 - 1.0 / r0)
    scale = rates.beta * (1.0 + 1.0 / r0)
    mean = pi ** t * i0
    if np.isclose(pi, 1.0, rtol=0.0, atol=1e-12):
        return mean, scale * t * i0
    variance = scale * pi ** (t - 1) * (1.0 - pi ** t) / (1.0 - pi) * i0
    return mean, variance


def effective_reproduction(rates, s, n):
    """eR = beta (S/N) / (gamma + nu); vectorised over rate arrays"""
    if isinstance(rates, RateTriple):
        beta, gamma, nu = rates.beta, rates.gamma, rates.nu
    else:
        rates = np.asarray(rates, dtype=float)
        beta, gamma, nu = rates[..., 0], rates[..., 1], rates[..., 2]
    outflow = gamma + nu
    if np.any(outflow <= 0):
        raise DomainError("gamma + nu must be positive")
    return beta * (np.asarray(s, dtype=float) / n) / outflow


def impute_missing_recoveries(series: CompartmentSeries, gamma: float = None) -> CompartmentSeries:
    """Fill missing recoveries with round(gamma I_{t-1}) and rebuild I and S.

    ``gamma`` defaults to the conjugate posterior median estimated on the days
    with observed recoveries, or DEFAULT_RECOVERY_RATE when there are none.
    The missingness mask is preserved, so filters still skip those days in the
    recovery likelihood.
    """
    if not series.missing_rc.any():
        return series
    if gamma is None:
        gamma = _recovery_rate_median(series)
    delta_rc = series.delta_rc.copy()
    i_prev = series.i0
    # imputed values change I, so fill day by day
    for t in range(series.n_days):
        if series.missing_rc[t]:
            delta_rc[t] = min(np.round(gamma * i_prev), max(i_prev + series.delta_c[t] - series.delta_d[t], 0.0))
        i_prev = i_prev + series.delta_c[t] - delta_rc[t] - series.delta_d[t]
    logger.info("Imputed %d missing recovery days with gamma=%.5f", int(series.missing_rc.sum()), gamma)
    return series.with_recoveries(delta_rc)


def observes_recoveries(series: CompartmentSeries) -> bool:
    """True when some observed recovery day has positive exposure"""
    observed = ~series.missing_rc
    return bool(series.i[:-1][observed].sum() > 0)


def _recovery_rate_median(series: CompartmentSeries) -> float:
    if not observes_recoveries(series):
        logger.warning("%s has no recovery observations; using gamma=%.3f",
                       series.name or "series", DEFAULT_RECOVERY_RATE)
        return DEFAULT_RECOVERY_RATE
    observed = ~series.missing_rc
    exposure = series.i[:-1][observed].sum()
    shape = series.delta_rc[observed].sum() + 1.0
    return float(gamma_dist.median(shape, scale=1.0 / exposure))


def aggregate_weekly(series: CompartmentSeries) -> CompartmentSeries:
    """Sum counts into complete 7-day blocks on the sample grid.

    The weekly series keeps I and S at week ends, so the compartment identities
    hold at weekly frequency; each block is dated by its last day.
    """
    n_weeks = series.n_days // SEASON_PERIOD
    if n_weeks < 1:
        raise DomainError("series shorter than one week")
    cut = n_weeks * SEASON_PERIOD

    def block(values):
        return values[:cut].reshape(n_weeks, SEASON_PERIOD).sum(axis=1)

    missing = series.missing_rc[:cut].reshape(n_weeks, SEASON_PERIOD).any(axis=1)
    return CompartmentSeries.from_counts(
        series.dates[SEASON_PERIOD - 1:cut:SEASON_PERIOD], block(series.delta_c), block(series.delta_d),
        series.population, series.i0, delta_rc=block(series.delta_rc), missing_rc=missing, name=series.name,
        step_days=SEASON_PERIOD * series.step_days, s0=float(series.s[0]),
    )
