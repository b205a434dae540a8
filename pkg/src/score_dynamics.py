"""
Score-driven parameter dynamics: scaled scores, level and seasonal recursions,
the deterministic forward filter and the forward simulator of the model law.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from src.core_model import clamp_transformed, link_backward, poisson_logpmf, poisson_means_array
from src.errors import DomainError, NumericalError
from src.schema import (
    N_HARMONICS,
    SEASON_PERIOD,
    CompartmentSeries,
    Diagnostics,
    PoissonMeans,
    RateTriple,
    ScoreTriple,
    StaticParams,
    TvpState,
)

logger = logging.getLogger(__name__)

FREQUENCIES = 2.0 * np.pi * np.arange(1, N_HARMONICS + 1) / SEASON_PERIOD
COS = np.cos(FREQUENCIES)
SIN = np.sin(FREQUENCIES)

# infection intensity floor once simulated susceptibles are exhausted
LAMBDA_FLOOR = 1e-8


def scaled_scores_array(obs, means, rates, out_of_domain: str = "raise") -> np.ndarray:
    """Inverse-Fisher scaled scores on the last axis (beta~, gamma~, nu~).

    NaN observations and observations of zero under a zero mean score 0. A
    positive count under a zero mean raises DomainError, or scores 0 when
    ``out_of_domain="zero"``.
    """
    obs = np.asarray(obs, dtype=float)
    means = np.asarray(means, dtype=float)
    rates = np.asarray(rates, dtype=float)
    present = ~np.isnan(obs)
    live = means > 0
    if np.any(present & ~live & (np.nan_to_num(obs) > 0)) and out_of_domain == "raise":
        raise DomainError("positive count under a zero Poisson mean")
    usable = present & live
    safe_means = np.where(live, means, 1.0)
    raw = np.where(usable, (np.nan_to_num(obs) - means) / safe_means, 0.0)
    scale = np.ones_like(raw)
    scale[..., 1] = 1.0 / (1.0 - rates[..., 1])
    scale[..., 2] = 1.0 / (1.0 - rates[..., 2])
    return raw * scale


def scaled_scores(obs, means: PoissonMeans, rates: RateTriple) -> ScoreTriple:
    """Scaled scores of one day's counts (dC, dRc, dD); None or NaN means missing"""
    obs = np.array([np.nan if v is None else v for v in obs], dtype=float)
    lam = means.as_array()
    if np.any((lam <= 0) & ~np.isnan(obs)):
        raise DomainError("scores need strictly positive means for present observations")
    s_beta, s_gamma, s_nu = scaled_scores_array(obs, lam, rates.as_array())
    return ScoreTriple(s_beta=s_beta, s_gamma=s_gamma, s_nu=s_nu)


def level_step(level_prev, alpha, score_prev):
    """theta_l,t = theta_l,t-1 + alpha * s_t-1"""
    return level_prev + alpha * score_prev


def seasonal_step(harmonics_prev, harmonics_star_prev, psi, psi_star, score_prev):
    """Rotate each harmonic pair by 2 pi j / 7 and add the loaded score.

    Harmonic arrays carry the harmonic index on the last axis; ``score_prev``
    broadcasts against the leading axes.
    """
    score = np.asarray(score_prev, dtype=float)[..., None]
    harmonics = COS * harmonics_prev + SIN * harmonics_star_prev + psi * score
    harmonics_star = -SIN * harmonics_prev + COS * harmonics_star_prev + psi_star * score
    return harmonics, harmonics_star


def compose_rates(level, harmonics, diagnostics: Optional[Diagnostics] = None) -> np.ndarray:
    """Level plus seasonal sum, clamped and back-transformed to (beta, gamma, nu)"""
    theta, n_clamped = clamp_transformed(level + harmonics.sum(axis=-1))
    if diagnostics is not None:
        diagnostics.bump("rate_clamps", n_clamped)
    return link_backward(theta)


def phi_arrays(phi: StaticParams):
    return phi.alpha, phi.psi, phi.psi_star


@dataclass
class FilterResult:
    """Output of a forward filter pass"""
    rates: np.ndarray
    theta: np.ndarray
    means: np.ndarray
    scores: np.ndarray
    loglik: float
    loglik_components: Dict[str, float]
    final_state: TvpState
    i: np.ndarray
    s: np.ndarray
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    extras: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def beta(self) -> np.ndarray:
        return self.rates[:, 0]

    @property
    def gamma(self) -> np.ndarray:
        return self.rates[:, 1]

    @property
    def nu(self) -> np.ndarray:
        return self.rates[:, 2]


def poisson_loglik(obs: np.ndarray, means: np.ndarray) -> Dict[str, float]:
    """Per-component sums of Poisson log-pmfs, skipping NaN observations"""
    present = ~np.isnan(obs)
    try:
        terms = poisson_logpmf(np.where(present, obs, 0.0), means)
    except DomainError as e:
        raise NumericalError(str(e)) from e
    terms = np.where(present, terms, 0.0)
    totals = terms.sum(axis=0)
    return {"c": float(totals[0]), "rc": float(totals[1]), "d": float(totals[2])}


def filter_path(series: CompartmentSeries, phi: StaticParams,
                initial: Optional[TvpState] = None) -> FilterResult:
    """Deterministic forward pass of the single-country model.

    Observation t uses rates composed from the state updated with the score of
    observation t-1; the final score updates ``final_state``, which is the
    state for the first day after the sample.
    """
    diagnostics = Diagnostics()
    obs = series.observations()
    T = series.n_days
    state = initial or TvpState.initial(phi.theta_l0)
    level = np.array(state.level)
    harmonics = np.array(state.harmonics)
    harmonics_star = np.array(state.harmonics_star)
    alpha, psi, psi_star = phi_arrays(phi)

    rates = np.empty((T, 3))
    theta = np.empty((T, 3))
    means = np.empty((T, 3))
    scores = np.empty((T, 3))
    for t in range(T):
        theta[t] = level + harmonics.sum(axis=-1)
        rates[t] = compose_rates(level, harmonics, diagnostics)
        means[t] = poisson_means_array(rates[t], series.i[t], series.s[t], series.population)
        try:
            scores[t] = scaled_scores_array(obs[t], means[t], rates[t])
        except DomainError as e:
            raise NumericalError(f"impossible observation on {series.dates[t]}: {e}") from e
        level = level_step(level, alpha, scores[t])
        harmonics, harmonics_star = seasonal_step(harmonics, harmonics_star, psi, psi_star, scores[t])

    if not (np.all(np.isfinite(level)) and np.all(np.isfinite(harmonics))):
        raise NumericalError("non-finite filter state")
    components = poisson_loglik(obs, means)
    diagnostics.bump("gamma_nu_above_one", int(np.count_nonzero(rates[:, 1] + rates[:, 2] > 1)))
    return FilterResult(
        rates=rates, theta=theta, means=means, scores=scores,
        loglik=sum(components.values()), loglik_components=components,
        final_state=TvpState(level=level, harmonics=harmonics, harmonics_star=harmonics_star),
        i=np.array(series.i), s=np.array(series.s), diagnostics=diagnostics,
    )


def cap_outflows(draws: np.ndarray, i, s, diagnostics: Optional[Diagnostics] = None) -> np.ndarray:
    """Cap simulated (dC, dRc, dD) so that S and I stay nonnegative.

    New cases are capped at S; recoveries, then deaths, at the infections
    available after the new cases arrive.
    """
    draws = np.array(draws, dtype=float)
    draws[..., 0] = np.minimum(draws[..., 0], s)
    available = i + draws[..., 0]
    over = draws[..., 1] + draws[..., 2] > available
    if over.any():
        if diagnostics is not None:
            diagnostics.bump("outflows_capped", int(np.count_nonzero(over)))
        draws[..., 1] = np.minimum(draws[..., 1], available)
        draws[..., 2] = np.minimum(draws[..., 2], available - draws[..., 1])
    return draws


def simulate_day(level, harmonics, i, s, population: float, rng: np.random.Generator,
                 diagnostics: Diagnostics):
    """One day of the model law for every replicate.

    Returns the composed rates, the Poisson means, the capped count draws and
    their scaled scores.
    """
    rates = compose_rates(level, harmonics, diagnostics)
    means = poisson_means_array(rates, i, s, population)
    exhausted = s <= 0
    if exhausted.any():
        diagnostics.bump("susceptibles_exhausted", int(exhausted.sum()))
        means[:, 0] = np.where(exhausted, np.maximum(means[:, 0], LAMBDA_FLOOR), means[:, 0])
    draws = cap_outflows(rng.poisson(means).astype(float), i, s, diagnostics)
    score = scaled_scores_array(draws, means, rates, out_of_domain="zero")
    return rates, means, draws, score


def propagate(level, harmonics, harmonics_star, alpha, psi, psi_star,
              i_start, s_start, population: float, horizon: int,
              rng: np.random.Generator, diagnostics: Optional[Diagnostics] = None) -> Dict[str, np.ndarray]:
    """Simulate the model law forward for ``horizon`` days.

    State arrays carry a leading replicate axis (R, 3) / (R, 3, 3); ``alpha``,
    ``psi`` and ``psi_star`` either match it or are shared. Counts are drawn
    from their Poisson laws, I and S follow the compartment identities and the
    parameters advance with scores of the simulated counts.
    """
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
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
        rates, _, draws, score = simulate_day(level, harmonics, i, s, population, rng, diagnostics)
        i = i + draws[:, 0] - draws[:, 1] - draws[:, 2]
        s = s - draws[:, 0]
        level = level_step(level, alpha, score)
        harmonics, harmonics_star = seasonal_step(harmonics, harmonics_star, psi, psi_star, score)

        counts[:, h] = draws
        rates_path[:, h] = rates
        i_path[:, h + 1], s_path[:, h + 1] = i, s
    return {"counts": counts, "rates": rates_path, "i": i_path, "s": s_path}
