"""
Multi-country model: a common infection-level factor loaded by country
loadings, plus idiosyncratic levels and seasonals per country
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Literal

import numpy as np

from src.core_model import poisson_means_array
from src.errors import DomainError, NumericalError
from src.schema import N_HARMONICS, Diagnostics, FactorParams, Panel
from src.score_dynamics import compose_rates, level_step, poisson_loglik, scaled_scores_array, seasonal_step

logger = logging.getLogger(__name__)

_COLUMN = {"beta": 0, "gamma": 1, "nu": 2}


def common_score(obs, means, loadings, rates, parameter: Literal["beta", "gamma", "nu"] = "beta") -> float:
    """Scaled score of a common factor loading on ``parameter`` across countries.

    Numerator sum_i (y_i - lambda_i) c_i tau_i and denominator
    sum_i lambda_i c_i^2 tau_i^2, with c_i = 1 for beta and 1 - rate_i for the
    logit-linked gamma and nu. Countries with a missing observation
    contribute to neither sum.
    """
    obs = np.asarray(obs, dtype=float)
    means = np.asarray(means, dtype=float)
    loadings = np.asarray(loadings, dtype=float)
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    col = _COLUMN[parameter]
    chain = np.ones(len(obs)) if col == 0 else 1.0 - rates[:, col]
    present = ~np.isnan(obs)
    if not present.any():
        return 0.0
    resid = np.where(present, np.nan_to_num(obs) - means, 0.0)
    numerator = np.sum(resid * chain * loadings)
    denominator = np.sum(np.where(present, means * chain ** 2 * loadings ** 2, 0.0))
    if denominator <= 0:
        raise DomainError("common score needs a positive information denominator")
    return float(numerator / denominator)


@dataclass
class FactorState:
    """Dynamic state of the multi-country model on one day"""
    common_level: float
    idio_levels: np.ndarray
    harmonics: np.ndarray
    harmonics_star: np.ndarray
    loadings: np.ndarray
    alpha_common: float
    alpha_idio: np.ndarray

    @classmethod
    def initial(cls, params: FactorParams) -> "FactorState":
        K = len(params.countries)
        return cls(
            common_level=params.factor_l0,
            idio_levels=np.array([c.theta_l0 for c in params.countries]),
            harmonics=np.zeros((K, 3, N_HARMONICS)),
            harmonics_star=np.zeros((K, 3, N_HARMONICS)),
            loadings=np.array(params.tau),
            alpha_common=params.alpha_common,
            alpha_idio=np.array([c.alpha for c in params.countries]),
        )


@dataclass
class FactorFilterResult:
    rates: np.ndarray
    factor: np.ndarray
    means: np.ndarray
    scores: np.ndarray
    common_scores: np.ndarray
    loglik: float
    loglik_components: Dict[str, Dict[str, float]]
    final_state: FactorState
    diagnostics: Diagnostics = field(default_factory=Diagnostics)


def factor_filter_path(panel: Panel, params: FactorParams) -> FactorFilterResult:
    """Joint forward pass over all countries.

    The common level moves with the common beta~ score; idiosyncratic levels
    and seasonals move with each country's own scores. Cross-country sums run
    in country order.
    """
    K = panel.n_countries
    if len(params.countries) != K:
        raise DomainError(f"{len(params.countries)} parameter sets for {K} countries")
    diagnostics = Diagnostics()
    T = panel.countries[0].n_days
    obs = np.stack([c.observations() for c in panel.countries])
    i = np.stack([c.i for c in panel.countries])
    s = np.stack([c.s for c in panel.countries])
    populations = panel.populations
    psi = np.array([c.psi for c in params.countries])
    psi_star = np.array([c.psi_star for c in params.countries])

    state = FactorState.initial(params)
    level, harmonics, harmonics_star = state.idio_levels, state.harmonics, state.harmonics_star
    factor = state.common_level

    rates = np.empty((K, T, 3))
    means = np.empty((K, T, 3))
    scores = np.empty((K, T, 3))
    factor_path = np.empty(T)
    common_scores = np.empty(T)
    for t in range(T):
        factor_path[t] = factor
        shifted = level.copy()
        shifted[:, 0] += state.loadings * factor
        rates[:, t] = compose_rates(shifted, harmonics, diagnostics)
        means[:, t] = poisson_means_array(rates[:, t], i[:, t], s[:, t], populations)
        try:
            scores[:, t] = scaled_scores_array(obs[:, t], means[:, t], rates[:, t])
            common_scores[t] = common_score(obs[:, t, 0], means[:, t, 0], state.loadings, rates[:, t])
        except DomainError as e:
            raise NumericalError(f"impossible observation on {panel.countries[0].dates[t]}: {e}") from e
        factor = factor + state.alpha_common * common_scores[t]
        level = level_step(level, state.alpha_idio, scores[:, t])
        harmonics, harmonics_star = seasonal_step(harmonics, harmonics_star, psi, psi_star, scores[:, t])

    if not (np.isfinite(factor) and np.all(np.isfinite(level))):
        raise NumericalError("non-finite filter state")
    components = {name: poisson_loglik(obs[k], means[k]) for k, name in enumerate(panel.names)}
    loglik = sum(sum(c.values()) for c in components.values())
    final = FactorState(
        common_level=factor, idio_levels=level, harmonics=harmonics, harmonics_star=harmonics_star,
        loadings=state.loadings, alpha_common=state.alpha_common, alpha_idio=state.alpha_idio,
    )
    return FactorFilterResult(
        rates=rates, factor=factor_path, means=means, scores=scores, common_scores=common_scores,
        loglik=loglik, loglik_components=components, final_state=final, diagnostics=diagnostics,
    )
