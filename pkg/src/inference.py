"""
Posterior simulation of the static parameters: MLE initialisation and
adaptive random-walk Metropolis-Hastings within Gibbs
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize
from statsmodels.tools.numdiff import approx_hess3
from tqdm import tqdm

from src.core_model import DEFAULT_RECOVERY_RATE, impute_missing_recoveries, link_forward, observes_recoveries
from src.errors import ConfigError, DomainError, NumericalError
from src.factor_model import factor_filter_path
from src.fp_sird import exposures
from src.mixed_frequency import mf_filter_path
from src.schema import (
    N_HARMONICS,
    PARAMETERS,
    SINGLE_VECTOR_SIZE,
    CompartmentSeries,
    Diagnostics,
    FactorParams,
    McmcConfig,
    MixedFrequencyData,
    ModelVariant,
    Panel,
    PosteriorDraws,
    StaticParams,
)
from src.score_dynamics import filter_path

logger = logging.getLogger(__name__)

MOM_WINDOW = 14
START_ALPHA = 0.1
START_K = 1.0
LOADING_BOUND = 5.0
K_BOUNDS = (1e-6, 50.0)
OBJECTIVE_PENALTY = 1e6
FALLBACK_SCALE = 0.01
EIGEN_FLOOR = 1e-8


# ============ Parameter layout ============

ALPHA_IDX = np.arange(3, 6)
THETA_IDX = np.arange(0, 3)
PSI_IDX = np.arange(6, 15).reshape(3, N_HARMONICS)
PSI_STAR_IDX = np.arange(15, 24).reshape(3, N_HARMONICS)


def method_of_moments_start(series: CompartmentSeries, window: int = MOM_WINDOW) -> np.ndarray:
    """Transformed initial levels from the first ``window`` days.

    beta~ = ln((sum dC + 0.5) / sum S I / N), likewise for gamma~ and nu~ with
    exposure I; the 0.5 keeps the logs finite on empty windows. A series with
    no observed recoveries starts gamma at DEFAULT_RECOVERY_RATE.
    """
    head = series.slice(0, min(window, series.n_days))
    x = exposures(head).sum(axis=0)
    y = np.array([head.delta_c.sum(), head.delta_rc[~head.missing_rc].sum(), head.delta_d.sum()])
    if np.any(x <= 0):
        # no recoveries observed in the window: fall back to the full sample
        x = exposures(series).sum(axis=0)
        y = np.array([series.delta_c.sum(), series.delta_rc[~series.missing_rc].sum(), series.delta_d.sum()])
    if x[0] <= 0 or x[2] <= 0:
        raise DomainError(f"no exposure to initialise the levels of {series.name or 'series'}")
    rates = (y + 0.5) / np.where(x > 0, x, 1.0)
    rates[1:] = np.clip(rates[1:], 1e-6, 0.5)
    if x[1] <= 0:
        rates[1] = DEFAULT_RECOVERY_RATE
    return link_forward(rates)


def _pin_recovery_rate(free: np.ndarray) -> np.ndarray:
    """Hold the gamma level, loading and harmonics at their start values"""
    free = free.copy()
    for idx in (THETA_IDX[1:2], ALPHA_IDX[1:2], PSI_IDX[1], PSI_STAR_IDX[1]):
        free[idx] = False
    return free


def _single_free_mask(variant: ModelVariant, harmonics: bool) -> np.ndarray:
    free = np.zeros(SINGLE_VECTOR_SIZE, dtype=bool)
    free[THETA_IDX] = True
    if variant == ModelVariant.FP:
        return free
    rows = [0] if variant == ModelVariant.TVP_BETA else [0, 1, 2]
    free[ALPHA_IDX[rows]] = True
    if harmonics:
        # weekly releases freeze nu between them, so its harmonics are not identified
        psi_rows = [r for r in rows if not (variant == ModelVariant.MF and r == 2)]
        free[PSI_IDX[psi_rows].ravel()] = True
        free[PSI_STAR_IDX[psi_rows].ravel()] = True
    return free


def _single_blocks(free: np.ndarray, psi_blocking: str, offset: int = 0, prefix: str = "") -> List[Tuple[str, np.ndarray]]:
    groups = [("alpha", ALPHA_IDX), ("theta_l0", THETA_IDX)]
    for symbol, idx in (("psi", PSI_IDX), ("psi_star", PSI_STAR_IDX)):
        if psi_blocking == "joint":
            groups.append((symbol, idx.ravel()))
        else:
            groups += [(f"{symbol}_{p}", idx[r]) for r, p in enumerate(PARAMETERS)]
    blocks = []
    for name, idx in groups:
        idx = idx[free[idx]]
        if len(idx):
            blocks.append((prefix + name, idx + offset))
    return blocks


@dataclass
class LikelihoodTarget:
    """Log-likelihood of one model variant over a flat parameter vector"""
    variant: ModelVariant
    names: List[str]
    start: np.ndarray
    free: np.ndarray
    blocks: List[Tuple[str, np.ndarray]]
    bounds: List[Tuple[float, float]]
    filter_fn: Callable
    to_params: Callable
    n_obs: int
    positive: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    @property
    def free_idx(self) -> np.ndarray:
        return np.flatnonzero(self.free)

    def full(self, free_values: np.ndarray) -> np.ndarray:
        vec = self.start.copy()
        vec[self.free] = free_values
        return vec

    def loglik(self, vec: np.ndarray) -> float:
        return self.filter_fn(vec).loglik

    def log_prior(self, vec: np.ndarray) -> float:
        """Flat priors; k must stay positive"""
        if len(self.positive) and np.any(vec[self.positive] <= 0):
            return -np.inf
        return 0.0

    def log_posterior(self, vec: np.ndarray) -> float:
        lp = self.log_prior(vec)
        if not np.isfinite(lp):
            return -np.inf
        try:
            ll = self.loglik(vec)
        except (NumericalError, DomainError, FloatingPointError, ValueError):
            return -np.inf
        return lp + ll if np.isfinite(ll) else -np.inf


def build_target(variant, data, harmonics: bool = True, psi_blocking: str = "per_parameter") -> LikelihoodTarget:
    """Assemble the likelihood target of a variant.

    ``data`` is a CompartmentSeries (fp, tvp, tvp-beta), MixedFrequencyData
    (mf) or Panel (factor).
    """
    variant = ModelVariant(variant)
    if psi_blocking not in ("per_parameter", "joint"):
        raise ConfigError(f"unknown psi blocking '{psi_blocking}'")

    if variant == ModelVariant.FACTOR:
        if not isinstance(data, Panel):
            raise ConfigError("the factor model needs a Panel")
        return _factor_target(data, harmonics, psi_blocking)

    if variant == ModelVariant.MF:
        if not isinstance(data, MixedFrequencyData):
            raise ConfigError("the mixed-frequency model needs testing and weekly death data")
        raw = data.series
        series = impute_missing_recoveries(raw)
        data = MixedFrequencyData(series=series, testing=data.testing, weekly=data.weekly)
    else:
        if not isinstance(data, CompartmentSeries):
            raise ConfigError(f"model '{variant.value}' needs a single CompartmentSeries")
        raw = data
        series = impute_missing_recoveries(raw)

    has_k = variant == ModelVariant.MF
    free = _single_free_mask(variant, harmonics)
    if not observes_recoveries(raw):
        free = _pin_recovery_rate(free)
    start = np.zeros(SINGLE_VECTOR_SIZE)
    start[THETA_IDX] = method_of_moments_start(series)
    start[ALPHA_IDX[free[ALPHA_IDX]]] = START_ALPHA
    bounds = [(-30.0, 30.0)] * 3 + [(-LOADING_BOUND, LOADING_BOUND)] * 21
    blocks = _single_blocks(free, psi_blocking)
    positive = np.array([], dtype=int)
    if has_k:
        start = np.append(start, START_K)
        free = np.append(free, True)
        bounds.append(K_BOUNDS)
        blocks.append(("k", np.array([SINGLE_VECTOR_SIZE])))
        positive = np.array([SINGLE_VECTOR_SIZE])

        def filter_fn(vec):
            return mf_filter_path(data.series, data.testing, data.weekly, StaticParams.from_vector(vec, has_k=True))
    else:
        def filter_fn(vec):
            return filter_path(series, StaticParams.from_vector(vec))

    return LikelihoodTarget(
        variant=variant, names=StaticParams.vector_names(has_k), start=start, free=free, blocks=blocks,
        bounds=bounds, filter_fn=filter_fn, to_params=lambda vec: StaticParams.from_vector(vec, has_k=has_k),
        n_obs=series.n_days, positive=positive,
    )


def _factor_target(panel: Panel, harmonics: bool, psi_blocking: str) -> LikelihoodTarget:
    observed = [observes_recoveries(c) for c in panel.countries]
    countries = [impute_missing_recoveries(c) for c in panel.countries]
    panel = Panel(countries=countries, names=panel.names)
    K = panel.n_countries
    size = SINGLE_VECTOR_SIZE
    starts = [method_of_moments_start(c) for c in countries]
    factor_l0 = float(starts[0][0])

    start, free, blocks = [], [], []
    for i, (name, mom) in enumerate(zip(panel.names, starts)):
        free_single = _single_free_mask(ModelVariant.TVP, harmonics)
        if not observed[i]:
            free_single = _pin_recovery_rate(free_single)
        vec = np.zeros(size)
        vec[THETA_IDX] = mom
        vec[0] = mom[0] - factor_l0
        vec[ALPHA_IDX[free_single[ALPHA_IDX]]] = START_ALPHA
        start.append(vec)
        free.append(free_single)
        blocks += _single_blocks(free_single, psi_blocking, offset=i * size, prefix=f"{name}:")
    offset = K * size
    start += [np.ones(K - 1), [START_ALPHA]]
    free += [np.ones(K, dtype=bool)]
    if K > 1:
        blocks.append(("tau", np.arange(offset, offset + K - 1)))
    blocks.append(("alpha_common", np.array([offset + K - 1])))
    bounds = ([(-30.0, 30.0)] * 3 + [(-LOADING_BOUND, LOADING_BOUND)] * 21) * K
    bounds += [(-LOADING_BOUND, LOADING_BOUND)] * K

    def to_params(vec):
        return FactorParams.from_vector(vec, K, factor_l0)

    return LikelihoodTarget(
        variant=ModelVariant.FACTOR, names=FactorParams.vector_names(panel.names),
        start=np.concatenate(start), free=np.concatenate(free), blocks=blocks, bounds=bounds,
        filter_fn=lambda vec: factor_filter_path(panel, to_params(vec)), to_params=to_params,
        n_obs=countries[0].n_days * K,
    )


# ============ Mode and curvature ============

@dataclass
class MleResult:
    vector: np.ndarray
    cov: np.ndarray
    loglik: float
    converged: bool
    flags: List[str] = field(default_factory=list)


def _ridge_to_pd(cov: np.ndarray) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(cov)
    w = np.maximum(np.abs(w), EIGEN_FLOOR)
    return (v * w) @ v.T


def mle_init(target: LikelihoodTarget, maxiter: int = 500) -> MleResult:
    """Maximise the log-likelihood from the deterministic start.

    Returns the mode with the inverse of the finite-difference Hessian over the
    free entries, ridged to positive definite. If the optimiser or the
    Hessian fails, falls back to the start with covariance 0.01 I.
    """
    free_idx = target.free_idx
    bounds = [target.bounds[i] for i in free_idx]

    def neg_loglik(z):
        try:
            ll = target.loglik(target.full(z))
        except (NumericalError, DomainError, FloatingPointError, ValueError):
            return np.inf
        return -ll if np.isfinite(ll) else np.inf

    def objective(z):
        value = neg_loglik(z)
        return value / target.n_obs if np.isfinite(value) else OBJECTIVE_PENALTY

    x0 = target.start[free_idx]
    f0 = objective(x0)
    if f0 >= OBJECTIVE_PENALTY:
        raise NumericalError("log-likelihood is not finite at the starting values")
    fallback = MleResult(
        vector=target.start.copy(), cov=FALLBACK_SCALE * np.eye(len(free_idx)),
        loglik=-f0 * target.n_obs, converged=False, flags=["mle_fallback"],
    )
    try:
        res = minimize(objective, x0, method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter})
    except (NumericalError, ValueError, FloatingPointError) as e:
        logger.warning("Optimizer failed (%s); using start values", e)
        return fallback
    if not np.isfinite(res.fun) or res.fun >= OBJECTIVE_PENALTY or res.fun > f0:
        logger.warning("Optimizer did not improve on the start (%s); using start values", res.message)
        return fallback
    flags = [] if res.success else ["mle_not_converged"]
    if flags:
        logger.warning("Optimizer stopped without convergence: %s", res.message)

    try:
        hess = approx_hess3(res.x, neg_loglik)
        if not np.all(np.isfinite(hess)):
            raise NumericalError("non-finite Hessian")
        cov = _ridge_to_pd(np.linalg.pinv(hess))
    except (NumericalError, np.linalg.LinAlgError) as e:
        logger.warning("Hessian at the mode unusable (%s); using scaled identity", e)
        cov = FALLBACK_SCALE * np.eye(len(free_idx))
        flags.append("hessian_fallback")
    logger.info("Mode found: loglik=%.3f after %d iterations", -res.fun * target.n_obs, res.nit)
    return MleResult(vector=target.full(res.x), cov=cov, loglik=-res.fun * target.n_obs,
                     converged=bool(res.success), flags=flags)


# ============ Adaptive RW-MH within Gibbs ============

def _cholesky(cov: np.ndarray, epsilon: float) -> Optional[np.ndarray]:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        try:
            return np.linalg.cholesky(cov + epsilon * np.eye(len(cov)))
        except np.linalg.LinAlgError:
            return None


@dataclass
class ChainOutput:
    draws: np.ndarray
    log_posts: np.ndarray
    accepted: np.ndarray
    accepted_post_adapt: np.ndarray
    attempts_post_adapt: int


def _run_chain(target: LikelihoodTarget, start: np.ndarray, cov: np.ndarray, config: McmcConfig,
               rng: np.random.Generator, chain: int) -> ChainOutput:
    free_idx = target.free_idx
    position = {idx: k for k, idx in enumerate(free_idx)}
    block_cols = [np.array([position[i] for i in idx]) for _, idx in target.blocks]
    chols = []
    for cols in block_cols:
        chol = _cholesky(cov[np.ix_(cols, cols)], config.epsilon)
        chols.append(chol if chol is not None else math.sqrt(FALLBACK_SCALE) * np.eye(len(cols)))

    current = start.copy()
    lp_current = target.log_posterior(current)
    if not np.isfinite(lp_current):
        raise NumericalError("log posterior is not finite at the chain start")

    n_blocks = len(target.blocks)
    history = np.empty((config.n_iter, len(current)))
    log_posts = np.empty(config.n_iter)
    accepted = np.zeros(n_blocks)
    accepted_post = np.zeros(n_blocks)
    dof = config.proposal_dof

    iterations = tqdm(range(config.n_iter), desc=f"MCMC chain {chain}", disable=not config.progress)
    for m in iterations:
        if m >= config.adapt_start and (m - config.adapt_start) % config.adapt_every == 0:
            for b, (_, idx) in enumerate(target.blocks):
                d = len(idx)
                chi = config.chi if config.chi is not None else 2.38 ** 2 / d
                s_m = np.atleast_2d(np.cov(history[:m, idx], rowvar=False))
                if m < 2 or not np.all(np.isfinite(s_m)):
                    continue
                chol = _cholesky(chi * s_m + config.epsilon * np.eye(d), config.epsilon)
                if chol is not None:
                    chols[b] = chol
        for b, (_, idx) in enumerate(target.blocks):
            d = len(idx)
            z = rng.standard_normal(d)
            w = rng.chisquare(dof)
            log_u = math.log(rng.uniform())
            candidate = current.copy()
            candidate[idx] = current[idx] + chols[b] @ z * math.sqrt(dof / w)
            lp_candidate = target.log_posterior(candidate)
            if log_u < lp_candidate - lp_current:
                current, lp_current = candidate, lp_candidate
                accepted[b] += 1
                if m >= config.adapt_start:
                    accepted_post[b] += 1
        history[m] = current
        log_posts[m] = lp_current

    return ChainOutput(
        draws=history[config.burn_in:], log_posts=log_posts[config.burn_in:],
        accepted=accepted / config.n_iter, accepted_post_adapt=accepted_post,
        attempts_post_adapt=max(config.n_iter - config.adapt_start, 0),
    )


def rwmh_within_gibbs(data, config: McmcConfig, variant=ModelVariant.TVP,
                      target: Optional[LikelihoodTarget] = None, mle: Optional[MleResult] = None,
                      start: Optional[np.ndarray] = None) -> PosteriorDraws:
    """Sample the posterior of the static parameter vector.

    Each iteration cycles the parameter blocks; every block draws a
    multivariate-t random-walk proposal from its own covariance, initialised
    from the inverse Hessian at the mode and, after ``adapt_start``, replaced
    every ``adapt_every`` iterations by chi * S_M + epsilon * I.
    """
    target = target or build_target(variant, data, config.harmonics, config.psi_blocking)
    mle = mle or mle_init(target)
    start = mle.vector if start is None else np.asarray(start, dtype=float)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)

    outputs = []
    for chain, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        outputs.append(_run_chain(target, start, mle.cov, config, rng, chain))
        logger.info("Chain %d done: acceptance %s", chain,
                    ", ".join(f"{name}={rate:.2f}" for (name, _), rate in zip(target.blocks, outputs[-1].accepted)))

    names = [name for name, _ in target.blocks]
    acc = np.mean([o.accepted for o in outputs], axis=0)
    acc_post = {}
    if outputs[0].attempts_post_adapt:
        post = np.mean([o.accepted_post_adapt / o.attempts_post_adapt for o in outputs], axis=0)
        acc_post = dict(zip(names, post.tolist()))
    draws = np.concatenate([o.draws for o in outputs])
    log_posts = np.concatenate([o.log_posts for o in outputs])
    param_paths = posterior_paths(target, draws, config.path_draws)
    return PosteriorDraws(
        variant=target.variant, names=target.names, draws=draws, log_posts=log_posts,
        acc_rates=dict(zip(names, acc.tolist())), acc_rates_post_adapt=acc_post,
        param_paths=param_paths, flags=list(mle.flags),
    )


def point_mass_posterior(target: LikelihoodTarget, mle: Optional[MleResult] = None) -> PosteriorDraws:
    """Degenerate posterior at the mode, used for cheap backtests"""
    mle = mle or mle_init(target)
    draws = mle.vector[None, :]
    return PosteriorDraws(
        variant=target.variant, names=target.names, draws=draws, log_posts=np.array([mle.loglik]),
        acc_rates={}, param_paths=posterior_paths(target, draws, 1), flags=list(mle.flags),
    )


def thin_indices(n: int, keep: int) -> np.ndarray:
    if n <= keep:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, keep).round().astype(int))


def posterior_paths(target: LikelihoodTarget, draws: np.ndarray, keep: int,
                    diagnostics: Optional[Diagnostics] = None) -> np.ndarray:
    """Filtered rate paths for an evenly thinned subset of draws.

    Shape (draws, T, 3) for single-country targets and (draws, K, T, 3) for
    the factor model.
    """
    paths = []
    for row in draws[thin_indices(len(draws), keep)]:
        result = target.filter_fn(row)
        if diagnostics is not None:
            diagnostics.merge(result.diagnostics)
        paths.append(result.rates)
    return np.array(paths)


# ============ Posterior summaries ============

def hpdi(draws, level: float = 0.95) -> Tuple:
    """Shortest interval holding ``level`` of the sample, along axis 0"""
    if not 0 < level < 1:
        raise DomainError("HPDI level must lie in (0, 1)")
    x = np.sort(np.asarray(draws, dtype=float), axis=0)
    n = x.shape[0]
    m = min(max(int(math.ceil(level * n)), 1), n)
    widths = x[m - 1:] - x[:n - m + 1]
    start = np.argmin(widths, axis=0)
    if x.ndim == 1:
        return float(x[start]), float(x[start + m - 1])
    lower = np.take_along_axis(x, start[None, ...], axis=0)[0]
    upper = np.take_along_axis(x, (start + m - 1)[None, ...], axis=0)[0]
    return lower, upper


def summarize_draws(posterior: PosteriorDraws, level: float = 0.95) -> dict:
    """Median, mean, sd and HPDI of every parameter"""
    lower, upper = hpdi(posterior.draws, level)
    summary = {}
    for k, name in enumerate(posterior.names):
        column = posterior.draws[:, k]
        summary[name] = {
            "median": float(np.median(column)),
            "mean": float(column.mean()),
            "sd": float(column.std(ddof=1)) if len(column) > 1 else 0.0,
            "hpdi_lower": float(lower[k]),
            "hpdi_upper": float(upper[k]),
        }
    return summary
