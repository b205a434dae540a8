"""
Domain Schema Definitions
"""
from collections import Counter
from datetime import date
from enum import Enum
from typing import Annotated, Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator

from src.errors import DataError


PARAMETERS = ("beta", "gamma", "nu")
N_HARMONICS = 3
SEASON_PERIOD = 7


def _frozen_array(value: Any, dtype) -> np.ndarray:
    arr = np.array(value, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


FloatArray = Annotated[np.ndarray, BeforeValidator(lambda v: _frozen_array(v, np.float64))]
BoolArray = Annotated[np.ndarray, BeforeValidator(lambda v: _frozen_array(v, bool))]
DateArray = Annotated[np.ndarray, BeforeValidator(lambda v: _frozen_array(v, "datetime64[D]"))]


class ModelVariant(str, Enum):
    """Model families that can be fitted"""
    FP = "fp"
    TVP = "tvp"
    TVP_BETA = "tvp-beta"
    MF = "mf"
    FACTOR = "factor"


class Diagnostics:
    """Named event counters collected during a run (clamps, floors, fallbacks)"""

    def __init__(self, counts: Optional[Dict[str, int]] = None):
        self.counts: Counter = Counter(counts or {})

    def bump(self, name: str, n: int = 1):
        if n:
            self.counts[name] += int(n)

    def merge(self, other: "Diagnostics") -> "Diagnostics":
        self.counts.update(other.counts)
        return self

    def as_dict(self) -> Dict[str, int]:
        return dict(sorted(self.counts.items()))

    def __bool__(self) -> bool:
        return bool(self.counts)


class _ArrayModel(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


# ============ Rates and intensities ============

class RateTriple(BaseModel):
    """Structural SIRD rates (1/day)"""
    model_config = ConfigDict(frozen=True)

    beta: float = Field(gt=0, description="Infection rate")
    gamma: float = Field(gt=0, lt=1, description="Recovery rate")
    nu: float = Field(gt=0, lt=1, description="Death rate")

    def as_array(self) -> np.ndarray:
        return np.array([self.beta, self.gamma, self.nu])


class PoissonMeans(BaseModel):
    """Conditional Poisson intensities of (dC, dRc, dD) for one day"""
    model_config = ConfigDict(frozen=True)

    lambda1: float = Field(ge=0, description="New confirmed intensity")
    lambda2: float = Field(ge=0, description="New recoveries intensity")
    lambda3: float = Field(ge=0, description="New deaths intensity")

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2, self.lambda3])


class ScoreTriple(BaseModel):
    """Scaled scores of one day's observation"""
    model_config = ConfigDict(frozen=True)

    s_beta: float
    s_gamma: float
    s_nu: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s_beta, self.s_gamma, self.s_nu])


# ============ Compartment data ============

class CompartmentSeries(_ArrayModel):
    """Daily count panel for one country.

    Observation t (1-based) sits at array position t-1 of the daily arrays and
    uses the states i[t-1], s[t-1]; i and s carry the initial condition at
    position 0 and therefore have one more entry than the daily arrays.
    Days flagged in ``missing_rc`` hold a fill value in ``delta_rc`` (0 unless
    imputed) and are excluded from the recovery likelihood.
    """
    dates: DateArray
    delta_c: FloatArray
    delta_rc: FloatArray
    delta_d: FloatArray
    population: float = Field(gt=0)
    i0: float = Field(ge=0)
    i: FloatArray
    s: FloatArray
    missing_rc: BoolArray
    name: str = ""
    step_days: int = Field(1, ge=1, description="Spacing of the date grid (7 for weekly aggregates)")

    @model_validator(mode="after")
    def _check_identities(self):
        n = len(self.dates)
        for field in ("delta_c", "delta_rc", "delta_d", "missing_rc"):
            if len(getattr(self, field)) != n:
                raise ValueError(f"{field} has length {len(getattr(self, field))}, expected {n}")
        if len(self.i) != n + 1 or len(self.s) != n + 1:
            raise ValueError("i and s must carry the initial condition plus one entry per day")
        if n > 1 and np.any(np.diff(self.dates) != np.timedelta64(self.step_days, "D")):
            raise ValueError(f"dates must be strictly increasing with {self.step_days}-day spacing")
        for field in ("delta_c", "delta_rc", "delta_d", "i", "s"):
            if np.any(getattr(self, field) < 0):
                raise ValueError(f"{field} contains negative values")
        flows = self.delta_c - self.delta_rc - self.delta_d
        if not np.allclose(np.diff(self.i), flows, rtol=1e-9, atol=1e-6):
            raise ValueError("compartment identity I_t = I_{t-1} + dC - dRc - dD violated")
        if not np.allclose(np.diff(self.s), -self.delta_c, rtol=1e-9, atol=1e-6):
            raise ValueError("susceptible identity S_t = S_{t-1} - dC violated")
        if not np.isclose(self.i[0], self.i0):
            raise ValueError("initial state must satisfy I_0 = i0")
        if self.s[0] + self.i[0] > self.population * (1 + 1e-12):
            raise ValueError("initial states exceed the population")
        return self

    @classmethod
    def from_counts(cls, dates, delta_c, delta_d, population: float, i0: float,
                    delta_rc=None, missing_rc=None, name: str = "", step_days: int = 1,
                    s0: Optional[float] = None) -> "CompartmentSeries":
        """Build a series and derive I and S from the compartment identities.

        S_0 defaults to N - I_0. NaN recoveries are marked missing and
        contribute 0 to the identity.
        """
        delta_c = np.asarray(delta_c, dtype=float)
        delta_d = np.asarray(delta_d, dtype=float)
        dates = np.asarray(dates, dtype="datetime64[D]")
        if delta_rc is None:
            delta_rc = np.full(len(delta_c), np.nan)
        delta_rc = np.asarray(delta_rc, dtype=float)
        missing = np.isnan(delta_rc)
        if missing_rc is not None:
            missing = missing | np.asarray(missing_rc, dtype=bool)
        delta_rc = np.where(np.isnan(delta_rc), 0.0, delta_rc)

        i = np.concatenate([[i0], i0 + np.cumsum(delta_c - delta_rc - delta_d)])
        s0 = population - i0 if s0 is None else s0
        s = np.concatenate([[s0], s0 - np.cumsum(delta_c)])
        # rounding noise from float accumulation
        i[np.abs(i) < 1e-9] = 0.0
        if np.any(i < 0):
            first = int(np.argmax(i < 0))
            raise DataError(f"active infections become negative on {dates[first - 1]} ({name or 'series'})")
        if np.any(s < 0):
            first = int(np.argmax(s < 0))
            raise DataError(f"susceptibles become negative on {dates[first - 1]} ({name or 'series'})")

        return cls(
            dates=dates, delta_c=delta_c, delta_rc=delta_rc, delta_d=delta_d,
            population=population, i0=i0, i=i, s=s, missing_rc=missing, name=name, step_days=step_days,
        )

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def observations(self) -> np.ndarray:
        """Daily counts as a (T, 3) array with NaN at missing recoveries"""
        rc = np.where(self.missing_rc, np.nan, self.delta_rc)
        return np.column_stack([self.delta_c, rc, self.delta_d])

    def slice(self, start: int, stop: Optional[int] = None) -> "CompartmentSeries":
        """Observations [start, stop) with the state at ``start`` as initial condition"""
        stop = self.n_days if stop is None else stop
        return CompartmentSeries(
            dates=self.dates[start:stop],
            delta_c=self.delta_c[start:stop],
            delta_rc=self.delta_rc[start:stop],
            delta_d=self.delta_d[start:stop],
            population=self.population,
            i0=float(self.i[start]),
            i=self.i[start:stop + 1],
            s=self.s[start:stop + 1],
            missing_rc=self.missing_rc[start:stop],
            name=self.name,
            step_days=self.step_days,
        )

    def with_recoveries(self, delta_rc: np.ndarray) -> "CompartmentSeries":
        """Rebuild I and S with new recovery values, keeping the missingness mask"""
        return CompartmentSeries.from_counts(
            self.dates, self.delta_c, self.delta_d, self.population, self.i0,
            delta_rc=delta_rc, missing_rc=self.missing_rc, name=self.name, step_days=self.step_days,
            s0=float(self.s[0]),
        )


class TestingSeries(_ArrayModel):
    """Daily tests and positives with the derived positivity fraction rho.

    Days with zero tests inherit the last observed rho (``carried``); days
    before the first test keep rho = NaN.
    """
    __test__ = False

    tests: FloatArray
    positives: FloatArray
    rho: FloatArray
    carried: BoolArray

    @model_validator(mode="after")
    def _check(self):
        if np.any(self.positives > self.tests):
            raise ValueError("positives exceed tests")
        finite = self.rho[np.isfinite(self.rho)]
        if np.any((finite < 0) | (finite > 1)):
            raise ValueError("rho must lie in [0, 1]")
        return self

    @classmethod
    def from_counts(cls, tests, positives) -> "TestingSeries":
        tests = np.nan_to_num(np.asarray(tests, dtype=float))
        positives = np.nan_to_num(np.asarray(positives, dtype=float))
        if np.any(positives > tests):
            first = int(np.argmax(positives > tests))
            raise DataError(f"positives exceed tests at day index {first}")
        rho = np.full(len(tests), np.nan)
        carried = np.zeros(len(tests), dtype=bool)
        last = np.nan
        for t, (n_tests, n_pos) in enumerate(zip(tests, positives)):
            if n_tests > 0:
                last = n_pos / n_tests
            else:
                carried[t] = np.isfinite(last)
            rho[t] = last
        return cls(tests=tests, positives=positives, rho=rho, carried=carried)

    @classmethod
    def from_rho(cls, rho) -> "TestingSeries":
        rho = np.asarray(rho, dtype=float)
        return cls(tests=np.ones_like(rho), positives=rho, rho=rho, carried=np.zeros(len(rho), dtype=bool))


class WeeklyDeaths(_ArrayModel):
    """Weekly death totals released on days t = 7k of the sample grid"""
    release_days: Annotated[np.ndarray, BeforeValidator(lambda v: _frozen_array(v, np.int64))]
    week_end_dates: DateArray
    reported_weekly: FloatArray
    excess: FloatArray
    total: FloatArray
    floored: BoolArray

    @model_validator(mode="after")
    def _check(self):
        if np.any(self.release_days % SEASON_PERIOD != 0) or np.any(self.release_days <= 0):
            raise ValueError("release days must be positive multiples of 7")
        if np.any(self.total < self.reported_weekly):
            raise ValueError("weekly totals below reported weekly deaths")
        return self

    @classmethod
    def from_daily(cls, series: CompartmentSeries, excess=None) -> "WeeklyDeaths":
        """Aggregate reported daily deaths into complete weeks and add excess deaths.

        ``excess`` is either one value per complete week or None (no excess).
        Weeks whose excess is negative are floored to the reported total.
        """
        n_weeks = series.n_days // SEASON_PERIOD
        release = SEASON_PERIOD * np.arange(1, n_weeks + 1)
        reported = series.delta_d[: n_weeks * SEASON_PERIOD].reshape(n_weeks, SEASON_PERIOD).sum(axis=1)
        excess = np.zeros(n_weeks) if excess is None else np.nan_to_num(np.asarray(excess, dtype=float))
        if len(excess) != n_weeks:
            raise DataError(f"expected {n_weeks} weekly excess values, got {len(excess)}")
        floored = excess < 0
        total = reported + np.where(floored, 0.0, excess)
        return cls(
            release_days=release, week_end_dates=series.dates[release - 1],
            reported_weekly=reported, excess=excess, total=total, floored=floored,
        )


class MixedFrequencyData(_ArrayModel):
    """Inputs of the mixed-frequency model, aligned on the daily grid"""
    series: CompartmentSeries
    testing: TestingSeries
    weekly: WeeklyDeaths

    @model_validator(mode="after")
    def _aligned(self):
        if len(self.testing.rho) != self.series.n_days:
            raise ValueError("testing series must cover every day of the compartment series")
        if len(self.weekly.release_days) and self.weekly.release_days[-1] > self.series.n_days:
            raise ValueError("weekly releases beyond the end of the daily sample")
        return self


class Panel(_ArrayModel):
    """Several countries on a common daily grid"""
    countries: List[CompartmentSeries]
    names: List[str]

    @model_validator(mode="after")
    def _check(self):
        if len(self.countries) < 1 or len(self.countries) != len(self.names):
            raise ValueError("panel needs one name per country")
        first = self.countries[0].dates
        for series in self.countries[1:]:
            if len(series.dates) != len(first) or np.any(series.dates != first):
                raise ValueError("panel countries must share the date grid")
        return self

    @classmethod
    def from_series(cls, countries: List[CompartmentSeries], names: Optional[List[str]] = None) -> "Panel":
        """Align countries to the intersection of their date grids"""
        names = names or [c.name or f"country_{i + 1}" for i, c in enumerate(countries)]
        start = max(c.dates[0] for c in countries)
        end = min(c.dates[-1] for c in countries)
        if end < start:
            raise DataError("countries share no common dates")
        aligned = []
        for series in countries:
            lo = int((start - series.dates[0]) / np.timedelta64(1, "D"))
            hi = int((end - series.dates[0]) / np.timedelta64(1, "D")) + 1
            aligned.append(series.slice(lo, hi))
        return cls(countries=aligned, names=list(names))

    @property
    def n_countries(self) -> int:
        return len(self.countries)

    @property
    def populations(self) -> np.ndarray:
        return np.array([c.population for c in self.countries])


# ============ Model parameters ============

class TvpState(_ArrayModel):
    """Transformed-space state: level and 3 harmonic pairs per parameter"""
    level: FloatArray = Field(description="(3,) levels of beta~, gamma~, nu~")
    harmonics: FloatArray = Field(description="(3, 3) theta_js per parameter and harmonic")
    harmonics_star: FloatArray = Field(description="(3, 3) theta*_js per parameter and harmonic")

    @classmethod
    def initial(cls, theta_l0) -> "TvpState":
        zeros = np.zeros((len(PARAMETERS), N_HARMONICS))
        return cls(level=theta_l0, harmonics=zeros, harmonics_star=zeros)

    def composite(self) -> np.ndarray:
        return self.level + self.harmonics.sum(axis=-1)


class StaticParams(_ArrayModel):
    """Static parameter vector Phi of the single-country score-driven model"""
    theta_l0: FloatArray
    alpha: FloatArray
    psi: FloatArray = Field(description="(3 parameters, 3 harmonics)")
    psi_star: FloatArray = Field(description="(3 parameters, 3 harmonics)")
    k: Optional[float] = Field(None, gt=0, description="Reporting-decay constant (mixed frequency only)")

    @model_validator(mode="after")
    def _check(self):
        if self.theta_l0.shape != (3,) or self.alpha.shape != (3,):
            raise ValueError("theta_l0 and alpha must have 3 entries")
        if self.psi.shape != (3, N_HARMONICS) or self.psi_star.shape != (3, N_HARMONICS):
            raise ValueError("psi and psi_star must be 3 x 3")
        for field in ("theta_l0", "alpha", "psi", "psi_star"):
            if not np.all(np.isfinite(getattr(self, field))):
                raise ValueError(f"{field} must be finite")
        return self

    @classmethod
    def constant(cls, theta_l0, k: Optional[float] = None) -> "StaticParams":
        """Fixed-parameter configuration: no score loadings"""
        zeros = np.zeros((3, N_HARMONICS))
        return cls(theta_l0=theta_l0, alpha=np.zeros(3), psi=zeros, psi_star=zeros, k=k)

    @staticmethod
    def vector_names(has_k: bool = False) -> List[str]:
        names = [f"theta_l0_{p}" for p in PARAMETERS] + [f"alpha_{p}" for p in PARAMETERS]
        names += [f"psi{j + 1}_{p}" for p in PARAMETERS for j in range(N_HARMONICS)]
        names += [f"psi_star{j + 1}_{p}" for p in PARAMETERS for j in range(N_HARMONICS)]
        if has_k:
            names.append("k")
        return names

    def to_vector(self) -> np.ndarray:
        parts = [self.theta_l0, self.alpha, self.psi.ravel(), self.psi_star.ravel()]
        if self.k is not None:
            parts.append([self.k])
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, vec, has_k: bool = False) -> "StaticParams":
        vec = np.asarray(vec, dtype=float)
        return cls(
            theta_l0=vec[0:3], alpha=vec[3:6],
            psi=vec[6:15].reshape(3, N_HARMONICS), psi_star=vec[15:24].reshape(3, N_HARMONICS),
            k=float(vec[24]) if has_k else None,
        )


SINGLE_VECTOR_SIZE = 24


class FactorParams(_ArrayModel):
    """Parameters of the multi-country model with a common infection-level factor.

    Each country's ``theta_l0[0]`` and ``alpha[0]`` refer to its idiosyncratic
    infection level; ``factor_l0`` is fixed for identification, as is tau[0] = 1.
    """
    countries: List[StaticParams]
    tau: FloatArray
    alpha_common: float
    factor_l0: float

    @model_validator(mode="after")
    def _check(self):
        if len(self.tau) != len(self.countries):
            raise ValueError("one loading per country required")
        if self.tau[0] != 1.0:
            raise ValueError("the first country's loading is normalised to 1")
        return self

    @staticmethod
    def vector_names(country_names: List[str]) -> List[str]:
        names = []
        for country in country_names:
            names += [f"{country}:{n}" for n in StaticParams.vector_names()]
        names += [f"tau_{country}" for country in country_names[1:]]
        names.append("alpha_common")
        return names

    def to_vector(self) -> np.ndarray:
        parts = [c.to_vector() for c in self.countries]
        parts += [self.tau[1:], [self.alpha_common]]
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, vec, n_countries: int, factor_l0: float) -> "FactorParams":
        vec = np.asarray(vec, dtype=float)
        size = SINGLE_VECTOR_SIZE
        countries = [StaticParams.from_vector(vec[i * size:(i + 1) * size]) for i in range(n_countries)]
        offset = n_countries * size
        tau = np.concatenate([[1.0], vec[offset:offset + n_countries - 1]])
        return cls(countries=countries, tau=tau, alpha_common=float(vec[offset + n_countries - 1]),
                   factor_l0=factor_l0)


# ============ Estimation results ============

class GammaPosterior(BaseModel):
    """Gamma(shape, rate) posterior of one fixed rate"""
    model_config = ConfigDict(frozen=True)

    shape: float = Field(gt=0)
    rate: float = Field(gt=0)

    @property
    def mean(self) -> float:
        return self.shape / self.rate


class WindowConfig(BaseModel):
    """Rolling-window baseline settings"""
    model_config = ConfigDict(frozen=True)

    window_len: int = Field(30, ge=2, description="Window length M in days")
    dow_effects: bool = Field(True, description="Day-of-week multiplicative dummies")

    @model_validator(mode="after")
    def _identifiable(self):
        if self.dow_effects and self.window_len < 8:
            raise ValueError("day-of-week effects need a window of at least 8 days")
        return self


class McmcConfig(BaseModel):
    """Adaptive random-walk Metropolis-Hastings settings"""
    model_config = ConfigDict(frozen=True)

    n_iter: int = Field(5000, gt=0)
    burn_in: int = Field(1000, ge=0)
    chi: Optional[float] = Field(None, gt=0, description="Proposal scale; None means 2.38^2/d per block")
    epsilon: float = Field(1e-8, gt=0, description="Covariance ridge")
    adapt_start: int = Field(500, ge=1)
    adapt_every: int = Field(100, ge=1)
    proposal_dof: float = Field(15.0, gt=2)
    seed: int = Field(0, ge=0)
    n_chains: int = Field(1, ge=1)
    psi_blocking: Literal["per_parameter", "joint"] = "per_parameter"
    harmonics: bool = Field(True, description="Sample seasonal harmonic loadings")
    path_draws: int = Field(200, ge=1, description="Retained draws used for parameter-path summaries")
    progress: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.burn_in >= self.n_iter:
            raise ValueError("burn_in must be smaller than n_iter")
        return self


class PosteriorDraws(_ArrayModel):
    """Retained MCMC draws of Phi"""
    variant: ModelVariant
    names: List[str]
    draws: FloatArray
    log_posts: FloatArray
    acc_rates: Dict[str, float]
    acc_rates_post_adapt: Dict[str, float] = Field(default_factory=dict)
    param_paths: Optional[FloatArray] = Field(None, description="(draws, T, 3) filtered rate paths")
    flags: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self):
        if self.draws.ndim != 2 or self.draws.shape[1] != len(self.names):
            raise ValueError("draws must be (n_draws, len(names))")
        if len(self.log_posts) != len(self.draws):
            raise ValueError("one log posterior per draw required")
        if not np.all(np.isfinite(self.draws)):
            raise ValueError("draws must be finite")
        for rates in (self.acc_rates, self.acc_rates_post_adapt):
            if any(not 0.0 <= r <= 1.0 for r in rates.values()):
                raise ValueError("acceptance rates must lie in [0, 1]")
        return self

    @property
    def n_draws(self) -> int:
        return len(self.draws)

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def median(self) -> np.ndarray:
        return np.median(self.draws, axis=0)


class ForecastSet(_ArrayModel):
    """Per-horizon predictive draws and summaries for each forecast target"""
    horizons: Annotated[np.ndarray, BeforeValidator(lambda v: _frozen_array(v, np.int64))]
    dates: DateArray
    draws: Dict[str, np.ndarray]
    point: Dict[str, np.ndarray]
    mean: Dict[str, np.ndarray]
    intervals: Dict[str, np.ndarray]
    flags: Dict[str, int] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self):
        for target, values in self.draws.items():
            if values.shape[1] != len(self.horizons):
                raise ValueError(f"{target}: one column per horizon required")
            if np.any(values < 0):
                raise ValueError(f"{target}: predictive draws must be nonnegative")
        return self


class LossSeries(_ArrayModel):
    """Aligned forecast errors of two models at a fixed horizon"""
    errors_a: FloatArray
    errors_b: FloatArray
    horizon: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if len(self.errors_a) != len(self.errors_b):
            raise ValueError("error series must have equal length")
        return self

    @property
    def loss_a(self) -> np.ndarray:
        return self.errors_a ** 2

    @property
    def loss_b(self) -> np.ndarray:
        return self.errors_b ** 2


# ============ Run configuration ============

class DataConfig(BaseModel):
    """Input files and sample definition"""
    path: Optional[str] = Field(None, description="CSV of one country")
    paths: List[str] = Field(default_factory=list, description="One CSV per country (factor model)")
    vintages_dir: Optional[str] = Field(None, description="Directory of YYYY-MM-DD.csv snapshots")
    forecasts_path: Optional[str] = Field(None, description="Point forecasts to evaluate")
    population: Optional[float] = Field(None, gt=0)
    populations: List[float] = Field(default_factory=list)
    start_threshold: Optional[float] = Field(1000.0, ge=0, description="Cumulative confirmed at sample start")
    frequency: Literal["daily", "weekly"] = Field("daily", description="weekly sums counts into 7-day blocks")


class ForecastConfig(BaseModel):
    enabled: bool = False
    horizon: int = Field(14, ge=1)
    reps_per_draw: int = Field(10, ge=1)
    max_draws: int = Field(200, ge=1)
    level: float = Field(0.95, gt=0, lt=1)


class BacktestConfig(BaseModel):
    models: List[str] = Field(default_factory=lambda: ["rw-30", "rw-45", "rw-60", "tvp", "tvp-beta"])
    reference: str = "tvp"
    horizons: List[int] = Field(default_factory=lambda: [1, 7, 14])
    targets: List[Literal["delta_c", "delta_d"]] = Field(default_factory=lambda: ["delta_c", "delta_d"])
    tvp_fit: Literal["mcmc", "mode"] = "mode"
    reps_per_draw: int = Field(50, ge=1)
    max_draws: int = Field(100, ge=1)


class FactorSimSpec(BaseModel):
    """Panel simulation with an exogenous sinusoidal common infection factor"""
    tau: List[float]
    base_rates: List[RateTriple]
    populations: List[float]
    i0: List[float]
    amplitude: float = 0.3
    period: float = 120.0

    @model_validator(mode="after")
    def _check(self):
        k = len(self.tau)
        if k < 2 or not (len(self.base_rates) == len(self.populations) == len(self.i0) == k):
            raise ValueError("factor simulation needs at least 2 countries with matching lists")
        if self.tau[0] != 1.0:
            raise ValueError("tau[0] must be 1")
        return self


class SimSpec(_ArrayModel):
    """Synthetic-data specification"""
    params: Optional[StaticParams] = None
    n_days: int = Field(400, ge=30)
    population: float = Field(1e7, gt=0)
    i0: float = Field(1000.0, gt=0)
    start_date: date = date(2020, 3, 1)
    rho: Optional[FloatArray] = Field(None, description="Daily positivity path for the MF simulation")
    factor: Optional[FactorSimSpec] = None

    @model_validator(mode="after")
    def _check(self):
        if self.params is None and self.factor is None:
            raise ValueError("simulation needs params or a factor specification")
        if self.rho is not None and len(self.rho) < self.n_days:
            raise ValueError("rho must cover every simulated day")
        return self


class OutputConfig(BaseModel):
    directory: str = "outputs/run"


class RunConfig(BaseModel):
    """Complete run configuration (YAML + CLI overrides)"""
    model: ModelVariant = ModelVariant.TVP
    seed: int = Field(0, ge=0)
    data: DataConfig = Field(default_factory=DataConfig)
    mcmc: McmcConfig = Field(default_factory=McmcConfig)
    forecast: ForecastConfig = Field(default_factory=ForecastConfig)
    backtest: BacktestConfig = Field(default_factory=BacktestConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    simulation: Optional[Dict[str, Any]] = None
