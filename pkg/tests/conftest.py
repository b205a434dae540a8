"""
Shared fixtures: small hand-made series and seeded simulated datasets
"""
import sys
from pathlib import Path

import numpy as np
import pytest

# 添加项目路径
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.cli_io import simulate
from src.core_model import link_forward
from src.schema import (
    CompartmentSeries,
    FactorSimSpec,
    MixedFrequencyData,
    RateTriple,
    SimSpec,
    StaticParams,
    TestingSeries,
    WeeklyDeaths,
)

TRUE_RATES = RateTriple(beta=0.2, gamma=0.1, nu=0.01)
TRUE_ALPHA = np.array([0.05, 0.02, 0.02])


def make_params(rates: RateTriple = TRUE_RATES, alpha=None, psi=None, psi_star=None, k=None) -> StaticParams:
    zeros = np.zeros((3, 3))
    return StaticParams(
        theta_l0=link_forward(rates),
        alpha=np.zeros(3) if alpha is None else np.asarray(alpha, dtype=float),
        psi=zeros if psi is None else psi,
        psi_star=zeros if psi_star is None else psi_star,
        k=k,
    )


def daily_dates(n: int, start: str = "2020-03-02") -> np.ndarray:
    return np.datetime64(start, "D") + np.arange(n)


@pytest.fixture
def toy_series() -> CompartmentSeries:
    return CompartmentSeries.from_counts(
        daily_dates(10),
        delta_c=[12, 15, 11, 18, 20, 17, 22, 25, 19, 24],
        delta_d=[0, 1, 0, 1, 1, 0, 2, 1, 1, 2],
        population=1e6,
        i0=200,
        delta_rc=[5, 6, 8, 7, 9, 10, 8, 11, 12, 10],
        name="toy",
    )


@pytest.fixture
def constant_params() -> StaticParams:
    return make_params()


@pytest.fixture(scope="session")
def tvp_params() -> StaticParams:
    return make_params(alpha=TRUE_ALPHA)


@pytest.fixture(scope="session")
def simulated_tvp(tvp_params):
    return simulate(SimSpec(params=tvp_params, n_days=150, population=1e7, i0=1000), seed=11)


@pytest.fixture(scope="session")
def simulated_panel():
    spec = SimSpec(n_days=120, factor=FactorSimSpec(
        tau=[1.0, 0.8],
        base_rates=[RateTriple(beta=0.12, gamma=0.1, nu=0.01), RateTriple(beta=0.13, gamma=0.11, nu=0.01)],
        populations=[1e7, 5e6],
        i0=[2000, 1000],
    ))
    return simulate(spec, seed=5)


def mf_inputs(series: CompartmentSeries, rho=0.1, excess=None) -> MixedFrequencyData:
    """Mixed-frequency inputs with a flat (or given) positivity path"""
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (series.n_days,))
    return MixedFrequencyData(series=series, testing=TestingSeries.from_rho(rho),
                              weekly=WeeklyDeaths.from_daily(series, excess))
