import numpy as np
import pytest

from src.core_model import (
    DEFAULT_RECOVERY_RATE,
    aggregate_weekly,
    basic_reproduction,
    effective_reproduction,
    impute_missing_recoveries,
    link_backward,
    link_forward,
    observes_recoveries,
    poisson_logpmf,
    poisson_means,
    skellam_conditional_moments,
    unconditional_moments,
)
from src.errors import DomainError
from src.schema import CompartmentSeries, RateTriple
from tests.conftest import daily_dates

# rates reported for an early-pandemic sample with eR about 1.64
BETA_ANCHOR = 0.0122
NU_ANCHOR = 0.000133


def _rates_with_r0(beta: float, r0: float, nu: float = NU_ANCHOR) -> RateTriple:
    return RateTriple(beta=beta, gamma=beta / r0 - nu, nu=nu)


def test_link_forward_known_values():
    np.testing.assert_allclose(link_forward([1.0, 0.5, 0.5]), [0.0, 0.0, 0.0], atol=1e-15)
    theta = link_forward(RateTriple(beta=0.0122, gamma=0.00746, nu=0.000133))
    np.testing.assert_allclose(theta, [-4.4065, -4.8908, -8.9251], atol=5e-4)


def test_link_round_trip():
    rng = np.random.default_rng(0)
    rates = np.column_stack([rng.uniform(1e-4, 2.0, 1000), rng.uniform(1e-4, 0.99, 1000), rng.uniform(1e-4, 0.99, 1000)])
    np.testing.assert_allclose(link_backward(link_forward(rates)), rates, rtol=1e-12)


@pytest.mark.parametrize("raw", [[0.1, 1.0, 0.01], [0.1, 0.1, 0.0], [0.0, 0.1, 0.01], [-1.0, 0.1, 0.01]])
def test_link_forward_rejects_out_of_domain(raw):
    with pytest.raises(DomainError):
        link_forward(raw)


def test_poisson_means():
    rates = RateTriple(beta=0.1, gamma=0.05, nu=0.01)
    means = poisson_means(rates, 100, 1e6, 1e6)
    assert means.as_array() == pytest.approx([10.0, 5.0, 1.0])
    assert poisson_means(rates, 100, 5e5, 1e6).lambda1 == pytest.approx(5.0)
    assert poisson_means(rates, 0, 1e6, 1e6).as_array() == pytest.approx([0.0, 0.0, 0.0])


def test_poisson_means_rejects_invalid_states():
    rates = RateTriple(beta=0.1, gamma=0.05, nu=0.01)
    with pytest.raises(DomainError):
        poisson_means(rates, -1, 1e6, 1e6)
    with pytest.raises(DomainError):
        poisson_means(rates, 10, 2e6, 1e6)


def test_poisson_logpmf_values():
    assert poisson_logpmf(0, 1.0) == pytest.approx(-1.0)
    assert poisson_logpmf(5, 5.0) == pytest.approx(-1.7403, abs=1e-4)
    assert poisson_logpmf(0, 0.0) == 0.0


@pytest.mark.parametrize("mean", [0.1, 1.0, 10.0, 1000.0])
def test_poisson_logpmf_normalises(mean):
    support = np.arange(0, 3000)
    assert np.exp(poisson_logpmf(support, mean)).sum() == pytest.approx(1.0, abs=1e-10)


def test_poisson_logpmf_impossible_count():
    with pytest.raises(DomainError):
        poisson_logpmf(3, 0.0)
    with pytest.raises(DomainError):
        poisson_logpmf(-1, 2.0)


def test_skellam_moments_at_unit_reproduction():
    rates = RateTriple(beta=0.2, gamma=0.15, nu=0.05)
    mean, variance = skellam_conditional_moments(rates, 1000, 1e6, 1e6)
    assert mean == pytest.approx(1000.0)
    assert variance == pytest.approx(400.0)


def test_skellam_mean_anchor():
    rates = _rates_with_r0(BETA_ANCHOR, 1.64)
    mean, _ = skellam_conditional_moments(rates, 1000, 1e7, 1e7)
    assert mean == pytest.approx(1004.76, abs=0.01)


def test_skellam_moments_match_monte_carlo():
    rng = np.random.default_rng(42)
    n = 100_000
    for _ in range(20):
        rates = RateTriple(beta=rng.uniform(0.01, 0.5), gamma=rng.uniform(0.01, 0.3), nu=rng.uniform(0.001, 0.05))
        i_prev = float(rng.integers(50, 5000))
        s_prev = float(rng.uniform(0.2, 1.0)) * 1e6
        mean, variance = skellam_conditional_moments(rates, i_prev, s_prev, 1e6)
        lam = poisson_means(rates, i_prev, s_prev, 1e6).as_array()
        draws = i_prev + rng.poisson(lam[0], n) - rng.poisson(lam[1], n) - rng.poisson(lam[2], n)
        se_mean = np.sqrt(variance / n)
        # fourth cumulant of the difference equals the sum of the intensities
        se_var = np.sqrt((2 * variance ** 2 + lam.sum()) / n)
        assert abs(draws.mean() - mean) < 4 * se_mean
        assert abs(draws.var(ddof=1) - variance) < 4 * se_var


def test_unconditional_moments():
    flat = RateTriple(beta=0.2, gamma=0.15, nu=0.05)
    mean, variance = unconditional_moments(flat, 1000, 30)
    assert mean == pytest.approx(1000.0)
    assert variance == pytest.approx(0.4 * 30 * 1000)

    growing = _rates_with_r0(BETA_ANCHOR, 1.64)
    assert unconditional_moments(growing, 1000, 30)[0] == pytest.approx(1153.1, abs=0.1)
    assert unconditional_moments(growing, 1000, 0) == (1000.0, 0.0)
    # one step ahead coincides with the conditional moments at S = N
    assert unconditional_moments(growing, 1000, 1) == pytest.approx(
        skellam_conditional_moments(growing, 1000, 1e7, 1e7))


def test_reproduction_numbers():
    rates = RateTriple(beta=0.0122, gamma=0.00746, nu=0.000133)
    assert basic_reproduction(rates) == pytest.approx(1.607, abs=1e-3)
    assert abs(basic_reproduction(rates) - 1.6392) / 1.6392 < 0.05
    assert effective_reproduction(rates, 0.0, 1e6) == 0.0
    assert effective_reproduction(rates, 5e5, 1e6) == pytest.approx(basic_reproduction(rates) / 2)

    paths = np.array([[0.2, 0.1, 0.1], [0.3, 0.05, 0.05]])
    np.testing.assert_allclose(effective_reproduction(paths, [1e6, 5e5], 1e6), [1.0, 1.5])


def test_impute_missing_recoveries():
    series = CompartmentSeries.from_counts(
        daily_dates(6), [20, 20, 20, 20, 20, 20], [1, 1, 1, 1, 1, 1], 1e6, 500,
        delta_rc=[50, np.nan, 45, np.nan, 40, 41])
    imputed = impute_missing_recoveries(series, gamma=0.1)
    assert imputed.missing_rc.tolist() == series.missing_rc.tolist()
    assert imputed.delta_rc[1] == np.round(0.1 * series.i[1])
    assert imputed.delta_rc[3] == np.round(0.1 * imputed.i[3])
    np.testing.assert_allclose(np.diff(imputed.i), imputed.delta_c - imputed.delta_rc - imputed.delta_d)


def test_impute_estimates_gamma_when_omitted():
    series = CompartmentSeries.from_counts(
        daily_dates(4), [10, 10, 10, 10], [0, 0, 0, 0], 1e5, 1000, delta_rc=[100, 90, np.nan, 80])
    imputed = impute_missing_recoveries(series)
    assert not np.isnan(imputed.delta_rc).any()
    assert 50 < imputed.delta_rc[2] < 120


def test_impute_without_observed_recoveries():
    series = CompartmentSeries.from_counts(daily_dates(3), [1, 1, 1], [0, 0, 0], 1e4, 10)
    assert not observes_recoveries(series)
    imputed = impute_missing_recoveries(series)
    # round(0.07 * 10) on every day, with I held at 10
    np.testing.assert_array_equal(imputed.delta_rc, [1, 1, 1])
    np.testing.assert_array_equal(imputed.i, [10, 10, 10, 10])
    assert imputed.missing_rc.all()
    assert DEFAULT_RECOVERY_RATE == 0.07


def test_observes_recoveries():
    partial = CompartmentSeries.from_counts(daily_dates(3), [1, 1, 1], [0, 0, 0], 1e4, 10,
                                            delta_rc=[np.nan, 2, np.nan])
    assert observes_recoveries(partial)
    extinct = CompartmentSeries.from_counts(daily_dates(2), [0, 0], [0, 0], 1e4, 0, delta_rc=[0, 0])
    assert not observes_recoveries(extinct)


def test_aggregate_weekly():
    daily = CompartmentSeries.from_counts(
        daily_dates(16), np.arange(1, 17), np.ones(16), 1e6, 100, delta_rc=np.full(16, 2.0))
    weekly = aggregate_weekly(daily)
    assert weekly.n_days == 2
    assert weekly.step_days == 7
    np.testing.assert_allclose(weekly.delta_c, [28, 77])
    np.testing.assert_allclose(weekly.delta_rc, [14, 14])
    np.testing.assert_allclose(weekly.i, daily.i[[0, 7, 14]])
    np.testing.assert_allclose(weekly.s, daily.s[[0, 7, 14]])
    assert weekly.dates[0] == daily.dates[6]
