import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import linalg, stats

from bhroute.distributions import (
    DistKind,
    convolve,
    exponential,
    hypoexponential,
    hypoexponential_coefficients,
    md1_mean_sojourn,
    md1_queue_length_cdf,
    md1_sojourn,
    md1_waiting_cdf,
    md1_waiting_cdf_classical,
    rates_distinct,
)
from bhroute.errors import NumericalError


def phase_type_sf(rates, t):
    """P(sum of independent Exp(r_i) > t) via the matrix exponential of the sub-generator."""
    n = len(rates)
    s = np.diag(-np.asarray(rates, dtype=float))
    for i in range(n - 1):
        s[i, i + 1] = rates[i]
    start = np.zeros(n)
    start[0] = 1.0
    return np.array([start @ linalg.expm(s * ti) @ np.ones(n) for ti in np.atleast_1d(t)])


def md1_waiting_cdf_mp(t, lam, mu, digits=80):
    """Classical alternating series in high precision."""
    with mpmath.workdps(digits):
        t, lam, mu = mpmath.mpf(t), mpmath.mpf(lam), mpmath.mpf(mu)
        d = 1 / mu
        total = mpmath.mpf(0)
        for j in range(int(mpmath.floor(t * mu)) + 1):
            y = lam * (j * d - t)
            total += mpmath.exp(-y) * y**j / mpmath.factorial(j)
        return float((1 - lam / mu) * total)


STEP, HORIZON = 0.0025, 50.0


# ---------------------------------------------------------------------------
# exponential and hypoexponential


def test_exponential_cdf_value():
    d = exponential(2.0, STEP, HORIZON)
    assert d.cdf(0.5) == pytest.approx(1 - math.exp(-1), abs=1e-15)
    assert d.cdf(0.0) == 0.0 and d.cdf(-1.0) == 0.0
    assert d.exponential_rate == 2.0
    assert d.mean() == pytest.approx(0.5)


def test_hypoexponential_two_rates():
    d = hypoexponential([2.0, 1.0], STEP, HORIZON)
    t = np.linspace(0, 6, 61)
    np.testing.assert_allclose(d.cdf(t), 1 - 2 * np.exp(-t) + np.exp(-2 * t), atol=1e-14)
    assert d.cdf(1.0) == pytest.approx(0.3996, abs=5e-5)
    assert d.mean() == pytest.approx(1.5)


def test_hypoexponential_coefficients_sum_to_one():
    c = hypoexponential_coefficients([3.0, 1.0, 0.5, 2.2])
    assert c.sum() == pytest.approx(1.0)


@given(st.lists(st.floats(0.3, 5.0), min_size=2, max_size=4, unique=True))
def test_hypoexponential_matches_phase_type(rates):
    rates = sorted(rates)
    if not all(b / a > 1.05 for a, b in zip(rates, rates[1:])):
        return
    d = hypoexponential(rates, STEP, HORIZON)
    t = np.array([0.1, 0.7, 1.5, 3.0, 8.0])
    np.testing.assert_allclose(d.sf(t), phase_type_sf(rates, t), atol=1e-9)


def test_rates_distinct():
    assert rates_distinct([1.0, 2.0])
    assert not rates_distinct([1.0, 1.0 + 1e-12, 2.0])


# ---------------------------------------------------------------------------
# M/D/1


def test_md1_queue_length_distribution():
    rho = 0.6
    q = md1_queue_length_cdf(rho, 400)
    assert q[0] == pytest.approx(1 - rho)
    assert q[-1] == pytest.approx(1.0, abs=1e-14)
    pi = np.diff(np.concatenate(([0.0], q)))
    # P-K mean number in system for deterministic service
    mean_n = float(np.dot(np.arange(pi.size), pi))
    assert mean_n == pytest.approx(rho + rho**2 / (2 * (1 - rho)), rel=1e-10)


@pytest.mark.parametrize("lam,mu", [(1.0, 3.0), (2.0, 3.0), (0.9, 1.0), (2.7, 3.0)])
def test_md1_waiting_matches_high_precision(lam, mu):
    t = np.array([0.0, 0.1, 1 / mu, 0.77, 2.5, 7.3, 15.0, 30.0])
    ours = md1_waiting_cdf(t, lam, mu, max_terms=2000)
    ref = [md1_waiting_cdf_mp(x, lam, mu) for x in t]
    np.testing.assert_allclose(ours, ref, atol=1e-11)


def test_md1_classical_float_agrees_at_small_t():
    t = np.linspace(0, 2, 17)
    ours = md1_waiting_cdf(t, 1.0, 3.0)
    ref = [md1_waiting_cdf_classical(x, 1.0, 3.0) for x in t]
    np.testing.assert_allclose(ours, ref, atol=1e-12)


def test_md1_waiting_atom_at_zero():
    assert md1_waiting_cdf(0.0, 1.0, 3.0)[0] == pytest.approx(2 / 3)
    assert md1_waiting_cdf(-0.1, 1.0, 3.0)[0] == 0.0


def test_md1_no_contention_is_a_step():
    d = md1_sojourn(0.0, 3.0, STEP, HORIZON, 1e-4, 200)
    assert d.cdf(1 / 3 - 1e-9) == 0.0
    assert d.cdf(1 / 3) == 1.0
    assert d.mean() == pytest.approx(1 / 3, abs=STEP)


def test_md1_mean_sojourn_example():
    assert md1_mean_sojourn(1.0, 3.0) == pytest.approx(1 / 3 + (1 / 9) / (2 * (2 / 3)))
    assert md1_mean_sojourn(1.0, 3.0) == pytest.approx(0.4167, abs=1e-4)
    d = md1_sojourn(1.0, 3.0, STEP, HORIZON, 1e-4, 200)
    assert d.kind is DistKind.GRIDDED
    assert d.mean() == pytest.approx(0.41667, rel=0.01)


@given(st.floats(0.05, 0.9), st.floats(0.5, 4.0))
def test_md1_gridded_mean_within_one_percent(rho, mu):
    # mean waiting time reaches ~8 at rho 0.9, mu 0.5, so allow a long tail
    d = md1_sojourn(rho * mu, mu, STEP, 200.0, 1e-4, 2000)
    assert d.mean() == pytest.approx(md1_mean_sojourn(rho * mu, mu), rel=0.01)


def test_md1_cap_too_small_raises():
    with pytest.raises(NumericalError):
        md1_waiting_cdf(np.array([40.0]), 2.97, 3.0, max_terms=20)


# ---------------------------------------------------------------------------
# grid convolution


@given(st.lists(st.floats(0.4, 4.0), min_size=2, max_size=4))
def test_convolution_matches_closed_form(rates):
    rates = sorted(rates)
    if not all(b / a > 1.05 for a, b in zip(rates, rates[1:])):
        return
    step = 0.005  # 1e-3 x omega for omega = 5
    members = [exponential(r, step, 50.0) for r in rates]
    grid = convolve(members, step, 50.0, 1e-4)
    closed = hypoexponential(rates, step, 50.0)
    t = grid.times()
    assert np.max(np.abs(grid.cdf(t) - closed.cdf(t))) <= 1e-3


def test_repeated_rates_match_erlang():
    members = [exponential(1.5, STEP, HORIZON)] * 3
    grid = convolve(members, STEP, HORIZON, 1e-4)
    t = np.linspace(0, 10, 101)
    np.testing.assert_allclose(grid.cdf(t), stats.gamma(3, scale=1 / 1.5).cdf(t), atol=2e-4)


def test_convolution_grid_properties():
    members = [exponential(2.0, STEP, HORIZON), md1_sojourn(2.0, 3.0, STEP, HORIZON, 1e-4, 200)]
    d = convolve(members, STEP, HORIZON, 1e-4)
    f = d.grid_cdf
    assert f[0] == 0.0
    assert np.all(np.diff(f) >= 0)
    assert np.all((f >= 0) & (f <= 1 + 1e-9))
    assert f[-1] >= 1 - 1e-4


def test_convolution_short_horizon_errors():
    members = [exponential(0.2, 0.01, 8.0)] * 2
    with pytest.raises(NumericalError):
        convolve(members, 0.01, 8.0, 1e-4)


def test_inverse_cdf_sampling_self_consistent():
    from bhroute.simulator import ks_distance

    d = hypoexponential([2.0, 1.0, 0.7], STEP, HORIZON)
    samples = d.sample(np.random.default_rng(0), 100_000)
    assert ks_distance(samples, d) <= 0.01
