from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rvp_landau.errors import CoverageError, FormatError, GevreyOverflowError, ParameterError
from rvp_landau.gevrey import (
    GevreyWeight,
    LambdaSchedule,
    SpectralGrid,
    bracket,
    check_bracket_lemma,
    check_exp_tradeoff,
    da_constant,
    dyadic_levels,
    f_norm,
    gevrey_norm,
    lambda_at,
    log_multiplier,
    lp_decompose,
    lp_norm_sq,
    lp_partition,
    multiplier,
)

pos = st.floats(0.0, 1e3, allow_nan=False)


def test_bracket_values():
    assert bracket(0.0, 0.0) == 1.0
    assert bracket(3.0, -1.0) == pytest.approx(math.sqrt(17.0))
    assert bracket(np.array([3.0, 4.0]), np.zeros(2), axis=0) == pytest.approx(math.sqrt(26.0))


def test_weight_validation():
    with pytest.raises(ParameterError):
        GevreyWeight(1.0, 0.0, 0.0)
    with pytest.raises(ParameterError):
        GevreyWeight(1.0, 0.0, 1.5)
    with pytest.raises(ParameterError):
        GevreyWeight(-0.1, 0.0, 0.5)


def test_multiplier_closed_form():
    w = GevreyWeight(0.3, 2.0, 0.5)
    b = math.sqrt(1 + 25.0)
    assert multiplier(w, 2.0, 3.0) == pytest.approx(b ** 2 * math.exp(0.3 * b ** 0.5), rel=1e-14)


def test_multiplier_overflow_reports_location():
    w = GevreyWeight(10.0, 0.0, 1.0)
    with pytest.raises(GevreyOverflowError) as info:
        multiplier(w, np.array([1.0, 500.0]), np.array([0.0, 0.0]))
    assert info.value.k == 500.0 and info.value.exit_code == 2


@settings(max_examples=200, deadline=None)
@given(pos, pos, pos, pos)
def test_multiplier_submultiplicative(k1, e1, k2, e2):
    # <a+b> <= <a><b> gives A(a+b) <= A(a) A(b) for nu <= 1 up to the sigma factor
    w = GevreyWeight(0.7, 0.0, 0.5)
    lhs = log_multiplier(w, k1 + k2, e1 + e2)
    rhs = log_multiplier(w, k1, e1) + log_multiplier(w, k2, e2)
    assert lhs <= rhs + 1e-9 * max(1.0, abs(rhs))


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 50), st.floats(-50, 50))
def test_multiplier_monotone_in_lambda(k, eta):
    lo = log_multiplier(GevreyWeight(0.1, 1.0, 0.5), k, eta)
    hi = log_multiplier(GevreyWeight(0.2, 1.0, 0.5), k, eta)
    assert hi >= lo


def test_spectral_grid_validation():
    with pytest.raises(FormatError):
        SpectralGrid(np.array([0]), np.array([0.0, 1.0, 3.0]), np.zeros((1, 3)))
    with pytest.raises(FormatError):
        SpectralGrid(np.array([0]), np.array([0.0]), np.zeros((1, 1)))
    g = SpectralGrid(np.array([0]), np.array([0.0]), np.ones((1, 1)), deta=0.5)
    assert gevrey_norm(g) == pytest.approx(math.sqrt(0.5))


def test_gevrey_norm_gaussian():
    # trapezoid of exp(-eta^2) on a wide grid reproduces sqrt(pi)
    eta = np.linspace(-12, 12, 2401)
    g = SpectralGrid(np.array([0]), eta, np.exp(-eta ** 2 / 2)[None, :])
    assert gevrey_norm(g) ** 2 == pytest.approx(math.sqrt(math.pi), rel=1e-12)
    w = GevreyWeight(0.0, 0.0, 1.0)
    assert gevrey_norm(g, w) == pytest.approx(gevrey_norm(g), rel=1e-14)


def test_gevrey_norm_overflow():
    eta = np.linspace(0, 1e4, 11)
    g = SpectralGrid(np.array([1]), eta, np.ones((1, eta.size)))
    with pytest.raises(GevreyOverflowError):
        gevrey_norm(g, GevreyWeight(1.0, 0.0, 1.0))


def test_f_norm_single_mode():
    w = GevreyWeight(0.2, 1.0, 0.5)
    val = f_norm([1], [2.0], t=3.0, w=w, L=0.5)
    assert val == pytest.approx(2.0 * multiplier(w, 1.0, 6.0), rel=1e-13)


def test_lambda_schedule_examples():
    s = LambdaSchedule(0.2, 0.1, 0.5, 1.0)
    assert s.alpha0 == pytest.approx(0.15)
    assert s.a == pytest.approx(0.25)
    assert s.upper == pytest.approx(0.1875)
    assert lambda_at(s, 0.0) == pytest.approx(s.upper)
    assert lambda_at(s, 1.0) == pytest.approx(s.alpha0 + 0.025)
    # exact tail value at t=1e6 and convergence to alpha0
    assert lambda_at(s, 1e6) - s.alpha0 == pytest.approx(0.025 * 1e6 ** -0.25, rel=1e-12)
    assert lambda_at(s, 1e20) - s.alpha0 < 1e-6
    with pytest.raises(ParameterError):
        lambda_at(s, -1.0)


@pytest.mark.parametrize("args", [(0.1, 0.2, 0.5, 1.0), (0.2, 0.1, 0.5, 0.5), (0.2, 0.1, 0.3, 1.0)])
def test_lambda_schedule_rejects(args):
    with pytest.raises(ParameterError):
        LambdaSchedule(*args)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_lambda_nonincreasing(t1, t2):
    s = LambdaSchedule(0.3, 0.05, 0.6, 2.0)
    lo, hi = sorted((t1, t2))
    assert lambda_at(s, hi) <= lambda_at(s, lo) + 1e-15
    assert s.alpha0 - 1e-15 <= lambda_at(s, hi) <= s.upper + 1e-15


def test_dyadic_levels():
    assert dyadic_levels(8) == [0, 1, 2, 4, 8]
    with pytest.raises(ParameterError):
        dyadic_levels(6)
    with pytest.raises(ParameterError):
        lp_partition(1.0, 1.0, 3)


@settings(max_examples=300, deadline=None)
@given(st.integers(-60, 60), st.floats(-60, 60))
def test_lp_partition_sums_to_one(k, eta):
    total = sum(lp_partition(float(k), eta, N) for N in dyadic_levels(128))
    assert abs(total - 1.0) <= 1e-12


def test_lp_support():
    # phi_N vanishes outside N/2 <= r <= 3N/2
    assert lp_partition(0.0, 10.0, 2) == 0.0
    assert lp_partition(0.0, 0.2, 4) == 0.0
    assert lp_partition(0.0, 0.1, 0) == 1.0


def test_lp_decompose_coverage():
    eta = np.linspace(-50, 50, 101)
    g = SpectralGrid(np.array([0]), eta, np.ones((1, eta.size)))
    with pytest.raises(CoverageError):
        lp_decompose(g, 16)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_lp_almost_orthogonality(seed):
    rng = np.random.default_rng(seed)
    k = np.arange(-3, 4)
    eta = np.linspace(-20, 20, 81)
    vals = rng.normal(size=(k.size, eta.size)) + 1j * rng.normal(size=(k.size, eta.size))
    g = SpectralGrid(k, eta, vals)
    blocks = lp_decompose(g, 32)
    parts = sum(lp_norm_sq(b) for b in blocks.values())
    total = lp_norm_sq(g)
    assert parts <= total * (1 + 1e-12)
    assert total <= 2 * parts * (1 + 1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(0.05, 1.0), st.floats(0, 0.95), st.floats(1e-2, 10),
       st.floats(1e-2, 10))
def test_exp_tradeoff_property(x, alpha, frac, C, delta):
    assert check_exp_tradeoff(x, alpha, alpha * frac, C, delta)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0.01, 0.99), st.floats(1.5, 10))
def test_bracket_lemma_property(x, y, s, K):
    res = check_bracket_lemma(x, y, s, K)
    assert all(bool(np.all(v)) for v in res.values()), res


def test_bracket_lemma_close_pairs():
    rng = np.random.default_rng(3)
    x = 10 ** rng.uniform(-2, 3, 2000)
    y = x * (1 + rng.uniform(-0.1, 0.1, x.size))
    res = check_bracket_lemma(x, y, rng.uniform(0.01, 0.99, x.size), 10.0 + np.zeros(x.size))
    assert np.all(res["iii"])


def test_da_constant_bounded():
    # |d_eta A| / A <= sigma/<k,eta> + lambda nu <k,eta>^{nu-1}, so the scaled value <= sigma + lambda nu
    w = GevreyWeight(0.5, 2.0, 0.5)
    eta = np.linspace(-100, 100, 4001)
    c = da_constant(w, np.ones_like(eta), eta)
    assert 0.0 < c <= w.sigma + w.lam * w.nu + 1e-6
