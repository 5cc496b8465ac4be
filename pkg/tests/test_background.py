from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rvp_landau.background import (
    alpha_hat,
    alpha_hat_bound,
    bessel_j,
    juettner_profile,
    load_tabulated_csv,
    momentum_normalisation,
    mollify_boundary,
    p_of_v,
    tabulated_profile,
    v_of_p,
    VelocityPoint,
    zero_profile,
)
from rvp_landau.errors import FormatError, ParameterError

# radial quadrature oracle: 4 pi int_0^1 r^2 sqrt(1-r^2) sin(2 pi eta r)/(2 pi eta r) dr
ALPHA_HAT_ORACLE = {
    0.5: 0.9708678652630182,
    1.0: -0.14394018375798448,
    2.0: -0.022762716955298076,
    5.0: -0.0021316679743190025,
    10.0: -0.00036642782180700364,
}


def test_bessel_values_at_origin():
    assert bessel_j(0, 0.0) == 1.0
    assert bessel_j(1, 0.0) == 0.0


def test_bessel_first_root():
    assert abs(bessel_j(0, 2.404825557695773)) < 1e-9


def test_bessel_rejects_order():
    with pytest.raises(ParameterError):
        bessel_j(2, 1.0)


def test_bessel_against_scipy():
    from scipy import special

    x = np.linspace(0.0, 400.0, 20001)
    assert np.max(np.abs(bessel_j(0, x) - special.j0(x))) < 1e-10
    assert np.max(np.abs(bessel_j(1, x) - special.j1(x))) < 1e-10


def test_alpha_hat_origin():
    assert abs(alpha_hat(0.0) - math.pi ** 2 / 4) < 1e-12


@pytest.mark.parametrize("eta", sorted(ALPHA_HAT_ORACLE))
def test_alpha_hat_oracle(eta):
    ref = ALPHA_HAT_ORACLE[eta]
    assert abs(alpha_hat(eta) - ref) <= 1e-6 * abs(ref)


def test_alpha_hat_branch_continuity():
    lo, hi = alpha_hat(1e-3 * (1 - 1e-12)), alpha_hat(1e-3 * (1 + 1e-12))
    assert abs(lo - hi) < 1e-9


def test_alpha_hat_decay_bound():
    eta = np.linspace(0.0, 50.0, 2048)
    assert np.all(np.abs(alpha_hat(eta)) * (1 + eta) ** 2.5 <= 4.0)
    assert np.allclose(alpha_hat_bound(eta), 4.0 / (1 + eta) ** 2.5)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_velocity_round_trip(comp):
    v = np.array(comp)
    n = np.linalg.norm(v)
    if n >= 1 - 1e-6:
        v = v / max(n, 1e-300) * (1 - 1e-6) * 0.999
    assert np.max(np.abs(v_of_p(p_of_v(v)) - v)) < 1e-13


def test_velocity_point():
    vp = VelocityPoint(np.array([0.6, 0.0, 0.0]))
    assert vp.alpha == pytest.approx(0.8)
    assert np.allclose(vp.p, [0.75, 0.0, 0.0])
    with pytest.raises(ParameterError):
        VelocityPoint(np.array([1.0, 0.0, 0.0]))


def test_juettner_normalisation():
    assert abs(momentum_normalisation(juettner_profile(0.1)) - 1.0) < 1e-8


def test_juettner_rejects_theta():
    with pytest.raises(ParameterError):
        juettner_profile(0.0)


@pytest.mark.parametrize("theta", [0.05, 0.2, 1.0, 3.0])
def test_juettner_monotone(theta):
    bg = juettner_profile(theta)
    r = np.linspace(0.0, 0.999, 500)
    g = bg.g0(r)
    assert np.all(np.diff(g) < 0) or np.all(np.diff(g[g > 1e-300]) < 0)
    assert np.all(bg.gtilde(r[1:]) <= 0)
    assert bg.decreasing


def test_juettner_edge_smallness():
    bg = juettner_profile(0.5)
    assert bg.g0(0.999) < 1e-12 * bg.g0(0.0)
    assert abs(bg.g0(1.0)) <= 1e-12 and abs(bg.gtilde(1.0)) <= 1e-12


def test_gtilde_consistent_with_g0():
    bg = juettner_profile(0.3)
    w = np.linspace(0.01, 0.99, 200)
    h = 1e-6
    dg = (bg.g0(w + h) - bg.g0(w - h)) / (2 * h)
    scale = np.max(np.abs(dg))
    assert np.max(np.abs(dg - bg.gtilde(w) * (1 - w * w))) < 1e-6 * scale


def test_mollify_examples():
    bg = juettner_profile(0.2)
    m = mollify_boundary(bg, 0.05)
    assert m.g0(0.5) == bg.g0(0.5)
    assert m.g0(0.97) == 0.0
    assert m.decreasing and m.mollification_width == 0.05
    with pytest.raises(ParameterError):
        mollify_boundary(bg, 0.2)


def test_mollified_gtilde_consistent():
    m = mollify_boundary(juettner_profile(0.5), 0.05)
    w = np.linspace(0.02, 0.98, 300)
    h = 1e-7
    dg = (m.g0(w + h) - m.g0(w - h)) / (2 * h)
    assert np.max(np.abs(dg - m.gtilde(w) * (1 - w * w))) < 1e-5 * np.max(np.abs(dg))


def test_tabulated_profile_roundtrip(tmp_path):
    bg = juettner_profile(0.4)
    om = np.linspace(0.0, 1.0, 64)
    path = tmp_path / "bg.csv"
    rows = "\n".join(f"{float(a)!r},{float(b)!r}" for a, b in zip(om, bg.gtilde(om)))
    path.write_text("omega,gtilde\n" + rows + "\n", encoding="utf-8")
    tab = load_tabulated_csv(path)
    assert tab.kind == "tabulated"
    x = np.linspace(0.05, 0.95, 50)
    assert np.max(np.abs(tab.gtilde(x) - bg.gtilde(x))) < 2e-2 * np.max(np.abs(bg.gtilde(x)))
    assert tab.g0(1.0) == pytest.approx(0.0, abs=1e-12)


def test_tabulated_csv_format_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("w,g\n0,0\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_tabulated_csv(path)
    om = np.linspace(0, 1, 10)
    path.write_text("omega,gtilde\n" + "\n".join(f"{a},{-a}" for a in om) + "\n")
    with pytest.raises(FormatError):
        load_tabulated_csv(path)


def test_tabulated_needs_increasing_grid():
    with pytest.raises((FormatError, ParameterError)):
        tabulated_profile(np.linspace(1, 0, 40), np.zeros(40))


def test_zero_profile():
    z = zero_profile()
    assert np.all(z.gtilde(np.linspace(0, 1, 10)) == 0)
