from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rvp_landau.background import juettner_profile
from rvp_landau.errors import (
    DivergenceError,
    FormatError,
    ParameterError,
    ProfileError,
    StepSizeError,
    TruncationWarning,
)
from rvp_landau.gevrey import GevreyWeight
from rvp_landau.linear import InteractionKernel, TorusSpec, gravity
from rvp_landau.simulator import (
    DiagnosticTransform,
    Perturbation,
    PhaseSpaceField,
    ProfileSpec,
    SimConfig,
    VelocityGrid,
    bootstrap_monitor,
    content_hash,
    density_modes,
    echo_experiment,
    force_modes,
    initialize,
    read_checkpoint,
    rhs,
    run,
    step,
    weight_name,
    write_checkpoint,
)

# coarse grids leave part of the background inside the mask ring
pytestmark = pytest.mark.filterwarnings("ignore::rvp_landau.errors.TruncationWarning")

SMALL = dict(K=2, n_v1=32, n_w=16, t_max=2.0, dt=0.05, out_dt=0.1, diag_every=0.5)


def small(**kw):
    return SimConfig(**{**SMALL, **kw})


def test_grid_layout():
    g = VelocityGrid(32, 16)
    assert g.r_mask == pytest.approx(1 - 2 / 16)
    assert np.all(g.speed2 < g.r_mask ** 2)
    assert g.to_rect(np.ones(g.n_active)).sum() == g.n_active
    with pytest.raises(ParameterError):
        VelocityGrid(4, 4)


def test_grid_quadrature():
    # 4 pi int_0^1 r^2 (1 - r^2)^8 dr = 2 pi B(3/2, 9)
    exact = 2 * math.pi * math.gamma(1.5) * math.gamma(9) / math.gamma(10.5)
    errs = []
    for n in (32, 64):
        g = VelocityGrid(2 * n, n)
        errs.append(abs(g.integrate((1 - g.speed2) ** 8) / exact - 1))
    assert errs[1] < 1e-6
    assert errs[0] / errs[1] > 12.0


def test_derivatives_exact_on_quartics():
    g = VelocityGrid(32, 16)
    f = g.v1 ** 4 - 2 * g.v1 ** 3 + g.w ** 2
    assert np.max(np.abs(g.d_v1 @ f - (4 * g.v1 ** 3 - 6 * g.v1 ** 2))) < 1e-9
    h = g.w ** 4 - 3 * g.w ** 2 + g.v1
    assert np.max(np.abs(g.d_w @ h - (4 * g.w ** 3 - 6 * g.w))) < 1e-9


def test_derivative_fourth_order():
    errs = []
    for n in (32, 64):
        g = VelocityGrid(2 * n, n)
        f = np.sin(3 * g.v1) * np.cos(2 * g.w)
        errs.append(np.max(np.abs(g.d_v1 @ f - 3 * np.cos(3 * g.v1) * np.cos(2 * g.w))))
    assert errs[0] / errs[1] > 12.0


def test_config_validation():
    with pytest.raises(ParameterError):
        SimConfig(sigma=4.0)
    with pytest.raises(ParameterError):
        SimConfig(beta=3.0)
    with pytest.raises(ParameterError):
        SimConfig(kappa_a=1.0)
    with pytest.raises(ParameterError):
        SimConfig(K=0)
    assert SimConfig().describe()["L"] == 0.7


def test_weight_name():
    assert weight_name(GevreyWeight(0.1, 0.0, 0.5)) == "l0.1_s0_n0.5"


def test_profile_validation():
    g = VelocityGrid(32, 16)
    with pytest.raises(ProfileError):
        ProfileSpec(q=4).validate(g)
    with pytest.raises(ProfileError):
        ProfileSpec(radius=1.5).validate(g)
    with pytest.raises(ProfileError):
        ProfileSpec(func=lambda v1, w: np.ones_like(v1)).validate(g)
    with pytest.raises(ProfileError):
        ProfileSpec(func=lambda v1, w: np.clip(1 - v1 ** 2 - w ** 2, 0, None)).validate(g)
    ProfileSpec(func=lambda v1, w: np.clip(1 - v1 ** 2 - w ** 2, 0, None) ** 6).validate(g)


def test_initialize_symmetry_and_density():
    cfg = small()
    fld = initialize(cfg, [Perturbation(1, 0.5 + 0.5j)])
    assert fld.conjugate_defect() == 0.0
    rho = density_modes(fld, cfg.torus, 0.0)
    b = ProfileSpec()(fld.grid.v1, fld.grid.w)
    assert rho[cfg.K + 1] == pytest.approx(cfg.eps * (0.5 + 0.5j) * fld.grid.integrate(b))
    assert abs(rho[cfg.K]) == 0.0


def test_initialize_rejects():
    with pytest.raises(ParameterError):
        initialize(small(), [Perturbation(3)])
    with pytest.raises(ParameterError):
        initialize(small(), [Perturbation(0)])


def test_force_modes():
    tor = TorusSpec(0.5)
    rho = np.array([0.0, 0.0, 1.0 + 0j, 0.0, 0.0])
    rho[3] = 2.0
    F = force_modes(rho, InteractionKernel(), tor)
    assert F[2] == 0.0
    assert F[3] == pytest.approx(-2j * math.pi * 2 * 0.25 * 2.0)


def test_rhs_mass_and_symmetry():
    cfg = small()
    fld = initialize(cfg, [Perturbation(1, 1.0), Perturbation(2, 0.3j)])
    fld.values *= 1e3
    d = rhs(fld, 0.7, cfg)
    assert abs(fld.grid.integrate(d.mode(0))) < 1e-14 * np.max(np.abs(d.values))
    assert d.conjugate_defect() < 1e-12 * np.max(np.abs(d.values))


def test_zero_field_is_stationary():
    cfg = small()
    fld = initialize(cfg, [Perturbation(1, 0.0)])
    out = step(fld, 0.0, 0.05, cfg)
    assert np.all(out.values == 0)


def test_free_streaming_without_interaction():
    cfg = small(kernel=InteractionKernel(amplitude=0.0), t_max=1.0)
    series = run(cfg, [Perturbation(1, 1.0)], diagnostics=False)
    g = VelocityGrid(32, 16)
    b = cfg.eps * ProfileSpec()(g.v1, g.w)
    t = series.times[-1]
    expect = np.sum(b * np.exp(-2j * math.pi * g.v1 * t / cfg.torus.L) * g.weights)
    assert series.rho_mode(1)[-1] == pytest.approx(expect, rel=1e-12, abs=1e-18)


def test_step_size_error():
    cfg = small(c_cfl=0.5)
    fld = initialize(cfg, [Perturbation(1, 1.0)])
    with pytest.raises(StepSizeError) as info:
        step(fld, 0.0, 1.0, cfg)
    assert info.value.bound < 1.0


def test_mass_conserved_nonlinear_run():
    cfg = small(eps=0.05)
    series = run(cfg, [Perturbation(1, 1.0), Perturbation(2, 0.5)])
    assert np.max(series.mass_resid) < 1e-10 * series.initial_norm
    assert series.steps >= 40


def test_divergence_reported():
    cfg = small(kernel=gravity(), torus=TorusSpec(1.5), linearized=True, t_max=30.0)
    with pytest.raises(DivergenceError) as info:
        run(cfg, [Perturbation(1, 1.0)], diagnostics=False)
    assert 0 < info.value.time < 30 and info.value.exit_code == 5


def test_truncation_warning_on_unmollified_background():
    cfg = small(bg=juettner_profile(0.5), t_max=0.1)
    with pytest.warns(TruncationWarning):
        run(cfg, [Perturbation(1, 1.0)], diagnostics=False)


def test_diagnostic_transform_roundtrip():
    g = VelocityGrid(64, 32)
    tr = DiagnosticTransform(g, h_diag=16.0, n_eta=64)
    f = np.exp(-20 * g.speed2)
    spec = tr.forward(f[None, :])
    # Plancherel for the separable transform
    lhs = float(np.sum(np.abs(f) ** 2 * g.weights))
    assert tr.eta_norm_sq(spec) == pytest.approx(lhs, rel=1e-3)


def test_bootstrap_zero_field():
    cfg = small()
    fld = PhaseSpaceField(VelocityGrid(32, 16), 2, np.zeros((5, VelocityGrid(32, 16).n_active),
                                                           dtype=complex))
    bv = bootstrap_monitor(fld, 0.0, cfg)
    assert bv.b1 == 0 and bv.b2 == 0 and all(v == 0 for v in bv.ratios.values())


def test_bootstrap_small_support_ratio():
    cfg = small(n_v1=64, n_w=32, h_diag=16.0, n_eta=48)
    fld = initialize(cfg, [Perturbation(1, 1.0, ProfileSpec(radius=0.5))])
    bv = bootstrap_monitor(fld, 0.0, cfg)
    assert bv.b1 > 0 and bv.b2 > 0
    assert bv.ratios["m0"] <= 0.5


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 10.0), st.complex_numbers(max_magnitude=2.0))
def test_density_phase_undoes_streaming(t, amp):
    cfg = small()
    g = VelocityGrid(32, 16)
    from rvp_landau.simulator import perturbation_values

    vals = perturbation_values(g, 2, [Perturbation(1, amp)], 1.0, t, cfg.torus.L)
    rho = density_modes(PhaseSpaceField(g, 2, vals, t), cfg.torus, t)
    b = ProfileSpec()(g.v1, g.w)
    assert abs(rho[3] - amp * g.integrate(b)) < 1e-12 * (1 + abs(amp))


def test_checkpoint_roundtrip(tmp_path):
    cfg = small()
    fld = initialize(cfg, [Perturbation(1, 1.0 + 2j)])
    fld.t = 1.25
    path = tmp_path / "c.bin"
    write_checkpoint(path, fld, 0.05)
    raw = path.read_bytes()
    assert raw[:8] == b"RVPSIM01" and len(raw) == 64 + 16 * 5 * 32 * 16
    back, dt = read_checkpoint(path)
    assert dt == 0.05 and back.t == 1.25 and back.K == 2
    assert np.array_equal(back.values, fld.values)
    path.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(FormatError):
        read_checkpoint(path)


def test_content_hash_deterministic():
    a = content_hash({"b": 1, "a": [1, 2]})
    assert a == content_hash({"a": [1, 2], "b": 1}) and len(a) == 64


def test_echo_rejects_modes():
    with pytest.raises(ParameterError):
        echo_experiment(small(), k1=2, k2=1)
    with pytest.raises(ParameterError):
        echo_experiment(small(), tau_impulse=0.0)


def test_echo_below_noise_floor():
    cfg = small(eps=1e-9, t_max=4.0)
    rep, _, _ = echo_experiment(cfg, 1, 2, tau_impulse=1.0)
    assert rep.no_echo


def test_linearized_matches_small_eps():
    # the nonlinear correction of mode 1 scales with eps
    base = small(t_max=1.0, eps=1e-4)
    a = run(base, [Perturbation(1, 1.0)], diagnostics=False).rho_mode(1)
    b = run(replace(base, linearized=True), [Perturbation(1, 1.0)], diagnostics=False).rho_mode(1)
    assert np.max(np.abs(a - b)) < 1e-3 * np.max(np.abs(b))
