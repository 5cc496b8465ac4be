"""Reduced nonlinear spectral simulator in mixed (x-Fourier, v-grid) form.

Spatial modes are collinear, k in {-K..K} along e1, and the velocity
dependence is axisymmetric, (v1, w) with w = |v_perp|.  The unknown is
Phi^x(t, k, v), the Fourier coefficient in the free-streaming variable
x = q - v t, so transport is exact and only the force terms are integrated.

For mode k the evolution reads

    d/dt Phi(k) = - sum_{l != 0} F(l) e^{2 pi i (l/L) v1 t}
                  [ delta_{k l} (alpha G0)_1 + D_{k-l}(alpha Phi) ],
    D_m u = (1 - v1^2)(d_{v1} u - 2 pi i (m/L) t u) - v1 w d_w u - 4 v1 u.

The continuous k = 0 tendency has zero velocity integral (it is a
divergence).  Its discrete O(h^4) integral is projected onto a fixed smooth
shape, so total mass is conserved to round-off.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .background import BackgroundProfile, bessel_j, juettner_profile, mollify_boundary
from .errors import (DivergenceError, FormatError, ParameterError, ProfileError, StepSizeError,
                     TruncationWarning)
from .gevrey import GevreyWeight, LambdaSchedule, bracket, lambda_at, log_multiplier
from .linear import InteractionKernel, TorusSpec, coulomb

CHECKPOINT_MAGIC = b"RVPSIM01"
CHECKPOINT_HEADER = 64


# ---------------------------------------------------------------------------
# Velocity grid and difference operators
# ---------------------------------------------------------------------------

class VelocityGrid:
    """Cell-centred (v1, w) grid on [-1, 1] x [0, 1] with a disc mask.

    Points with sqrt(v1^2 + w^2) < 1 - edge_cells * max(h1, hw) are active;
    all others hold zero.  Quadrature weights use the axisymmetric measure
    2 pi w dw dv1: midpoint rule in v1 and in w, plus a two-cell end
    correction at the axis w = 0 that restores 4th order for even fields.
    """

    def __init__(self, n_v1: int = 128, n_w: int = 64, edge_cells: int = 2):
        if n_v1 < 8 or n_w < 4:
            raise ParameterError("velocity grid too small")
        self.n_v1, self.n_w, self.edge_cells = int(n_v1), int(n_w), int(edge_cells)
        self.h1 = 2.0 / n_v1
        self.hw = 1.0 / n_w
        self.v1_axis = -1.0 + (np.arange(n_v1) + 0.5) * self.h1
        self.w_axis = (np.arange(n_w) + 0.5) * self.hw
        V1, Wp = np.meshgrid(self.v1_axis, self.w_axis, indexing="ij")
        self.r_mask = 1.0 - edge_cells * max(self.h1, self.hw)
        self.mask2d = np.sqrt(V1 ** 2 + Wp ** 2) < self.r_mask
        self.index = -np.ones((n_v1, n_w), dtype=int)
        self.index[self.mask2d] = np.arange(int(self.mask2d.sum()))
        self.ii, self.jj = np.nonzero(self.mask2d)
        self.v1 = self.v1_axis[self.ii]
        self.w = self.w_axis[self.jj]
        self.speed2 = self.v1 ** 2 + self.w ** 2
        self.alpha = np.sqrt(1.0 - self.speed2)
        # midpoint rule in w with an end correction at the axis: for even f the
        # O(h^2) term -(h^2/24) f(0) is removed using f(0) ~ (9 f_0 - f_1)/8
        self.w_quad = self.w_axis * self.hw
        self.w_quad[0] -= self.hw ** 2 / 24.0 * 9.0 / 8.0
        self.w_quad[1] += self.hw ** 2 / 24.0 / 8.0
        self.weights = 2.0 * math.pi * self.h1 * self.w_quad[self.jj]
        self.n_active = self.v1.size
        self.h_min = min(self.h1, self.hw)
        self._build_operators()

    # -- derivative matrices -------------------------------------------------
    def _line_derivative(self, axis: int) -> sparse.csr_matrix:
        """4th-order d/dv1 (axis 0) or d/dw (axis 1) on active points.

        Central where the 5-point stencil stays active, otherwise the most
        centred window of up to 5 available nodes (one-sided at the mask
        edge).  In w the axis w = 0 is handled by even reflection, so ghost
        cell -1-j carries the value of cell j.
        """
        rows, cols, vals = [], [], []
        h = self.h1 if axis == 0 else self.hw
        n_lines = self.n_w if axis == 0 else self.n_v1
        for line in range(n_lines):
            idx = self.index[:, line] if axis == 0 else self.index[line, :]
            act = np.flatnonzero(idx >= 0)
            if act.size == 0:
                continue
            hi = act[-1]
            lo = act[0] if axis == 0 else -1 - hi
            n = min(5, hi - lo + 1)
            for pos in act:
                base = min(max(pos - n // 2, lo), hi - n + 1)
                offsets = np.arange(base, base + n)
                coeffs = _fd_weights(offsets - pos)
                for c, s in zip(coeffs, offsets):
                    if c == 0.0:
                        continue
                    q = s if s >= 0 else -1 - s
                    rows.append(idx[pos])
                    cols.append(idx[q])
                    vals.append(c / h)
        m = self.n_active
        return sparse.csr_matrix((vals, (rows, cols)), shape=(m, m)).tocsr()

    def _build_operators(self):
        self.d_v1 = self._line_derivative(0)
        self.d_w = self._line_derivative(1)
        # fixed smooth shape used to project the O(h^4) mass defect out of the k = 0 tendency
        self.mass_shape = (1.0 - self.speed2 / self.r_mask ** 2) ** 6
        self.mass_shape_integral = float(self.mass_shape @ self.weights)

    # -- helpers -------------------------------------------------------------
    def to_rect(self, values: np.ndarray) -> np.ndarray:
        """Scatter active-point values (..., n_active) onto the full rectangle."""
        out = np.zeros(values.shape[:-1] + (self.n_v1, self.n_w), dtype=values.dtype)
        out[..., self.ii, self.jj] = values
        return out

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return values @ self.weights

    def describe(self) -> dict:
        return {"n_v1": self.n_v1, "n_w": self.n_w, "edge_cells": self.edge_cells,
                "r_mask": self.r_mask, "n_active": int(self.n_active)}


def _fd_weights(x: np.ndarray) -> np.ndarray:
    """First-derivative weights at 0 from nodes at integer offsets ``x``."""
    x = np.asarray(x, dtype=float)
    if x.size == 1:
        return np.zeros(1)
    V = np.vander(x, x.size, increasing=True).T
    rhs = np.zeros(x.size)
    rhs[1] = 1.0
    w = np.linalg.solve(V, rhs)
    w[np.abs(w) < 1e-13] = 0.0
    return w


# ---------------------------------------------------------------------------
# Configuration and fields
# ---------------------------------------------------------------------------

def weight_name(w: GevreyWeight) -> str:
    return f"l{w.lam:g}_s{w.sigma:g}_n{w.nu:g}"


@dataclass(frozen=True)
class SimConfig:
    torus: TorusSpec = field(default_factory=lambda: TorusSpec(0.7))
    bg: BackgroundProfile = field(default_factory=lambda: mollify_boundary(juettner_profile(0.2), 0.05))
    kernel: InteractionKernel = field(default_factory=coulomb)
    eps: float = 1e-3
    dt: float = 0.025
    t_max: float = 40.0
    schedule: LambdaSchedule = field(default_factory=lambda: LambdaSchedule(0.2, 0.1, 0.5, 1.0))
    diag: tuple[GevreyWeight, ...] = (GevreyWeight(0.1, 0.0, 0.5),)
    sigma: float = 5.0
    beta: float = 2.25
    kappa_a: float = 0.9
    K: int = 8
    n_v1: int = 128
    n_w: int = 64
    edge_cells: int = 2
    c_cfl: float = 0.5
    out_dt: float = 0.05
    diag_every: float = 1.0
    h_diag: float = 8.0
    n_eta: int = 16
    linearized: bool = False
    enforce_stability: bool = True

    def __post_init__(self):
        if self.sigma < 5:
            raise ParameterError("sigma must be >= 5")
        if not 2.0 < self.beta < self.sigma - 2.5:
            raise ParameterError("beta must lie in (2, sigma - 5/2)")
        if not 0.0 < self.kappa_a < 1.0:
            raise ParameterError("kappa_a must lie in (0, 1)")
        if self.K < 1:
            raise ParameterError("K must be >= 1")
        if not (self.dt > 0 and self.t_max > 0 and self.out_dt > 0):
            raise ParameterError("dt, t_max and out_dt must be positive")
        if self.eps < 0:
            raise ParameterError("eps must be nonnegative")

    def describe(self) -> dict:
        bg = self.bg
        return {
            "L": self.torus.L, "background": {"kind": bg.kind, "theta": bg.theta,
                                              "mollification_width": bg.mollification_width},
            "kernel": {"form": self.kernel.form, "sign": self.kernel.sign,
                       "amplitude": self.kernel.amplitude},
            "eps": self.eps, "dt": self.dt, "t_max": self.t_max,
            "schedule": asdict(self.schedule), "diag": [asdict(w) for w in self.diag],
            "sigma": self.sigma, "beta": self.beta, "kappa_a": self.kappa_a, "K": self.K,
            "n_v1": self.n_v1, "n_w": self.n_w, "edge_cells": self.edge_cells,
            "c_cfl": self.c_cfl, "out_dt": self.out_dt, "diag_every": self.diag_every,
            "h_diag": self.h_diag, "n_eta": self.n_eta, "linearized": self.linearized,
            "enforce_stability": self.enforce_stability,
        }


@dataclass(frozen=True)
class ProfileSpec:
    """Velocity profile P(v1/R, w/R) (1 - |v|^2/R^2)_+^q with P = sum c v1^a w^(2b)."""

    q: int = 6
    radius: float = 1.0
    coeffs: tuple[tuple[int, int, float], ...] = ((0, 0, 1.0),)
    func: Callable | None = None

    def __call__(self, v1, w):
        if self.func is not None:
            return np.asarray(self.func(v1, w), dtype=float)
        x, y = v1 / self.radius, w / self.radius
        poly = np.zeros_like(x)
        for a, b, c in self.coeffs:
            poly = poly + c * x ** a * y ** (2 * b)
        base = np.clip(1.0 - x * x - y * y, 0.0, None)
        return poly * base ** self.q

    def validate(self, grid: VelocityGrid):
        if self.func is None:
            if self.q < 5:
                raise ProfileError("profile exponent q must be >= 5")
            if not 0 < self.radius <= 1.0:
                raise ProfileError("profile radius must lie in (0, 1]")
            return
        # a band just inside |v| = 1 rejects profiles that vanish only to low order
        r = np.linspace(0.999, 1.0, 5)
        th = np.linspace(0.0, math.pi, 33)
        R, T = np.meshgrid(r, th)
        edge = np.abs(self(R * np.cos(T), R * np.sin(T)))
        inner = np.abs(self(grid.v1, grid.w))
        scale = max(float(np.max(inner)), 1e-300)
        if float(np.max(edge)) > 1e-6 * scale:
            raise ProfileError("profile does not vanish at the edge of the unit ball")


@dataclass(frozen=True)
class Perturbation:
    k: int
    amplitude: complex = 1.0
    profile: ProfileSpec = field(default_factory=ProfileSpec)


@dataclass
class PhaseSpaceField:
    """Phi^x(k, v) on active grid points; ``values`` has shape (2K+1, n_active)."""

    grid: VelocityGrid
    K: int
    values: np.ndarray
    t: float = 0.0

    def mode(self, k: int) -> np.ndarray:
        return self.values[k + self.K]

    def norm(self) -> float:
        return math.sqrt(float(np.sum(np.abs(self.values) ** 2 @ self.grid.weights)))

    def copy(self) -> "PhaseSpaceField":
        return PhaseSpaceField(self.grid, self.K, self.values.copy(), self.t)

    def conjugate_defect(self) -> float:
        v = self.values
        return float(np.max(np.abs(v - np.conj(v[::-1])))) if v.size else 0.0


def _mirror(half: np.ndarray) -> np.ndarray:
    """Full (2K+1) mode array from modes k = 0..K using Phi(-k) = conj(Phi(k))."""
    return np.concatenate([np.conj(half[:0:-1]), half])


def _symmetrize(values: np.ndarray) -> np.ndarray:
    return 0.5 * (values + np.conj(values[::-1]))


def make_grid(config: SimConfig) -> VelocityGrid:
    return _grid_cache(config.n_v1, config.n_w, config.edge_cells)


_GRIDS: dict = {}


def _grid_cache(n_v1, n_w, edge):
    key = (n_v1, n_w, edge)
    if key not in _GRIDS:
        _GRIDS[key] = VelocityGrid(n_v1, n_w, edge)
    return _GRIDS[key]


def perturbation_values(grid: VelocityGrid, K: int, perturbation: Sequence[Perturbation],
                        eps: float, t: float, L: float) -> np.ndarray:
    """Mode array of a real phase-space perturbation added at time ``t``.

    A spatial profile cos/sin(2 pi k q / L) b(v) imposed at time t appears in
    the free-streaming variable with the phase e^{2 pi i k v1 t / L}.
    """
    vals = np.zeros((2 * K + 1, grid.n_active), dtype=complex)
    for p in perturbation:
        if abs(p.k) > K:
            raise ParameterError(f"perturbation mode {p.k} exceeds K = {K}")
        p.profile.validate(grid)
        b = p.profile(grid.v1, grid.w)
        if p.k == 0:
            mass = float(grid.integrate(b))
            if abs(mass) > 1e-10 * max(float(grid.integrate(np.abs(b))), 1e-300):
                raise ParameterError("a k = 0 perturbation must have zero velocity integral")
            vals[K] += eps * np.real(p.amplitude) * b
            continue
        phase = np.exp(2j * math.pi * p.k * grid.v1 * t / L)
        vals[p.k + K] += eps * p.amplitude * b * phase
        vals[-p.k + K] += eps * np.conj(p.amplitude) * b * np.conj(phase)
    return vals


def initialize(config: SimConfig, perturbation: Sequence[Perturbation]) -> PhaseSpaceField:
    """Initial field from a list of (k, amplitude, profile) perturbations scaled by eps."""
    grid = make_grid(config)
    vals = perturbation_values(grid, config.K, perturbation, config.eps, 0.0, config.torus.L)
    return PhaseSpaceField(grid, config.K, _symmetrize(vals), 0.0)


# ---------------------------------------------------------------------------
# Density, force, right-hand side
# ---------------------------------------------------------------------------

def density_modes(field: PhaseSpaceField, torus: TorusSpec, t: float | None = None) -> np.ndarray:
    """rho(k) = int Phi^x(k, v) e^{-2 pi i k v1 t / L} dv for k = -K..K.

    At t = 0 this is 2 pi int int Phi^x w dw dv1; for t > 0 the phase undoes
    the free-streaming shift so that rho(t, k) = Phi(t, k, k t / L).
    """
    t = field.t if t is None else t
    K = field.K
    ks = np.arange(-K, K + 1)
    g = field.grid
    phase = np.exp(-2j * math.pi * np.outer(ks, g.v1) * t / torus.L)
    return np.sum(field.values * phase * g.weights[None, :], axis=1)


def force_modes(rho: np.ndarray, kernel: InteractionKernel, torus: TorusSpec) -> np.ndarray:
    """F(l) = -2 pi i (l/L) W(l) rho(l), with F(0) = 0 (k = -K..K ordering)."""
    K = (rho.size - 1) // 2
    ks = np.arange(-K, K + 1)
    out = np.zeros(rho.size, dtype=complex)
    nz = ks != 0
    out[nz] = -2j * math.pi * (ks[nz] / torus.L) * kernel.what(ks[nz], torus.L) * rho[nz]
    return out


class _Model:
    """Precomputed coefficient arrays for one configuration."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.grid = g = make_grid(config)
        self.K = config.K
        self.L = config.torus.L
        self.ks = np.arange(-self.K, self.K + 1)
        speed = np.sqrt(g.speed2)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.g1 = np.where(speed > 0, config.bg.gtilde(speed) * g.v1 / speed, 0.0)
        self.one_m_v1sq = 1.0 - g.v1 ** 2
        self.v1w = g.v1 * g.w
        # outermost band of active cells
        ring = np.sqrt(g.speed2) > g.r_mask - max(g.h1, g.hw)
        peak = float(np.max(np.abs(self.g1))) if self.g1.size else 0.0
        if peak > 0 and float(np.max(np.abs(self.g1[ring]))) > 1e-6 * peak:
            warnings.warn("background derivative is not negligible at the velocity mask; "
                          "consider mollify_boundary", TruncationWarning, stacklevel=3)
        self.trunc_last = 0.0

    def rhs(self, values: np.ndarray, t: float, want_truncation: bool = False):
        """Tendency for all modes; only k >= 0 is computed, k < 0 by conjugation."""
        cfg = self.config
        g = self.grid
        K, L = self.K, self.L
        # pw[l] = e^{2 pi i l v1 t / L} for l = 0..2K
        phase1 = np.exp(2j * math.pi * g.v1 * t / L)
        pw = np.empty((2 * K + 1, g.n_active), dtype=complex)
        pw[0] = 1.0
        for l in range(1, 2 * K + 1):
            pw[l] = pw[l - 1] * phase1
        rho_pos = np.sum(values[K:] * np.conj(pw[:K + 1]) * g.weights, axis=1)
        rho = np.concatenate([np.conj(rho_pos[:0:-1]), rho_pos])
        F = force_modes(rho, cfg.kernel, cfg.torus)
        half = np.zeros((K + 1, g.n_active), dtype=complex)
        half[1:] = -(F[K + 1:, None] * pw[1:K + 1]) * self.g1[None, :]
        if cfg.linearized:
            return _mirror(half), F, 0.0
        # D_m (alpha Phi_m) for m >= 0; negative m follow by conjugation
        u = values[K:] * g.alpha[None, :]
        d1 = (g.d_v1 @ u.T).T
        dw = (g.d_w @ u.T).T
        theta = 2.0 * math.pi * np.arange(K + 1) * t / L
        Du_pos = (self.one_m_v1sq[None, :] * (d1 - 1j * theta[:, None] * u)
                  - self.v1w[None, :] * dw - 4.0 * g.v1[None, :] * u)
        Du = np.concatenate([np.conj(Du_pos[:0:-1]), Du_pos])
        R = np.zeros((K + 1, g.n_active), dtype=complex)
        fs = {}
        for l in range(-K, K + 1):
            if l == 0 or F[l + K] == 0:
                continue
            f = F[l + K] * (pw[l] if l > 0 else np.conj(pw[-l]))
            fs[l] = f
            # target modes k = l + m with 0 <= k <= K and |m| <= K
            k_lo, k_hi = max(0, l - K), min(K, l + K)
            if k_lo > k_hi:
                continue
            R[k_lo:k_hi + 1] += f[None, :] * Du[k_lo - l + K:k_hi - l + K + 1]
        R[0] -= (R[0] @ g.weights) / g.mass_shape_integral * g.mass_shape
        half -= R
        trunc = 0.0
        if want_truncation:
            # tendency that would feed modes K < k <= 2K, dropped by the Galerkin truncation
            acc = 0.0
            for k in range(K + 1, 2 * K + 1):
                tk = np.zeros(g.n_active, dtype=complex)
                for l, f in fs.items():
                    m = k - l
                    if abs(m) <= K:
                        tk += f * Du[m + K]
                acc += float(np.abs(tk) ** 2 @ g.weights)
            trunc = math.sqrt(2.0 * acc)
        return _mirror(half), F, trunc

    def dt_stable(self, F: np.ndarray, t: float) -> float:
        fmax = float(np.max(np.abs(F))) if F.size else 0.0
        return self.config.c_cfl / (1.0 + fmax * (1.0 + t * 2.0 * math.pi * self.K / self.L)
                                    / self.grid.h_min)


def rhs(field: PhaseSpaceField, t: float, config: SimConfig) -> PhaseSpaceField:
    """Time derivative of the field as a PhaseSpaceField."""
    model = _Model(config)
    out, _, _ = model.rhs(field.values, t)
    return PhaseSpaceField(field.grid, field.K, out, t)


def _rk4(model: _Model, values: np.ndarray, t: float, dt: float, k1=None):
    if k1 is None:
        k1, F, _ = model.rhs(values, t)
    else:
        F = None
    k2, _, _ = model.rhs(values + 0.5 * dt * k1, t + 0.5 * dt)
    k3, _, _ = model.rhs(values + 0.5 * dt * k2, t + 0.5 * dt)
    k4, _, _ = model.rhs(values + dt * k3, t + dt)
    new = values + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return _symmetrize(new), F


def step(field: PhaseSpaceField, t: float, dt: float, config: SimConfig,
         model: _Model | None = None) -> PhaseSpaceField:
    """One classical 4-stage step; raises StepSizeError above the stability bound."""
    model = model or _Model(config)
    _, F, _ = model.rhs(field.values, t)
    bound = model.dt_stable(F, t)
    if config.enforce_stability and dt > bound * (1 + 1e-12):
        raise StepSizeError(f"dt = {dt:g} exceeds the stability bound {bound:g} at t = {t:g}",
                            bound=bound)
    new, _ = _rk4(model, field.values, t, dt)
    return PhaseSpaceField(field.grid, field.K, new, t + dt)


# ---------------------------------------------------------------------------
# Velocity-frequency transforms for diagnostics
# ---------------------------------------------------------------------------

class DiagnosticTransform:
    """Separable transform v -> eta: Fourier in v1, order-0 Hankel in w."""

    def __init__(self, grid: VelocityGrid, h_diag: float = 8.0, n_eta: int = 16):
        self.grid = grid
        self.eta1 = np.linspace(-h_diag, h_diag, 2 * n_eta + 1)
        self.etap = np.linspace(0.0, h_diag, n_eta + 1)
        d1 = self.eta1[1] - self.eta1[0]
        dp = self.etap[1] - self.etap[0]
        self.E = np.exp(-2j * math.pi * np.outer(self.eta1, grid.v1_axis)) * grid.h1
        J = 2.0 * math.pi * bessel_j(0, 2.0 * math.pi * np.outer(grid.w_axis, self.etap))
        self.J = J * grid.w_quad[:, None]
        # inverse transform
        w1 = np.full(self.eta1.size, d1)
        w1[[0, -1]] *= 0.5
        # trapezoid in eta_perp; the node weight at 0 carries the axis correction (dp^2/12) f(0)
        wp = np.full(self.etap.size, dp)
        wp[[0, -1]] *= 0.5
        rad = self.etap * wp
        rad[0] = dp * dp / 12.0
        self.Einv = np.exp(2j * math.pi * np.outer(grid.v1_axis, self.eta1)) * w1[None, :]
        self.Jinv = (2.0 * math.pi * bessel_j(0, 2.0 * math.pi * np.outer(self.etap, grid.w_axis))
                     * rad[:, None])
        # eta-space measure 2 pi |eta_perp| d eta_1 d eta_perp
        self.eta_weights = np.outer(w1, 2.0 * math.pi * rad)
        self.E1, self.EP = np.meshgrid(self.eta1, self.etap, indexing="ij")
        self.eta_mag = np.sqrt(self.E1 ** 2 + self.EP ** 2)

    def forward(self, values: np.ndarray) -> np.ndarray:
        rect = self.grid.to_rect(values)
        return np.einsum("av,kvw,wb->kab", self.E, rect, self.J, optimize=True)

    def inverse(self, spec: np.ndarray) -> np.ndarray:
        rect = np.einsum("va,kab,bw->kvw", self.Einv, spec, self.Jinv, optimize=True)
        return rect

    def multiplier(self, w: GevreyWeight, K: int) -> np.ndarray:
        ks = np.abs(np.arange(-K, K + 1)).astype(float)
        logA = log_multiplier(w, ks[:, None, None], self.eta_mag[None, :, :])
        return np.exp(logA)

    def eta_norm_sq(self, spec: np.ndarray) -> float:
        return float(np.sum(np.abs(spec) ** 2 * self.eta_weights[None, :, :]))

    def v_norms(self, rect: np.ndarray) -> tuple[float, float]:
        """(int |g|^2 dv, int |v|^2 |g|^2 dv) on the full rectangle grid."""
        g = self.grid
        V1, Wp = np.meshgrid(g.v1_axis, g.w_axis, indexing="ij")
        wts = 2.0 * math.pi * g.h1 * np.broadcast_to(g.w_quad, Wp.shape)
        a2 = np.abs(rect) ** 2 * wts[None, :, :]
        return float(np.sum(a2)), float(np.sum(a2 * (V1 ** 2 + Wp ** 2)[None, :, :]))


def gevrey_field_norm(spec: np.ndarray, tr: DiagnosticTransform, w: GevreyWeight, K: int) -> float:
    return math.sqrt(tr.eta_norm_sq(spec * tr.multiplier(w, K)))


@dataclass
class BootstrapValues:
    b1: float
    b2: float
    b3: float
    ratios: dict


def bootstrap_monitor(field: PhaseSpaceField, t: float, config: SimConfig,
                      rho_integral: float = 0.0, tr: DiagnosticTransform | None = None
                      ) -> BootstrapValues:
    """Discrete bootstrap quantities and assumption-A ratios.

    b1 = ||A Phi||^2 - ||v A Phi||^2 + ||A (alpha Phi)^||^2 with A = A^{(lambda(t), sigma+1; nubar)},
    evaluated as int (1 - |v|^2)|A Phi|^2 dv + ||A (alpha Phi)^||^2 so that it is
    nonnegative by construction; b2 is the same with sigma - beta; b3 is the
    running time integral of ||A rho||^2 passed in by the caller.
    Ratios ||v A^{(sigma+m)} Phi|| / ||A^{(sigma+m)} Phi|| for m in {-beta, 0, 1}.
    """
    tr = tr or DiagnosticTransform(field.grid, config.h_diag, config.n_eta)
    K = field.K
    lam = lambda_at(config.schedule, t)
    nub = config.schedule.nubar
    spec = tr.forward(field.values)
    spec_alpha = tr.forward(field.values * field.grid.alpha[None, :])

    def pieces(sig):
        w = GevreyWeight(lam, sig, nub)
        A = tr.multiplier(w, K)
        phys = tr.inverse(spec * A)
        n0, nv = tr.v_norms(phys)
        return n0, nv, tr.eta_norm_sq(spec_alpha * A)

    out = []
    for sig in (config.sigma + 1.0, config.sigma - config.beta):
        n0, nv, na = pieces(sig)
        out.append(max(n0 - nv, 0.0) + na if n0 > 0 else 0.0)
    ratios = {}
    for name, m in (("m_beta", -config.beta), ("m0", 0.0), ("m1", 1.0)):
        n0, nv, _ = pieces(config.sigma + m)
        ratios[name] = math.sqrt(nv / n0) if n0 > 0 else 0.0
    return BootstrapValues(out[0], out[1], float(rho_integral), ratios)


# ---------------------------------------------------------------------------
# Time marching
# ---------------------------------------------------------------------------

@dataclass
class DiagnosticSeries:
    times: np.ndarray
    rho: np.ndarray  # (n_times, 2K+1)
    mass_resid: np.ndarray
    diag_times: np.ndarray
    gevrey: dict
    bootstrap: np.ndarray  # (n_diag, 3)
    ratios: dict
    truncation: float
    initial_norm: float
    K: int
    steps: int
    config: dict = field(default_factory=dict)

    def rho_mode(self, k: int) -> np.ndarray:
        return self.rho[:, k + self.K]

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        names = sorted(self.gevrey)
        wr.writerow(["t", "mass_resid"] + [f"rho_abs_k{k}" for k in range(1, self.K + 1)]
                    + [f"gevrey_{n}" for n in names]
                    + ["bootstrap1", "bootstrap2", "bootstrap3", "ratio_m0"])
        for i, t in enumerate(self.diag_times):
            j = int(np.argmin(np.abs(self.times - t)))
            row = [repr(float(t)), repr(float(self.mass_resid[j]))]
            row += [repr(float(abs(self.rho[j, k + self.K]))) for k in range(1, self.K + 1)]
            row += [repr(float(self.gevrey[n][i])) for n in names]
            row += [repr(float(x)) for x in self.bootstrap[i]]
            row.append(repr(float(self.ratios["m0"][i])))
            wr.writerow(row)
        return buf.getvalue()


def run(config: SimConfig, perturbation: Sequence[Perturbation],
        impulses: Sequence[tuple[float, Sequence[Perturbation]]] = (),
        diagnostics: bool = True, checkpoint: str | Path | None = None) -> DiagnosticSeries:
    """March to t_max, recording rho at every out_dt and norms every diag_every.

    ``impulses`` adds phase-space perturbations (scaled by eps) at given times.
    """
    model = _Model(config)
    g = model.grid
    K, L = config.K, config.torus.L
    fld = initialize(config, perturbation)
    values = fld.values
    init_norm = fld.norm()
    impulse_list = sorted(((float(t), p) for t, p in impulses), key=lambda x: x[0])
    for t_imp, _ in impulse_list:
        if not 0 < t_imp < config.t_max:
            raise ParameterError("impulse times must lie in (0, t_max)")
    n_out = int(round(config.t_max / config.out_dt))
    out_times = config.out_dt * np.arange(n_out + 1)
    diag_stride = max(1, int(round(config.diag_every / config.out_dt)))
    tr = DiagnosticTransform(g, config.h_diag, config.n_eta) if diagnostics else None
    rho_hist = np.zeros((n_out + 1, 2 * K + 1), dtype=complex)
    mass = np.zeros(n_out + 1)
    diag_t, gev, boot, ratios = [], {weight_name(w): [] for w in config.diag}, [], {
        "m_beta": [], "m0": [], "m1": []}
    rho_int = 0.0
    trunc_acc = 0.0
    steps = 0
    t = 0.0
    A_prev = None
    ref_norm = init_norm

    def record(i, values, t):
        nonlocal rho_int, A_prev, trunc_acc
        fl = PhaseSpaceField(g, K, values, t)
        rho = density_modes(fl, config.torus, t)
        rho_hist[i] = rho
        mass[i] = abs(rho[K])
        w_rho = GevreyWeight(lambda_at(config.schedule, t), config.sigma, config.schedule.nubar)
        ks = np.arange(-K, K + 1)
        a2 = float(np.sum(np.abs(rho) ** 2 * np.exp(2 * log_multiplier(w_rho, ks, ks * t / L))))
        if A_prev is not None:
            rho_int += 0.5 * (A_prev + a2) * config.out_dt
        A_prev = a2
        if diagnostics and i % diag_stride == 0:
            spec = tr.forward(values)
            for w in config.diag:
                gev[weight_name(w)].append(gevrey_field_norm(spec, tr, w, K))
            bv = bootstrap_monitor(fl, t, config, rho_int, tr)
            boot.append((bv.b1, bv.b2, bv.b3))
            for key in ratios:
                ratios[key].append(bv.ratios[key])
            diag_t.append(t)
            if not config.linearized:
                _, _, tv = model.rhs(values, t, want_truncation=True)
                fn = math.sqrt(float(np.sum(np.abs(values) ** 2 @ g.weights)))
                trunc_acc = max(trunc_acc, tv * config.diag_every / max(fn, 1e-300))

    record(0, values, 0.0)
    imp_idx = 0
    for i in range(1, n_out + 1):
        t_target = out_times[i]
        while t < t_target - 1e-12:
            # apply impulses that fall at the current time
            while imp_idx < len(impulse_list) and impulse_list[imp_idx][0] <= t + 1e-12:
                extra = perturbation_values(g, K, impulse_list[imp_idx][1], config.eps,
                                            impulse_list[imp_idx][0], L)
                values = _symmetrize(values + extra)
                ref_norm = max(ref_norm, math.sqrt(float(np.sum(np.abs(values) ** 2 @ g.weights))))
                imp_idx += 1
            t_stop = t_target
            if imp_idx < len(impulse_list):
                t_stop = min(t_stop, impulse_list[imp_idx][0])
            k1, F, _ = model.rhs(values, t)
            dt_max = config.dt
            if config.enforce_stability:
                dt_max = min(dt_max, model.dt_stable(F, t))
            # split the remaining interval evenly so outputs stay on the grid
            dt = (t_stop - t) / math.ceil((t_stop - t) / dt_max - 1e-9)
            values, _ = _rk4(model, values, t, dt, k1)
            t = t + dt
            if abs(t - t_stop) < 1e-12:
                t = t_stop
            steps += 1
            nrm = math.sqrt(float(np.sum(np.abs(values) ** 2 @ g.weights)))
            if not math.isfinite(nrm) or (ref_norm > 0 and nrm > 1e3 * ref_norm):
                raise DivergenceError(f"field norm exceeded 1e3 x initial at t = {t:.6g}", time=t)
        record(i, values, t)
    if trunc_acc > 0.01:
        warnings.warn(f"Galerkin truncation diagnostic {trunc_acc:.3g} exceeds 1%",
                      TruncationWarning, stacklevel=2)
    if checkpoint is not None:
        write_checkpoint(checkpoint, PhaseSpaceField(g, K, values, t), config.dt)
    return DiagnosticSeries(
        times=out_times, rho=rho_hist, mass_resid=mass, diag_times=np.array(diag_t),
        gevrey={k: np.array(v) for k, v in gev.items()}, bootstrap=np.array(boot).reshape(-1, 3),
        ratios={k: np.array(v) for k, v in ratios.items()}, truncation=trunc_acc,
        initial_norm=init_norm, K=K, steps=steps, config=config.describe())


# ---------------------------------------------------------------------------
# Echo experiment
# ---------------------------------------------------------------------------

@dataclass
class EchoReport:
    t_peak: float
    t_predicted: float
    peak_amplitude: float
    relative_timing_error: float
    probe_mode: int
    noise_floor: float
    no_echo: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def echo_experiment(config: SimConfig, k1: int = 1, k2: int = 2, tau_impulse: float = 10.0,
                    profile: ProfileSpec | None = None
                    ) -> tuple[EchoReport, DiagnosticSeries, np.ndarray]:
    """Two-pulse echo: mode k1 at t = 0, mode k2 impulse at tau, probe mode k2 - k1.

    The echo signal is the nonlinear part of rho(t, k2 - k1), i.e. the full
    run minus a linearized companion run; its post-impulse maximum is
    compared with t* = k2 tau / (k2 - k1).  Returns the report, the full
    run and the nonlinear probe signal |rho_full - rho_lin| on ``full.times``.
    """
    if not 0 < k1 < k2 <= config.K:
        raise ParameterError("need 0 < k1 < k2 <= K")
    if not tau_impulse > 0:
        raise ParameterError("tau_impulse must be positive")
    prof = profile or ProfileSpec()
    first = [Perturbation(k1, 1.0, prof)]
    second = [(tau_impulse, [Perturbation(k2, 1.0, prof)])]
    full = run(config, first, second, diagnostics=False)
    lin = run(replace(config, linearized=True), first, second, diagnostics=False)
    probe = k2 - k1
    sig = np.abs(full.rho_mode(probe) - lin.rho_mode(probe))
    t = full.times
    t_pred = k2 * tau_impulse / (k2 - k1)
    floor = math.sqrt(np.finfo(float).eps) * max(float(np.max(np.abs(full.rho_mode(probe)))),
                                                 1e-300)
    after = t > tau_impulse
    idx = np.flatnonzero(after)
    inner = idx[1:-1]
    is_max = (sig[inner] > sig[inner - 1]) & (sig[inner] >= sig[inner + 1])
    cand = inner[is_max & (sig[inner] > 3 * floor)]
    if cand.size == 0:
        rep = EchoReport(float("nan"), t_pred, 0.0, float("nan"), probe, floor, no_echo=True)
        return rep, full, sig
    best = cand[np.argmax(sig[cand])]
    rep = EchoReport(float(t[best]), t_pred, float(sig[best]),
                     abs(float(t[best]) - t_pred) / t_pred, probe, floor)
    return rep, full, sig


# ---------------------------------------------------------------------------
# Checkpoints and manifests
# ---------------------------------------------------------------------------

def write_checkpoint(path, field: PhaseSpaceField, dt: float):
    """64-byte header (magic, K, N_v1, N_w, t, dt; little-endian) then complex128 rectangle data."""
    g = field.grid
    header = struct.pack("<8siiidd", CHECKPOINT_MAGIC, field.K, g.n_v1, g.n_w, field.t, dt)
    header = header.ljust(CHECKPOINT_HEADER, b"\0")
    data = g.to_rect(field.values).astype("<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data)


def read_checkpoint(path, edge_cells: int = 2) -> tuple[PhaseSpaceField, float]:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, K, n1, nw, t, dt = struct.unpack("<8siiidd", raw[:struct.calcsize("<8siiidd")])
    if magic != CHECKPOINT_MAGIC:
        raise FormatError("not a simulator checkpoint")
    g = _grid_cache(n1, nw, edge_cells)
    rect = np.frombuffer(raw[CHECKPOINT_HEADER:], dtype="<c16").reshape(2 * K + 1, n1, nw)
    return PhaseSpaceField(g, K, rect[:, g.ii, g.jj].astype(complex), t), dt


def content_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def manifest(config_echo: dict) -> dict:
    return {"config": config_echo, "content_hash": content_hash(config_echo)}
