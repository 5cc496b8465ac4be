"""Linear response kernel, its Laplace transform and the stability scan.

For a spherically symmetric background with weight gtilde the mode-k
response kernel is

    L(t, k) = -(2L/|k|) W(k) int_0^1 [b w t cos(b w t) - sin(b w t)] / t^2 gtilde(w) dw,

with b = 2 pi |k| / L.  Its Laplace transform (convention
int_0^inf f(t) exp(-2 pi z t) dt) has closed forms in terms of arctanh and
arccoth, evaluated here through principal logarithms.  All omega integrals
use composite Gauss-Legendre rules on meshes graded toward logarithmic
points.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
from scipy import optimize

from .background import BackgroundProfile
from .errors import (DomainError, NearSingularityWarning, ParameterError, ResolutionError,
                     SingularityError)

NEAR_SINGULAR = 1e-10
SMALL_T = 1e-6


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InteractionKernel:
    """Interaction transform W(k).

    ``power_law`` gives W(k) = sign L^2/|k|^2 (sign +1 Coulomb, -1 gravity);
    ``tabulated`` looks |k| up in ``table``.
    """

    form: str = "power_law"
    sign: int = 1
    gamma: float = 1.0
    c_w: float | None = None
    table: Mapping[int, float] | None = None
    amplitude: float = 1.0

    def __post_init__(self):
        if self.form not in ("power_law", "tabulated"):
            raise ParameterError(f"unknown kernel form {self.form!r}")
        if self.sign not in (1, -1):
            raise ParameterError("kernel sign must be +1 (Coulomb) or -1 (gravity)")
        if self.gamma < 1:
            raise ParameterError("gamma must be >= 1")
        if self.form == "tabulated" and not self.table:
            raise ParameterError("tabulated kernel needs a table {|k|: W}")

    def what(self, k, L: float):
        kk = np.abs(np.asarray(k, dtype=float))
        if np.any(kk == 0):
            raise ParameterError("W(k) is undefined at k = 0")
        if self.form == "power_law":
            out = self.amplitude * self.sign * L * L / kk ** 2
        else:
            out = np.vectorize(lambda q: self.amplitude * float(self.table[int(round(q))]))(kk)
        return float(out) if np.ndim(out) == 0 else out

    def bound_constant(self, L: float) -> float:
        return self.c_w if self.c_w is not None else abs(self.amplitude) * L * L

    def satisfies_decay(self, k_list, L: float) -> bool:
        k = np.abs(np.asarray(list(k_list), dtype=float))
        return bool(np.all(np.abs(self.what(k, L)) <= self.bound_constant(L) / k ** (1 + self.gamma)
                           * (1 + 1e-12)))


def coulomb(**kw) -> InteractionKernel:
    return InteractionKernel(form="power_law", sign=1, **kw)


def gravity(**kw) -> InteractionKernel:
    return InteractionKernel(form="power_law", sign=-1, **kw)


@dataclass(frozen=True)
class TorusSpec:
    L: float
    k_list: tuple[int, ...] = (1,)

    def __post_init__(self):
        if not self.L > 0:
            raise ParameterError("torus size L must be positive")
        if 0 in self.k_list:
            raise ParameterError("k_list must not contain 0")
        object.__setattr__(self, "k_list", tuple(int(k) for k in self.k_list))


# ---------------------------------------------------------------------------
# Quadrature helpers
# ---------------------------------------------------------------------------

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(n: int):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def graded_breakpoints(singular=(), n_uniform: int = 16, levels: int = 40,
                       floor: float = 0.0) -> np.ndarray:
    """Breakpoints on [0, 1]: uniform panels plus geometric grading toward each singular point.

    ``floor`` stops the grading once panels are smaller than that scale
    (used when the singularity sits a distance ``floor`` off the real axis).
    """
    pts = set(np.linspace(0.0, 1.0, n_uniform + 1).tolist())
    for s in singular:
        if not 0.0 <= s <= 1.0:
            continue
        pts.add(float(s))
        for side in (-1.0, 1.0):
            room = (s if side < 0 else 1.0 - s)
            h = room
            for _ in range(levels):
                h *= 0.5
                if h <= max(floor, 1e-13):
                    break
                pts.add(float(s + side * h))
    return np.array(sorted(pts))


def composite_nodes(breaks: np.ndarray, n: int = 16):
    """Gauss-Legendre nodes and weights on each panel of ``breaks``."""
    x, w = _gauss_legendre(n)
    a, b = breaks[:-1, None], breaks[1:, None]
    half = 0.5 * (b - a)
    nodes = (a + half * (x[None, :] + 1.0)).ravel()
    weights = (half * w[None, :]).ravel()
    return nodes, weights


def omega_integral(f, singular=(), n: int = 16, n_uniform: int = 16, floor: float = 0.0,
                   estimate: bool = False):
    """int_0^1 f(w) dw on a graded mesh; optionally return (value, error estimate)."""
    br = graded_breakpoints(singular, n_uniform=n_uniform, floor=floor)
    x, w = composite_nodes(br, n)
    val = np.sum(w * f(x))
    if not estimate:
        return val
    x2, w2 = composite_nodes(br, 2 * n)
    val2 = np.sum(w2 * f(x2))
    return val2, abs(val2 - val)


# ---------------------------------------------------------------------------
# Kernel in time
# ---------------------------------------------------------------------------

def _check_k(k) -> float:
    kk = float(np.linalg.norm(np.atleast_1d(np.asarray(k, dtype=float))))
    if kk == 0:
        raise ParameterError("kernel undefined at k = 0")
    return kk


def kernel_L(bg: BackgroundProfile, w: InteractionKernel, torus: TorusSpec, t, k, n: int = 16):
    """Real kernel L(t, k) for scalar or array ``t``.

    Below t = 1e-6 the bracket is replaced by its Taylor series
    -(b w)^3 t / 3 + (b w)^5 t^3 / 30.
    """
    kk = _check_k(k)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ParameterError("kernel_L requires t >= 0")
    L = torus.L
    b = 2.0 * math.pi * kk / L
    tmax = float(np.max(t)) if t.size else 0.0
    n_uniform = max(16, int(math.ceil(b * tmax / 2.0)))
    br = np.linspace(0.0, 1.0, n_uniform + 1)
    om, wt = composite_nodes(br, n)
    gw = wt * bg.gtilde(om)
    flat = np.atleast_1d(t).ravel()
    out = np.empty(flat.size)
    chunk = max(1, 2_000_000 // om.size)
    for i in range(0, flat.size, chunk):
        tc = flat[i:i + chunk, None]
        x = b * om[None, :] * tc
        small = tc < SMALL_T
        with np.errstate(divide="ignore", invalid="ignore"):
            br_val = np.where(small,
                              -(b * om) ** 3 * tc / 3.0 + (b * om) ** 5 * tc ** 3 / 30.0,
                              (x * np.cos(x) - np.sin(x)) / np.where(small, 1.0, tc) ** 2)
        out[i:i + chunk] = br_val @ gw
    out *= -(2.0 * L / kk) * w.what(kk, L)
    if t.ndim == 0:
        return float(out[0])
    return out.reshape(t.shape)


# ---------------------------------------------------------------------------
# Laplace transform of f(a t) = (a t cos a t - sin a t) / (a t)^2
# ---------------------------------------------------------------------------

def _arctanh(w):
    return 0.5 * (np.log(1.0 + w) - np.log(1.0 - w))


def _arccoth(w):
    return 0.5 * np.log((w + 1.0) / (w - 1.0))


def laplace_f(z, a: float):
    """Closed form of int_0^inf f(a t) exp(-2 pi z t) dt.

    Uses the arccoth form off the imaginary axis and for |Im z| >= a/2pi on
    it; on the segment |Im z| < a/2pi of the axis the arctanh form plus
    pi^2 z / a^2 (the limit from Re z > 0).
    """
    if not a > 0:
        raise ParameterError("a must be positive")
    z = complex(z)
    c = a / (2.0 * math.pi)
    for pole in (1j * c, -1j * c):
        d = abs(z - pole)
        if d == 0:
            raise SingularityError(f"laplace_f is singular at z = {pole}")
        if d < NEAR_SINGULAR:
            warnings.warn(f"z within {d:.1e} of the singular point {pole}", NearSingularityWarning,
                          stacklevel=2)
    w = z / (1j * c)
    if z.real == 0.0 and abs(z.imag) < c:
        wr = w.real
        return complex((wr * math.atanh(wr) - 1.0) / a + math.pi ** 2 * z / a ** 2)
    if z == 0:
        return complex(-1.0 / a)
    return complex((w * _arccoth(w) - 1.0) / a)


def f_scaled(s):
    """f(s) = (s cos s - sin s) / s^2 with its series near 0."""
    s = np.asarray(s, dtype=float)
    small = np.abs(s) < 1e-4
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(small, -s / 3.0 + s ** 3 / 30.0,
                       (s * np.cos(s) - np.sin(s)) / np.where(small, 1.0, s) ** 2)
    return out


# ---------------------------------------------------------------------------
# Laplace transform of the kernel
# ---------------------------------------------------------------------------

def _what_scalar(k, w: InteractionKernel, torus: TorusSpec) -> float:
    return float(w.what(_check_k(k), torus.L))


def laplace_L(z, k, bg: BackgroundProfile, w: InteractionKernel, torus: TorusSpec,
              n: int = 16, side: str = "right", return_error: bool = False):
    """Laplace transform of L(., k) evaluated at |k| z (z is the scaled variable).

    Re z != 0 uses the arctanh form; on the imaginary axis |Im z| >= 1/L the
    same form is regular; on 0 < |Im z| < 1/L the split formula is returned
    as the one-sided limit from ``side`` ('right' for Re z -> 0+, 'left' for
    Re z -> 0-).  z = 0 gives 4 pi W int w gtilde.
    """
    z = complex(z)
    L = torus.L
    W = _what_scalar(k, w, torus)
    gt = bg.gtilde
    s = z.imag
    if z == 0:
        val, err = omega_integral(lambda om: om * gt(om), n=n, estimate=True)
        res = complex(4.0 * math.pi * W * val)
        return (res, 4.0 * math.pi * abs(W) * err) if return_error else res
    if z.real == 0.0 and abs(s) < 1.0 / L:
        if side not in ("right", "left"):
            raise ParameterError("side must be 'right' or 'left'")
        w0 = L * abs(s)
        Ls = L * s
        sgn = 1.0 if side == "right" else -1.0

        def integrand(om):
            out = np.empty(om.shape, dtype=complex)
            lo = om < w0
            with np.errstate(divide="ignore", invalid="ignore"):
                u = om[lo] / Ls
                out[lo] = Ls * np.arctanh(np.clip(u, -1 + 1e-16, 1 - 1e-16)) - om[lo]
                v = om[~lo] / Ls
                out[~lo] = Ls * _arccoth(v) - om[~lo] + sgn * 1j * math.pi * Ls / 2.0
            out = out * gt(om)
            return np.where(np.isfinite(out), out, 0.0)

        val, err = omega_integral(integrand, singular=(w0,), n=n, estimate=True)
    else:
        Lz = L * z
        near = abs(z.real) < 1.0 / L and abs(s) < 1.5 / L
        sing = (min(L * abs(s), 1.0),) if near else ()

        def integrand(om):
            return ((Lz / 1j) * _arctanh(1j * om / Lz) - om) * gt(om)

        val, err = omega_integral(integrand, singular=sing, n=n, floor=0.25 * L * abs(z.real),
                                  estimate=True)
    res = complex(-4.0 * math.pi * W * val)
    if return_error:
        return res, 4.0 * math.pi * abs(W) * err
    return res


def laplace_L_one_sided(s: float, k, bg, w, torus, n: int = 16) -> tuple[complex, complex]:
    """Both one-sided limits of the transform at z = i s on the imaginary axis."""
    return (laplace_L(1j * s, k, bg, w, torus, n=n, side="right"),
            laplace_L(1j * s, k, bg, w, torus, n=n, side="left"))


def laplace_L_double_integral(z, k, bg: BackgroundProfile, w: InteractionKernel,
                              torus: TorusSpec, n: int = 16) -> complex:
    """Assemble the transform from laplace_f under the omega integral.

    -(8 pi^2 |k| / L) W(k) int_0^1 laplace_f(|k| z; a(w)) w^2 gtilde(w) dw,
    a(w) = 2 pi |k| w / L.
    """
    z = complex(z)
    kk = _check_k(k)
    L = torus.L
    W = _what_scalar(k, w, torus)
    sing = ()
    if abs(z.real) < 1.0 / L and L * abs(z.imag) < 1.0:
        sing = (L * abs(z.imag),)
    br = graded_breakpoints(sing, floor=0.25 * L * abs(z.real))
    om, wt = composite_nodes(br, n)
    zk = kk * z
    vals = np.empty(om.size, dtype=complex)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearSingularityWarning)
        for i, o in enumerate(om):
            vals[i] = laplace_f(zk, 2.0 * math.pi * kk * o / L)
    integral = np.sum(wt * vals * om ** 2 * bg.gtilde(om))
    return complex(-(8.0 * math.pi ** 2 * kk / L) * W * integral)


def _laplace_L_grid(zs: np.ndarray, W: float, bg: BackgroundProfile, L: float,
                    n_nodes: int = 128) -> np.ndarray:
    """Vectorised arctanh-form transform on a fixed mesh for scanning.

    u = i w / (L z) is assembled from real and imaginary parts so that points
    exactly on the imaginary axis carry Im u = +0 and pick up the limit from
    Re z > 0.
    """
    om, wt = composite_nodes(np.linspace(0.0, 1.0, n_nodes // 16 + 1), 16)
    gw = wt * bg.gtilde(om)
    flat = zs.ravel()
    out = np.empty(flat.size, dtype=complex)
    chunk = max(1, 1_000_000 // om.size)
    for i in range(0, flat.size, chunk):
        r = flat[i:i + chunk].real[:, None]
        s = flat[i:i + chunk].imag[:, None]
        mod2 = L * (r * r + s * s)
        zero = mod2 == 0
        mod2 = np.where(zero, 1.0, mod2)
        u = (om[None, :] * s / mod2) + 1j * (om[None, :] * r / mod2)
        term = L * (s - 1j * r) * np.arctanh(u) - om[None, :]
        term = np.where(zero, -om[None, :], term)
        out[i:i + chunk] = term @ gw
    return (-4.0 * math.pi * W * out).reshape(zs.shape)


# ---------------------------------------------------------------------------
# Stability scan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanSpec:
    d_re: float = 0.01
    d_im: float = 0.01
    r_max: float = 5.0
    s_max: float | None = None  # defaults to 2/L

    def resolved(self, L: float) -> "ScanSpec":
        return ScanSpec(self.d_re, self.d_im, self.r_max, self.s_max if self.s_max else 2.0 / L)


@dataclass
class StabilityReport:
    kappa_min: float
    argmin_z: complex
    argmin_k: int
    kappa_target: float
    passed: bool
    grid: dict = field(default_factory=dict)
    kappa_grid: float = float("nan")
    polish_error: float = 0.0
    note: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["argmin_z"] = [self.argmin_z.real, self.argmin_z.imag]
        d["pass"] = d.pop("passed")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _scan_rows(res, ims, W, bg, L, workers: int, axis_eval):
    rows = np.array_split(np.arange(ims.size), max(1, workers * 4))

    def job(idx):
        zz = res[None, :] + 1j * ims[idx, None]
        return idx, np.abs(_laplace_L_grid(zz, W, bg, L) - 1.0)

    out = np.empty((ims.size, res.size))
    axis_cols = np.flatnonzero(res == 0.0)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            for idx, vals in ex.map(job, rows):
                out[idx] = vals
    else:
        for r in rows:
            idx, vals = job(r)
            out[idx] = vals
    # the imaginary-axis column carries logarithmic points inside [0, 1]; use graded meshes
    for c in axis_cols:
        out[:, c] = [abs(axis_eval(1j * s_) - 1.0) for s_ in ims]
    return out


def _polish(fun, z0: complex, step: tuple[float, float], bounds) -> tuple[complex, float]:
    """Bounded Nelder-Mead minimisation of fun inside ``bounds`` starting at z0."""
    lo = np.array([bnd[0] for bnd in bounds])
    hi = np.array([bnd[1] for bnd in bounds])
    x0 = np.array([z0.real, z0.imag])
    simplex = np.array([x0, x0 + [0.5 * step[0], 0.0], x0 + [0.0, 0.5 * step[1]]])
    for i in range(3):
        for j in range(2):
            if simplex[i, j] > hi[j]:
                simplex[i, j] = x0[j] - (simplex[i, j] - x0[j])
    res = optimize.minimize(lambda p: fun(complex(p[0], p[1])), x0, method="Nelder-Mead",
                            bounds=list(zip(lo, hi)),
                            options={"xatol": 1e-9, "fatol": 1e-13, "initial_simplex": simplex,
                                     "maxiter": 400})
    xb = np.clip(res.x, lo, hi)
    return complex(xb[0], xb[1]), float(fun(complex(xb[0], xb[1])))


def stability_scan(bg: BackgroundProfile, w: InteractionKernel, torus: TorusSpec,
                   lambda_bar: float | None = None, kappa_target: float = 0.05,
                   grid: ScanSpec | None = None, workers: int = 1) -> StabilityReport:
    """Minimum of |Laplace[L](|k| z, k) - 1| over a rectangle in Re z >= -lambda_bar.

    For power-law kernels only |k| = 1 is scanned, since k enters only
    through |W(k)| = L^2/|k|^2 which is largest there.
    """
    lam = bg.lambda_bar if lambda_bar is None else lambda_bar
    spec = (grid or ScanSpec()).resolved(torus.L)
    L = torus.L
    n_re = int(round((spec.r_max + lam) / spec.d_re)) + 1
    n_im = int(round(2 * spec.s_max / spec.d_im)) + 1
    res = -lam + spec.d_re * np.arange(n_re)
    res[np.abs(res) < 1e-9 * spec.d_re] = 0.0
    ims = np.linspace(-spec.s_max, spec.s_max, n_im)
    if w.form == "power_law":
        ks = [1]
        note = "power-law kernel: |W(k)| is maximal at |k|=1; scanned k=1 only"
    else:
        ks = sorted(set(abs(k) for k in torus.k_list))
        note = "tabulated kernel: every k in k_list scanned"
    best = None
    for k in ks:
        W = _what_scalar(k, w, torus)
        vals = _scan_rows(res, ims, W, bg, L, workers,
                          lambda zz, k=k: laplace_L(zz, k, bg, w, torus))
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        if best is None or vals[i, j] < best[0]:
            best = (float(vals[i, j]), k, complex(res[j], ims[i]))
    kappa_grid, k_best, z_grid = best

    def fun(zz: complex) -> float:
        return abs(laplace_L(zz, k_best, bg, w, torus) - 1.0)

    # the polish stays within two cells of the grid argmin and on the same side of
    # the imaginary axis, where the arctanh form has a jump across |Im z| < 1/L
    re_lo, re_hi = z_grid.real - 2 * spec.d_re, z_grid.real + 2 * spec.d_re
    if z_grid.real >= 0:
        re_lo = max(re_lo, 0.0)
    else:
        re_hi = min(re_hi, -0.0)
    bounds = [(max(re_lo, -lam), min(re_hi, spec.r_max)),
              (max(z_grid.imag - 2 * spec.d_im, -spec.s_max),
               min(z_grid.imag + 2 * spec.d_im, spec.s_max))]
    z_pol, k_pol = _polish(fun, z_grid, (spec.d_re, spec.d_im), bounds)
    k_exact = fun(z_grid)
    if k_exact < k_pol:
        z_pol, k_pol = z_grid, k_exact
    moved_re = abs(z_pol.real - z_grid.real) / spec.d_re
    moved_im = abs(z_pol.imag - z_grid.imag) / spec.d_im
    if max(moved_re, moved_im) > 1.1:
        raise ResolutionError(
            f"local refinement moved the minimiser from {z_grid} to {z_pol}, more than 10% of a "
            f"cell beyond the grid cell; use a denser grid")
    grid_info = {"d_re": spec.d_re, "d_im": spec.d_im, "re_min": -lam, "r_max": spec.r_max,
                 "s_max": spec.s_max, "n_re": n_re, "n_im": n_im, "k_scanned": ks}
    return StabilityReport(kappa_min=float(k_pol), argmin_z=z_pol, argmin_k=int(k_best),
                           kappa_target=kappa_target, passed=bool(k_pol > kappa_target),
                           grid=grid_info, kappa_grid=kappa_grid,
                           polish_error=abs(kappa_grid - k_pol), note=note)


# ---------------------------------------------------------------------------
# Critical torus sizes
# ---------------------------------------------------------------------------

def _critical_breaks(n_uniform=16):
    inner = np.linspace(0.0, 0.5, n_uniform + 1)
    outer = 1.0 - 0.5 ** np.arange(2, 48)
    return np.concatenate([inner, outer, [1.0]])


def _critical_integral(f, n: int) -> float:
    om, wt = composite_nodes(_critical_breaks(), n)
    return float(np.sum(wt * f(om)))


def critical_size_gravity(bg: BackgroundProfile, n: int = 16) -> float:
    """L_max = (-4 pi int_0^1 w gtilde dw)^{-1/2} for attractive interactions."""
    I = _critical_integral(lambda om: om * bg.gtilde(om), n)
    if not I < 0:
        raise DomainError("int w gtilde must be negative (background not decreasing)")
    return (-4.0 * math.pi * I) ** -0.5


def critical_size_coulomb(bg: BackgroundProfile, n: int = 16) -> float:
    """L_max = (4 pi int_0^1 (w - arctanh w) gtilde dw)^{-1/2} for repulsive interactions."""

    def f(om):
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (om - np.arctanh(om)) * bg.gtilde(om)
        return np.where(om < 1.0, val, 0.0)

    I = _critical_integral(f, n)
    if not I > 0:
        raise DomainError("int (w - arctanh w) gtilde must be positive (background not decreasing)")
    return (4.0 * math.pi * I) ** -0.5


def critical_sweep(model: str, thetas, profile_factory, n: int = 16) -> np.ndarray:
    """L_max for each temperature; ``profile_factory(theta)`` builds the background."""
    fn = {"coulomb": critical_size_coulomb, "gravity": critical_size_gravity}.get(model)
    if fn is None:
        raise ParameterError("model must be 'coulomb' or 'gravity'")
    thetas = np.asarray(thetas, dtype=float)
    if thetas.size == 0:
        raise ParameterError("empty temperature grid")
    if np.any(thetas <= 0) or np.any(np.diff(thetas) <= 0):
        raise ParameterError("temperatures must be positive and increasing")
    return np.array([fn(profile_factory(float(t)), n=n) for t in thetas])
