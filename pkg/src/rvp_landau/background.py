"""Kinetic equilibria and velocity-space special functions.

Velocities live in the open unit ball (units with c = 1).  A spherically
symmetric background is described by its radial profile ``g0(r)`` together
with the derived weight

    gtilde(w) = g0'(w) / (1 - w^2),

which is the only quantity entering the linear response kernel.  The module
also provides the radial Fourier transform of ``alpha(v) = sqrt(1 - |v|^2)``
in Bessel form and the Bessel functions it needs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .errors import FormatError, ParameterError

ArrayLike = "float | np.ndarray"

ALPHA_HAT_ZERO = math.pi ** 2 / 4.0
SERIES_SWITCH = 1e-3
_SERIES_MAX_X = 8.0
_ASYMPTOTIC_MIN_X = 25.0


# ---------------------------------------------------------------------------
# Bessel functions of the first kind, orders 0 and 1
# ---------------------------------------------------------------------------

def _bessel_series(order: int, x: np.ndarray) -> np.ndarray:
    """Ascending power series, accurate to ~1e-14 absolute for x < 8."""
    h = 0.5 * x
    h2 = h * h
    term = np.ones_like(x) if order == 0 else h.copy()
    total = term.copy()
    for m in range(1, 40):
        term = -term * h2 / (m * (m + order))
        total = total + term
    return total


def _bessel_miller(order: int, x: np.ndarray) -> np.ndarray:
    """Backward (Miller) recurrence normalised by J0 + 2 sum J_2k = 1."""
    xmax = float(np.max(x))
    n_start = int(xmax + 30 + 10 * xmax ** (1.0 / 3.0))
    n_start += n_start % 2
    j_next = np.zeros_like(x)
    j_cur = np.full_like(x, 1e-30)
    norm = np.zeros_like(x)
    j0 = j1 = None
    for n in range(n_start, 0, -1):
        j_prev = (2.0 * n / x) * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        # j_cur now holds the unnormalised J_{n-1}
        if (n - 1) % 2 == 0 and n - 1 > 0:
            norm = norm + 2.0 * j_cur
        if n - 1 == 1:
            j1 = j_cur.copy()
        big = np.abs(j_cur) > 1e200
        if np.any(big):
            scale = np.where(big, 1e-200, 1.0)
            j_cur = j_cur * scale
            j_next = j_next * scale
            norm = norm * scale
            if j1 is not None:
                j1 = j1 * scale
    j0 = j_cur
    norm = norm + j0
    return (j0 if order == 0 else j1) / norm


def _bessel_asymptotic(order: int, x: np.ndarray) -> np.ndarray:
    """Hankel asymptotic expansion, error below e^{-2x} for x >= 25."""
    mu = 4.0 * order * order
    p = np.ones_like(x)
    q = np.zeros_like(x)
    term = np.ones_like(x)
    for k in range(1, 40):
        term = term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if k % 2 == 1:
            q = q + (term if (k // 2) % 2 == 0 else -term)
        else:
            p = p + (-term if (k // 2) % 2 == 1 else term)
        if np.max(np.abs(term)) < 1e-17:
            break
    chi = x - (0.5 * order + 0.25) * math.pi
    return np.sqrt(2.0 / (math.pi * x)) * (p * np.cos(chi) - q * np.sin(chi))


def bessel_j(order: int, x):
    """Bessel function of the first kind J_0 or J_1 for x >= 0.

    Uses the ascending series below 8, Miller's backward recurrence on
    [8, 25) and the Hankel asymptotic expansion beyond.  Absolute error is
    below 1e-10 everywhere (in practice ~1e-15).

    Parameters
    ----------
    order : {0, 1}
    x : float or ndarray
        Nonnegative argument(s).
    """
    if order not in (0, 1):
        raise ParameterError(f"bessel_j supports orders 0 and 1, got {order!r}")
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise ParameterError("bessel_j requires x >= 0")
    flat = np.atleast_1d(arr).ravel()
    out = np.empty_like(flat)
    lo = flat < _SERIES_MAX_X
    hi = flat >= _ASYMPTOTIC_MIN_X
    mid = ~(lo | hi)
    if np.any(lo):
        out[lo] = _bessel_series(order, flat[lo])
    if np.any(mid):
        out[mid] = _bessel_miller(order, flat[mid])
    if np.any(hi):
        out[hi] = _bessel_asymptotic(order, flat[hi])
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


# ---------------------------------------------------------------------------
# Fourier transform of alpha(v) = sqrt(1 - |v|^2) on the unit ball
# ---------------------------------------------------------------------------

def _alpha_hat_series(eta: np.ndarray) -> np.ndarray:
    # 4 pi sum_m (-1)^m (2 pi eta)^{2m} / (2m+1)! * int_0^1 r^{2m+2} sqrt(1-r^2) dr
    y2 = (2.0 * math.pi * eta) ** 2
    total = np.zeros_like(eta)
    for m in range(4):
        moment = math.gamma(m + 1.5) * math.gamma(1.5) / (2.0 * math.gamma(m + 3.0))
        total = total + (-1) ** m * y2 ** m / math.factorial(2 * m + 1) * moment
    return 4.0 * math.pi * total


def alpha_hat(eta_mag):
    """Radial Fourier transform of sqrt(1 - |v|^2) restricted to |v| <= 1.

    alpha_hat(eta) = J1(2 pi eta)/(2 pi eta^3) - J0(2 pi eta)/(2 eta^2),
    replaced by a four-term Taylor series for eta < 1e-3.
    """
    arr = np.asarray(eta_mag, dtype=float)
    if np.any(arr < 0):
        raise ParameterError("alpha_hat requires eta_mag >= 0")
    flat = np.atleast_1d(arr).ravel()
    out = np.empty_like(flat)
    small = flat < SERIES_SWITCH
    if np.any(small):
        out[small] = _alpha_hat_series(flat[small])
    if np.any(~small):
        e = flat[~small]
        x = 2.0 * math.pi * e
        out[~small] = bessel_j(1, x) / (2.0 * math.pi * e ** 3) - bessel_j(0, x) / (2.0 * e ** 2)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def alpha_hat_bound(eta_mag):
    """Decay envelope 4 / (1 + eta)^{5/2}."""
    return 4.0 / (1.0 + np.asarray(eta_mag, dtype=float)) ** 2.5


# ---------------------------------------------------------------------------
# Momentum <-> velocity
# ---------------------------------------------------------------------------

def p_of_v(v):
    """Momentum p = v / sqrt(1 - |v|^2) for |v| < 1 (last axis is the vector)."""
    v = np.asarray(v, dtype=float)
    s = np.sum(v * v, axis=-1, keepdims=True)
    if np.any(s >= 1.0):
        raise ParameterError("velocity must satisfy |v| < 1")
    return v / np.sqrt(1.0 - s)


def v_of_p(p):
    """Velocity v = p / sqrt(1 + |p|^2)."""
    p = np.asarray(p, dtype=float)
    s = np.sum(p * p, axis=-1, keepdims=True)
    return p / np.sqrt(1.0 + s)


@dataclass(frozen=True)
class VelocityPoint:
    """A velocity inside the unit ball with its relativistic companions."""

    v: tuple[float, float, float]

    def __post_init__(self):
        if sum(c * c for c in self.v) >= 1.0:
            raise ParameterError("VelocityPoint requires |v| < 1")

    @property
    def alpha(self) -> float:
        return math.sqrt(1.0 - sum(c * c for c in self.v))

    @property
    def p(self) -> np.ndarray:
        return p_of_v(np.array(self.v))


# ---------------------------------------------------------------------------
# Background profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BackgroundProfile:
    """Spherically symmetric equilibrium g0 and its derived weight gtilde.

    ``g0`` and ``gtilde`` are vectorised callables of the speed in [0, 1].
    The Gevrey metadata ``nu``, ``lambda_bar`` and ``c0`` are recorded as
    supplied and are not certified.
    """

    kind: str
    g0: Callable = field(repr=False)
    gtilde: Callable = field(repr=False)
    theta: float | None = None
    nu: float = 1.0 / 3.0
    lambda_bar: float = 0.1
    c0: float = 1.0
    mollification_width: float = 0.0
    decreasing: bool = False

    def __post_init__(self):
        if self.kind not in ("juettner", "tabulated"):
            raise ParameterError(f"unknown background kind {self.kind!r}")
        if not 0.0 < self.nu < 1.0:
            raise ParameterError("Gevrey index nu must lie in (0, 1)")
        if self.lambda_bar <= 0 or self.c0 <= 0:
            raise ParameterError("lambda_bar and c0 must be positive")

    def scaled(self, c: float) -> "BackgroundProfile":
        """Return the profile with g0 and gtilde multiplied by ``c``."""
        g0, gt = self.g0, self.gtilde
        return replace(self, g0=lambda r: c * g0(r), gtilde=lambda w: c * gt(w),
                       decreasing=self.decreasing and c > 0)


def bessel_k2_scaled(x: float) -> float:
    """e^x K_2(x) from the integral representation of K_2.

    K_2(x) = int_0^inf exp(-x cosh t) cosh(2t) dt; the factor e^x is folded
    into the exponent so large arguments (low temperature) do not underflow.
    """
    if x <= 0:
        raise ParameterError("K_2 argument must be positive")

    def f(t):
        return math.exp(-x * (math.cosh(t) - 1.0)) * math.cosh(2.0 * t)

    # beyond t_end the integrand is below e^{-700} relative to its peak
    t_end = math.acosh(1.0 + 750.0 / x)
    val, _ = integrate.quad(f, 0.0, t_end, epsabs=0.0, epsrel=1e-13, limit=400)
    return val


def juettner_profile(theta: float, *, nu: float = 1.0 / 3.0, lambda_bar: float = 0.1,
                     c0: float = 1.0) -> BackgroundProfile:
    """Relativistic Maxwellian at temperature ``theta`` in velocity variables.

    g0(r) = exp(-1/(theta sqrt(1-r^2))) / (4 pi theta K_2(1/theta)).
    """
    if not (theta > 0 and math.isfinite(theta)):
        raise ParameterError(f"theta must be positive, got {theta!r}")
    x = 1.0 / theta
    # log of the normalisation with the e^{-1/theta} factor pulled out
    log_norm = math.log(4.0 * math.pi * theta * bessel_k2_scaled(x))

    def g0(r):
        r = np.asarray(r, dtype=float)
        s2 = np.clip(1.0 - r * r, 0.0, None)
        with np.errstate(divide="ignore"):
            expo = -x * (1.0 / np.sqrt(s2) - 1.0) - log_norm
        out = np.where(s2 > 0, np.exp(expo), 0.0)
        return out if out.ndim else float(out)

    def gtilde(w):
        w = np.asarray(w, dtype=float)
        s2 = np.clip(1.0 - w * w, 0.0, None)
        with np.errstate(divide="ignore", invalid="ignore"):
            expo = (-x * (1.0 / np.sqrt(s2) - 1.0) - log_norm
                    - math.log(theta) - 2.5 * np.log(s2))
            out = np.where(s2 > 0, -w * np.exp(expo), 0.0)
        return out if out.ndim else float(out)

    return BackgroundProfile(kind="juettner", g0=g0, gtilde=gtilde, theta=float(theta),
                             nu=nu, lambda_bar=lambda_bar, c0=c0, decreasing=True)


def _smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, built from e^{-1/x}."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def _smooth_step_derivative(x):
    x = np.asarray(x, dtype=float)
    inside = (x > 0) & (x < 1)
    xs = np.where(inside, x, 0.5)
    a = np.exp(-1.0 / xs)
    b = np.exp(-1.0 / (1.0 - xs))
    da = a / xs ** 2
    db = -b / (1.0 - xs) ** 2
    d = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return np.where(inside, d, 0.0)


def mollify_boundary(profile: BackgroundProfile, delta_m: float) -> BackgroundProfile:
    """Multiply g0 by a smooth cutoff equal to 1 on [0, 1-2 delta_m] and 0 on [1-delta_m, 1].

    gtilde is recomputed from the product rule so that it remains the exact
    derivative weight of the mollified g0.  Since the cutoff is
    nonincreasing and g0 >= 0, a decreasing profile stays decreasing.
    """
    if not 0.0 < delta_m < 0.1:
        raise ParameterError("delta_m must lie in (0, 0.1)")
    g0, gt = profile.g0, profile.gtilde

    def chi(r):
        return _smooth_step((1.0 - delta_m - np.asarray(r, dtype=float)) / delta_m)

    def new_g0(r):
        out = chi(r) * g0(r)
        return out if np.ndim(out) else float(out)

    def new_gtilde(w):
        w = np.asarray(w, dtype=float)
        dchi = -_smooth_step_derivative((1.0 - delta_m - w) / delta_m) / delta_m
        with np.errstate(divide="ignore", invalid="ignore"):
            extra = np.where(dchi != 0, dchi * g0(w) / (1.0 - w * w), 0.0)
        out = chi(w) * gt(w) + extra
        return out if out.ndim else float(out)

    return replace(profile, g0=new_g0, gtilde=new_gtilde, mollification_width=float(delta_m))


def tabulated_profile(omega, gtilde_values, *, decreasing: bool | None = None, nu: float = 1.0 / 3.0,
                      lambda_bar: float = 0.1, c0: float = 1.0) -> BackgroundProfile:
    """Background from samples of gtilde with monotone cubic interpolation.

    g0 is reconstructed as g0(r) = -int_r^1 gtilde(w)(1 - w^2) dw, which
    makes g0(1) = 0.
    """
    om = np.asarray(omega, dtype=float)
    gv = np.asarray(gtilde_values, dtype=float)
    if om.ndim != 1 or om.shape != gv.shape:
        raise FormatError("omega and gtilde must be 1-D arrays of equal length")
    if om.size < 32:
        raise FormatError(f"tabulated background needs at least 32 rows, got {om.size}")
    if np.any(np.diff(om) <= 0):
        raise FormatError("omega must be strictly increasing")
    if om[0] < 0 or om[-1] > 1:
        raise FormatError("omega must lie in [0, 1]")
    if not np.all(np.isfinite(gv)):
        raise FormatError("gtilde values must be finite")
    interp = PchipInterpolator(om, gv, extrapolate=False)
    dens = PchipInterpolator(om, gv * (1.0 - om * om), extrapolate=False)
    prim = dens.antiderivative()
    top = float(prim(om[-1]))
    lo, hi = om[0], om[-1]

    def gtilde(w):
        w = np.asarray(w, dtype=float)
        out = np.where((w >= lo) & (w <= hi), interp(np.clip(w, lo, hi)), 0.0)
        return out if out.ndim else float(out)

    def g0(r):
        r = np.asarray(r, dtype=float)
        out = -(top - prim(np.clip(r, lo, hi)))
        out = np.where(r >= hi, 0.0, out)
        return out if out.ndim else float(out)

    if decreasing is None:
        decreasing = bool(np.all(gv <= 0))
    return BackgroundProfile(kind="tabulated", g0=g0, gtilde=gtilde, nu=nu,
                             lambda_bar=lambda_bar, c0=c0, decreasing=decreasing)


def load_tabulated_csv(path: str | Path, **kwargs) -> BackgroundProfile:
    """Read a CSV with header ``omega,gtilde`` and build a tabulated profile."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["omega", "gtilde"]:
            raise FormatError("background CSV must start with header 'omega,gtilde'")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError) as exc:
                raise FormatError(f"bad row at line {line_no}: {row!r}") from exc
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    return tabulated_profile(arr[:, 0], arr[:, 1], **kwargs)


def zero_profile() -> BackgroundProfile:
    """The trivial background gtilde = 0 (no linear response)."""

    def zero(r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        return out if out.ndim else 0.0

    return BackgroundProfile(kind="tabulated", g0=zero, gtilde=zero, decreasing=False)


def momentum_normalisation(profile: BackgroundProfile) -> float:
    """Integral of g0(|v(p)|) over momentum space (should be 1 for Juettner)."""

    def f(p):
        return 4.0 * math.pi * p * p * float(profile.g0(p / math.sqrt(1.0 + p * p)))

    val, _ = integrate.quad(f, 0.0, np.inf, epsabs=1e-14, epsrel=1e-12, limit=400)
    return val
