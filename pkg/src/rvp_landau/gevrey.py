"""Gevrey weights, norms, the shrinking-radius schedule and dyadic blocks.

All weights are written in terms of the regularised bracket

    <k, eta> = sqrt(1 + (|k| + |eta|)^2),

and the multiplier A = <k, eta>^sigma exp(lambda <k, eta>^nu) is formed in
log space so that overflow is detected instead of silently saturating.
Spatial modes are collinear integers and frequencies are real scalars; a
vector input can be reduced with ``axis``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .background import _smooth_step
from .errors import CoverageError, FormatError, GevreyOverflowError, ParameterError

LOG_MAX = math.log(np.finfo(float).max)


def _mag(x, axis):
    x = np.asarray(x, dtype=float)
    if axis is None:
        return np.abs(x)
    return np.sqrt(np.sum(x * x, axis=axis))


def bracket(k, eta, axis=None):
    """Return sqrt(1 + (|k| + |eta|)^2).

    With ``axis=None`` inputs are scalars or arrays of collinear components;
    otherwise magnitudes are taken along ``axis``.
    """
    return np.sqrt(1.0 + (_mag(k, axis) + _mag(eta, axis)) ** 2)


def bracket1(x):
    """One-variable bracket <x> = sqrt(1 + x^2)."""
    return np.sqrt(1.0 + np.asarray(x, dtype=float) ** 2)


@dataclass(frozen=True)
class GevreyWeight:
    """Parameters (lambda, sigma, nu) of the multiplier A."""

    lam: float
    sigma: float
    nu: float

    def __post_init__(self):
        if not 0.0 < self.nu <= 1.0:
            raise ParameterError("nu must lie in (0, 1]")
        if self.lam < 0:
            raise ParameterError("lambda must be nonnegative")

    def shifted(self, dsigma: float) -> "GevreyWeight":
        return GevreyWeight(self.lam, self.sigma + dsigma, self.nu)


def log_multiplier(w: GevreyWeight, k, eta, axis=None):
    """log A = sigma log<k,eta> + lambda <k,eta>^nu."""
    b = bracket(k, eta, axis)
    return w.sigma * np.log(b) + w.lam * b ** w.nu


def _raise_overflow(logv, k, eta, axis):
    logv = np.atleast_1d(logv)
    idx = tuple(np.argwhere(logv > LOG_MAX)[0])
    if axis is None:
        k_bad = np.broadcast_to(np.asarray(k, dtype=float), logv.shape)[idx]
        e_bad = np.broadcast_to(np.asarray(eta, dtype=float), logv.shape)[idx]
    else:
        k_bad, e_bad = k, eta
    raise GevreyOverflowError(
        f"Gevrey multiplier overflows at (k={k_bad!r}, eta={e_bad!r})", k=k_bad, eta=e_bad)


def multiplier(w: GevreyWeight, k, eta, axis=None):
    """A^{(lambda, sigma; nu)}(k, eta), raising on floating-point overflow."""
    logv = log_multiplier(w, k, eta, axis)
    if np.any(logv > LOG_MAX):
        _raise_overflow(logv, k, eta, axis)
    out = np.exp(logv)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Discrete norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralGrid:
    """Samples h(k, eta) on integer modes ``k`` times a uniform ``eta`` grid.

    ``values`` has shape (len(k), len(eta)).  ``deta`` is required when the
    eta grid has a single point and is otherwise inferred.
    """

    k: np.ndarray
    eta: np.ndarray
    values: np.ndarray
    deta: float | None = None

    def __post_init__(self):
        k = np.atleast_1d(np.asarray(self.k))
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        vals = np.asarray(self.values, dtype=complex).reshape(k.size, eta.size)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "values", vals)
        if eta.size > 1:
            d = np.diff(eta)
            if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-9, atol=0.0):
                raise FormatError("eta grid must be uniform and increasing")
            if self.deta is None:
                object.__setattr__(self, "deta", float(d[0]))
        elif self.deta is None:
            raise FormatError("a single-point eta grid needs an explicit cell width")

    def with_values(self, values) -> "SpectralGrid":
        return SpectralGrid(self.k, self.eta, values, self.deta)

    def trapezoid_weights(self) -> np.ndarray:
        n = self.eta.size
        wts = np.full(n, float(self.deta))
        if n > 1:
            wts[0] *= 0.5
            wts[-1] *= 0.5
        return wts


def _weighted_sq_sum(grid: SpectralGrid, w: GevreyWeight | None) -> float:
    amp2 = np.abs(grid.values) ** 2
    if w is not None:
        kk, ee = np.meshgrid(grid.k.astype(float), grid.eta, indexing="ij")
        loga = log_multiplier(w, kk, ee)
        with np.errstate(divide="ignore"):
            logterm = np.log(amp2) + 2.0 * loga
        if np.any(logterm > LOG_MAX):
            _raise_overflow(logterm, kk, ee, None)
        amp2 = np.exp(logterm)
    return float(np.sum(amp2 * grid.trapezoid_weights()[None, :]))


def gevrey_norm(grid: SpectralGrid, w: GevreyWeight | None = None) -> float:
    """(sum_k int |h|^2 A^2 deta)^{1/2} with the trapezoid rule in eta."""
    return math.sqrt(_weighted_sq_sum(grid, w))


def f_norm(k, values, t: float, w: GevreyWeight, L: float) -> float:
    """Torus norm (sum_k |g_k|^2 A(k, k t / L)^2)^{1/2} at time ``t``."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    vals = np.atleast_1d(np.asarray(values, dtype=complex))
    loga = log_multiplier(w, k, k * t / L)
    with np.errstate(divide="ignore"):
        logterm = np.log(np.abs(vals) ** 2) + 2.0 * loga
    if np.any(logterm > LOG_MAX):
        _raise_overflow(logterm, k, k * t / L, None)
    return math.sqrt(float(np.sum(np.exp(logterm))))


@dataclass(frozen=True)
class NormReport:
    t: float
    lam: float
    sigma: float
    nu: float
    value: float

    def to_json(self) -> str:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return json.dumps({key: d[key] for key in ("t", "lambda", "sigma", "nu", "value")})


# ---------------------------------------------------------------------------
# Radius schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaSchedule:
    """Decreasing radius lambda(t) between lambda0 and lambda_prime."""

    lambda0: float
    lambda_prime: float
    nubar: float
    gamma: float = 1.0

    def __post_init__(self):
        if not self.lambda0 > self.lambda_prime > 0:
            raise ParameterError("need lambda0 > lambda_prime > 0")
        if self.gamma < 1:
            raise ParameterError("gamma must be >= 1")
        if not 1.0 / (2.0 + self.gamma) < self.nubar < 1.0:
            raise ParameterError("nubar must lie in (1/(2+gamma), 1)")

    @property
    def alpha0(self) -> float:
        return 0.5 * (self.lambda0 + self.lambda_prime)

    @property
    def a(self) -> float:
        return ((2.0 + self.gamma) * self.nubar - 1.0) / (1.0 + self.gamma)

    @property
    def upper(self) -> float:
        return 0.875 * self.lambda0 + 0.125 * self.lambda_prime


def lambda_at(s: LambdaSchedule, t):
    """lambda(t) = (d/8)(1-t)_+ + alpha0 + (d/4) min(1, t^{-a}), d = lambda0 - lambda'."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ParameterError("lambda_at requires t >= 0")
    d = s.lambda0 - s.lambda_prime
    with np.errstate(divide="ignore"):
        tail = np.where(t > 1.0, np.power(np.where(t > 0, t, 1.0), -s.a), 1.0)
    out = 0.125 * d * np.clip(1.0 - t, 0.0, None) + s.alpha0 + 0.25 * d * tail
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Littlewood-Paley partition
# ---------------------------------------------------------------------------

def _is_dyadic(N) -> bool:
    if N == 0:
        return True
    if isinstance(N, (bool, np.bool_)):
        return False
    try:
        n = int(N)
    except (TypeError, ValueError):
        return False
    return n == N and n >= 1 and (n & (n - 1)) == 0


def _psi_radial(r):
    # 1 for r <= 1/2, 0 for r >= 3/4
    return _smooth_step((0.75 - np.asarray(r, dtype=float)) / 0.25)


def lp_partition(k, eta, N, axis=None):
    """psi(k, eta) for N = 0, otherwise phi_N(k, eta) = psi(k/2N, eta/2N) - psi(k/N, eta/N)."""
    if not _is_dyadic(N):
        raise ParameterError(f"N must be 0 or a power of two, got {N!r}")
    r = _mag(k, axis) + _mag(eta, axis)
    if N == 0:
        out = _psi_radial(r)
    else:
        out = _psi_radial(r / (2.0 * N)) - _psi_radial(r / N)
    return float(out) if np.ndim(out) == 0 else out


def dyadic_levels(N_max: int) -> list[int]:
    """[0, 1, 2, 4, ..., N_max]."""
    if not _is_dyadic(N_max) or N_max == 0:
        raise ParameterError("N_max must be a positive power of two")
    levels = [0]
    n = 1
    while n <= N_max:
        levels.append(n)
        n *= 2
    return levels


def lp_decompose(grid: SpectralGrid, N_max: int) -> dict[int, SpectralGrid]:
    """Split a grid into Littlewood-Paley blocks {N: grid * phi_N}.

    Raises CoverageError if the data has support where |k| + |eta| > N_max,
    since the partition up to N_max does not sum to 1 there.
    """
    levels = dyadic_levels(N_max)
    kk, ee = np.meshgrid(np.abs(grid.k.astype(float)), np.abs(grid.eta), indexing="ij")
    r = kk + ee
    support = grid.values != 0
    if np.any(support) and float(np.max(r[support])) > N_max:
        raise CoverageError(
            f"data reaches |k|+|eta| = {float(np.max(r[support])):.6g} beyond N_max = {N_max}")
    return {N: grid.with_values(grid.values * lp_partition(kk, ee, N)) for N in levels}


def lp_norm_sq(grid: SpectralGrid) -> float:
    return _weighted_sq_sum(grid, None)


# ---------------------------------------------------------------------------
# Elementary inequalities as sampled checks
# ---------------------------------------------------------------------------

BRACKET_CS_LOWER = 0.5  # <x+y>^s >= max(<x>,<y>)^s >= (<x>^s + <y>^s)/2
BRACKET_CS_DIFF = 4.0


def check_exp_tradeoff(x, alpha, beta, C, delta, rtol=1e-12):
    """exp(C x^beta) <= exp(C (C/delta)^{beta/(alpha-beta)}) exp(delta x^alpha), in log form."""
    lhs = C * np.power(x, beta)
    rhs = C * np.power(C / delta, beta / (alpha - beta)) + delta * np.power(x, alpha)
    return lhs <= rhs * (1.0 + rtol) + 1e-300


def exp_sobolev_constant(x, alpha, sigma, delta) -> float:
    """Largest sampled value of exp(-delta x^alpha) delta^{sigma/alpha} <x>^sigma."""
    x = np.asarray(x, dtype=float)
    logv = -delta * x ** alpha + (sigma / alpha) * np.log(delta) + sigma * np.log(bracket1(x))
    return float(np.exp(np.max(logv)))


def check_bracket_lemma(x, y, s, K=None, rtol=1e-12) -> dict[str, np.ndarray]:
    """Boolean arrays for the bracket inequalities at samples x, y >= 0, 0 < s < 1.

    Item (iii) is evaluated with the given ``K`` on rows where the
    hypothesis |x - y| <= x / K holds; other rows report True.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    bx, by = bracket1(x) ** s, bracket1(y) ** s
    bxy = bracket1(x + y) ** s
    bdiff = bracket1(x - y) ** s
    tol = 1.0 + rtol
    out = {
        "i_sub": bxy <= (bx + by) * tol,
        "i_diff": np.abs(bx - by) <= bdiff * tol,
        "i_lower": BRACKET_CS_LOWER * (bx + by) <= bxy * tol,
        "ii": np.abs(bx - by) * (bracket1(x) ** (1 - s) + bracket1(y) ** (1 - s))
        <= BRACKET_CS_DIFF * bracket1(x - y) * tol,
    }
    mx = np.maximum(bracket1(x), bracket1(y))
    ratio = (mx / (bracket1(x) + bracket1(y))) ** (1 - s)
    out["iv"] = bxy <= ratio * (bx + by) * tol
    if K is not None:
        K = np.asarray(K, dtype=float)
        hyp = np.abs(x - y) <= x / K
        rhs = s / (K - 1.0) ** (1 - s) * bdiff
        out["iii"] = np.where(hyp, np.abs(bx - by) <= rhs * tol + 1e-15, True)
    return out


def da_constant(w: GevreyWeight, k, eta, h: float = 1e-4) -> float:
    """Max of |d_eta A| <k,eta>^{1-nu} / A by central differences in eta."""
    k = np.asarray(k, dtype=float)
    eta = np.asarray(eta, dtype=float)
    lp = log_multiplier(w, k, eta + h)
    lm = log_multiplier(w, k, eta - h)
    l0 = log_multiplier(w, k, eta)
    dA_over_A = (np.exp(lp - l0) - np.exp(lm - l0)) / (2.0 * h)
    return float(np.max(np.abs(dA_over_A) * bracket(k, eta) ** (1.0 - w.nu)))
