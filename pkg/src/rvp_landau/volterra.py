"""Mode-by-mode linear evolution and stretched-exponential decay fits.

Each density mode solves a Volterra equation of the second kind

    rho(t) = F(t) + int_0^t L(t - s) rho(s) ds,

with F the free-streaming source.  The product trapezoid rule used here is
implicit only in the newest value, hence explicit in practice.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import ParameterError, StepSizeError, WindowError


@dataclass(frozen=True)
class VolterraProblem:
    """rho = F + L * rho on [0, t_max] with uniform step dt.

    ``source`` and ``kernel`` are vectorised callables of time.
    """

    k: int
    source: Callable
    kernel: Callable
    dt: float
    t_max: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.t_max < self.dt:
            raise ParameterError("t_max must be at least dt")


def default_dt(k, L: float) -> float:
    """min(0.01, 0.1 L / |k|), resolving the kernel frequency 2 pi |k| / L."""
    return min(0.01, 0.1 * L / abs(float(k)))


@dataclass
class ModeTrajectory:
    k: int
    times: np.ndarray
    values: np.ndarray
    dt: float
    order: int = 2
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t", "re", "im", "abs"])
        for t, v in zip(self.times, self.values):
            wr.writerow([repr(float(t)), repr(float(v.real)), repr(float(v.imag)),
                         repr(float(abs(v)))])
        return buf.getvalue()


def free_streaming_source(phi_in_hat: Callable, k, t, L: float):
    """Free-streaming density phi_in_hat(k, k t / L)."""
    if k == 0:
        raise ParameterError("source defined for k != 0")
    t = np.asarray(t, dtype=float)
    return phi_in_hat(k, k * t / L)


def solve(problem: VolterraProblem) -> ModeTrajectory:
    """Product trapezoid solution of the Volterra equation.

    rho_0 = F(0),
    rho_n = [F_n + dt (L_n rho_0 / 2 + sum_{j=1}^{n-1} L_{n-j} rho_j)] / (1 - dt L_0 / 2).
    """
    dt = problem.dt
    n_steps = int(round(problem.t_max / dt))
    times = dt * np.arange(n_steps + 1)
    F = np.asarray(problem.source(times), dtype=complex) * np.ones(times.size)
    Lk = np.asarray(problem.kernel(times), dtype=float) * np.ones(times.size)
    denom = 1.0 - 0.5 * dt * Lk[0]
    if abs(denom) < 1e-12:
        raise StepSizeError("1 - dt L(0)/2 vanishes; change dt", bound=float(2.0 / Lk[0]))
    rho = np.zeros(times.size, dtype=complex)
    rho[0] = F[0]
    # lrev[m] = L_{m}; the memory sum uses reversed kernel samples
    for n in range(1, times.size):
        hist = 0.5 * Lk[n] * rho[0]
        if n > 1:
            hist += np.dot(Lk[n - 1:0:-1], rho[1:n])
        rho[n] = (F[n] + dt * hist) / denom
    return ModeTrajectory(k=problem.k, times=times, values=rho, dt=dt, order=2)


# ---------------------------------------------------------------------------
# Decay fitting
# ---------------------------------------------------------------------------

@dataclass
class DecayFit:
    amplitude: float
    rate: float
    nu_fit: float
    residual: float
    window: tuple[float, float]
    n_points: int
    no_decay: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


MIN_ENVELOPE_POINTS = 20


def envelope(times, values, window=None):
    """Envelope points of |values| inside ``window``.

    Local maxima are used when there are at least 20 of them (oscillatory
    decay); a monotone nonincreasing series is its own envelope.
    """
    t = np.asarray(times, dtype=float)
    a = np.abs(np.asarray(values))
    if window is None:
        window = (float(t[0]), float(t[-1]))
    sel = (t >= window[0]) & (t <= window[1])
    t, a = t[sel], a[sel]
    if a.size >= 3:
        inner = (a[1:-1] > a[:-2]) & (a[1:-1] >= a[2:])
        idx = np.flatnonzero(inner) + 1
    else:
        idx = np.array([], dtype=int)
    if idx.size >= MIN_ENVELOPE_POINTS:
        te, ae = t[idx], a[idx]
    elif a.size >= MIN_ENVELOPE_POINTS and np.all(np.diff(a) <= 0):
        te, ae = t, a
    else:
        te, ae = t[idx], a[idx]
    floor = 1e3 * np.finfo(float).eps
    keep = ae > floor
    return te[keep], ae[keep]


def _regress(te, ae, C):
    x = np.log(te)
    y = np.log(np.log(C / ae))
    A = np.vstack([np.ones_like(x), x]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return math.exp(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid ** 2)))


def fit_stretched_exponential(traj: ModeTrajectory, window=None) -> DecayFit:
    """Fit |rho| ~ C exp(-c t^nu) on the envelope inside ``window``.

    For a trial amplitude C a straight line is fitted to log(-log(env/C))
    against log t, giving c and nu; C is refined to minimise the misfit of
    log env.  The reported residual is the RMS of the log-log regression.
    """
    times = traj.times
    if window is None:
        window = (float(times[0]), float(times[-1]))
    window = (max(float(window[0]), float(times[times > 0][0]) if np.any(times > 0) else 0.0),
              float(window[1]))
    te, ae = envelope(times, traj.values, window)
    if te.size < MIN_ENVELOPE_POINTS:
        raise WindowError(f"window {window} holds {te.size} envelope points; need "
                          f">= {MIN_ENVELOPE_POINTS}")
    if ae[-1] >= ae[0]:
        return DecayFit(amplitude=float(ae[0]), rate=0.0, nu_fit=float("nan"),
                        residual=float("nan"), window=window, n_points=int(te.size),
                        no_decay=True)
    amax = float(np.max(ae))
    log_env = np.log(ae)

    def misfit(u):
        C = amax * math.exp(u)
        c, nu, _ = _regress(te, ae, C)
        return float(np.sum((log_env - (math.log(C) - c * te ** nu)) ** 2))

    us = np.geomspace(1e-8, 30.0, 200)
    vals = [misfit(u) for u in us]
    i = int(np.argmin(vals))
    lo = us[max(i - 1, 0)]
    hi = us[min(i + 1, us.size - 1)]
    res = optimize.minimize_scalar(misfit, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12 * max(lo, 1e-12)})
    u = float(res.x) if res.fun <= vals[i] else float(us[i])
    C = amax * math.exp(u)
    c, nu, resid = _regress(te, ae, C)
    return DecayFit(amplitude=C, rate=c, nu_fit=nu, residual=resid, window=window,
                    n_points=int(te.size))
