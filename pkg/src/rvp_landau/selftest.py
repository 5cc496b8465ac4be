"""Seeded property suites for the weight and bracket inequalities.

Each check draws a fixed number of samples from a seeded generator and
returns a :class:`CheckResult`; the command-line ``selftest`` prints one
line per check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gevrey import (
    LambdaSchedule,
    SpectralGrid,
    check_bracket_lemma,
    check_exp_tradeoff,
    dyadic_levels,
    exp_sobolev_constant,
    lambda_at,
    lp_decompose,
    lp_norm_sq,
    lp_partition,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_exp_tradeoff_samples(rng: np.random.Generator, n: int = 10_000) -> CheckResult:
    x = 10.0 ** rng.uniform(-3, 3, n)
    alpha = rng.uniform(0.05, 1.0, n)
    beta = alpha * rng.uniform(0.0, 0.95, n)
    C = 10.0 ** rng.uniform(-2, 1, n)
    delta = 10.0 ** rng.uniform(-2, 1, n)
    ok = check_exp_tradeoff(x, alpha, beta, C, delta)
    const = exp_sobolev_constant(x, 0.5, 2.0, 0.3)
    return CheckResult("exp_tradeoff", bool(np.all(ok)),
                       f"{int(ok.sum())}/{n} samples; sampled Sobolev constant {const:.6g}")


def check_bracket_samples(rng: np.random.Generator, n: int = 10_000) -> CheckResult:
    x = 10.0 ** rng.uniform(-3, 3, n)
    y = 10.0 ** rng.uniform(-3, 3, n)
    # put half the pairs close together so the |x - y| <= x/K branch is populated
    close = rng.random(n) < 0.5
    y[close] = x[close] * (1.0 + rng.uniform(-0.3, 0.3, int(close.sum())))
    s = rng.uniform(0.01, 0.99, n)
    K = rng.uniform(1.5, 10.0, n)
    res = check_bracket_lemma(x, y, s, K)
    bad = [k for k, v in res.items() if not np.all(v)]
    return CheckResult("bracket_inequalities", not bad,
                       f"{n} samples, items {sorted(res)}; failing: {bad or 'none'}")


def check_partition_of_unity(rng: np.random.Generator, n: int = 500) -> CheckResult:
    k = rng.integers(-40, 41, n).astype(float)
    eta = rng.uniform(-40.0, 40.0, n)
    total = sum(lp_partition(k, eta, N) for N in dyadic_levels(128))
    err = float(np.max(np.abs(total - 1.0)))
    return CheckResult("lp_partition_of_unity", err <= 1e-12, f"max |sum - 1| = {err:.3g}")


def check_almost_orthogonality(rng: np.random.Generator, n_fields: int = 50) -> CheckResult:
    worst_lo, worst_hi, worst_proj = np.inf, 0.0, 0.0
    ok = True
    for _ in range(n_fields):
        kmax = int(rng.integers(1, 6))
        k = np.arange(-kmax, kmax + 1)
        eta = np.linspace(-20.0, 20.0, int(rng.integers(41, 202)))
        vals = rng.normal(size=(k.size, eta.size)) + 1j * rng.normal(size=(k.size, eta.size))
        grid = SpectralGrid(k, eta, vals)
        blocks = lp_decompose(grid, 32)
        total = lp_norm_sq(grid)
        parts = sum(lp_norm_sq(b) for b in blocks.values())
        worst_lo = min(worst_lo, total / parts)
        worst_hi = max(worst_hi, total / parts)
        ok &= parts <= total * (1 + 1e-12) and total <= 2.0 * parts * (1 + 1e-12)
        for N, b in blocks.items():
            again = lp_decompose(b, 32)[N]
            nb = lp_norm_sq(b)
            if nb > 0:
                worst_proj = max(worst_proj, lp_norm_sq(again) / nb)
                ok &= lp_norm_sq(again) <= nb * (1 + 1e-12)
    return CheckResult("lp_almost_orthogonality", bool(ok),
                       f"||u||^2/sum||u_N||^2 in [{worst_lo:.4f}, {worst_hi:.4f}]; "
                       f"max reprojection ratio {worst_proj:.4f}")


def check_lambda_schedule(n: int = 100_000) -> CheckResult:
    s = LambdaSchedule(0.2, 0.1, 0.5, 1.0)
    t = np.concatenate([np.linspace(0.0, 10.0, n // 2), np.geomspace(10.0, 1e8, n // 2)])
    lam = lambda_at(s, t)
    ok = np.all(lam >= s.alpha0 - 1e-15) and np.all(lam <= s.upper + 1e-15)
    mono = bool(np.all(np.diff(lam) <= 1e-15))
    return CheckResult("lambda_schedule_bounds", bool(ok and mono),
                       f"range [{lam.min():.6g}, {lam.max():.6g}] within "
                       f"[{s.alpha0:.6g}, {s.upper:.6g}]; nonincreasing: {mono}")


def run_property_suites(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        check_exp_tradeoff_samples(rng),
        check_bracket_samples(rng),
        check_partition_of_unity(rng),
        check_almost_orthogonality(rng),
        check_lambda_schedule(),
    ]
