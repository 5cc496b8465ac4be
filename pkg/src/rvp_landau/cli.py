"""Batch command-line interface.

Every command reads an optional flat configuration document of
``namespace.key = value`` lines, applies ``--set`` overrides, writes its
outputs (UTF-8, LF line endings) into the output directory together with a
``manifest.json`` echoing the fully resolved configuration.

Exit codes: 0 pass, 1 criterion failed, 2 invalid input, 3 resolution,
4 fit window, 5 divergence.
"""

from __future__ import annotations

import argparse
import ast
import csv
import datetime as _dt
import io
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .background import (
    alpha_hat,
    alpha_hat_bound,
    juettner_profile,
    load_tabulated_csv,
    mollify_boundary,
    zero_profile,
)
from .errors import DivergenceError, ParameterError, RVPError
from .gevrey import GevreyWeight, LambdaSchedule, bracket
from .linear import (
    InteractionKernel,
    ScanSpec,
    TorusSpec,
    critical_sweep,
    kernel_L,
    laplace_L,
    stability_scan,
)
from .selftest import run_property_suites
from .simulator import (
    Perturbation,
    ProfileSpec,
    SimConfig,
    content_hash,
    echo_experiment,
    run,
)
from .volterra import VolterraProblem, default_dt, fit_stretched_exponential, solve

DEFAULTS: dict[str, object] = {
    "run.seed": 0,
    "background.kind": "juettner",
    "background.theta": 0.2,
    "background.table": "",
    "background.mollify": 0.0,
    "background.lambda_bar": 0.1,
    "kernel.model": "coulomb",
    "kernel.amplitude": 1.0,
    "kernel.gamma": 1.0,
    "kernel.table": [],
    "torus.L": 0.5,
    "torus.k": 1,
    "alpha_hat.eta_max": 10.0,
    "alpha_hat.n": 512,
    "kernel_eval.t_max": 10.0,
    "kernel_eval.n": 201,
    "laplace.z": [[0.1, 0.0]],
    "laplace.side": "right",
    "stability.kappa_target": 0.05,
    "stability.d_re": 0.01,
    "stability.d_im": 0.01,
    "stability.r_max": 5.0,
    "stability.s_max": 0.0,
    "critical.model": "coulomb",
    "critical.theta_min": 0.01,
    "critical.theta_max": 2.0,
    "critical.n_theta": 200,
    "critical.thetas": [],
    "linear.t_max": 40.0,
    "linear.dt": 0.0,
    "linear.source": "gevrey",
    "linear.source_nu": 0.5,
    "linear.source_amplitude": 1.0,
    "linear.fit_start": 5.0,
    "linear.fit_end": 0.0,
    "sim.L": 0.7,
    "sim.mollify": 0.05,
    "sim.eps": 1e-3,
    "sim.dt": 0.025,
    "sim.t_max": 40.0,
    "sim.K": 8,
    "sim.n_v1": 128,
    "sim.n_w": 64,
    "sim.edge_cells": 2,
    "sim.c_cfl": 0.5,
    "sim.out_dt": 0.05,
    "sim.diag_every": 1.0,
    "sim.h_diag": 8.0,
    "sim.n_eta": 16,
    "sim.sigma": 5.0,
    "sim.beta": 2.25,
    "sim.kappa_a": 0.9,
    "sim.linearized": False,
    "sim.enforce_stability": True,
    "sim.mode": 1,
    "sim.profile_q": 6,
    "sim.profile_radius": 1.0,
    "sim.checkpoint": False,
    "schedule.lambda0": 0.2,
    "schedule.lambda_prime": 0.1,
    "schedule.nubar": 0.5,
    "schedule.gamma": 1.0,
    "diag.lam": 0.1,
    "diag.sigma": 0.0,
    "diag.nu": 0.5,
    "echo.k1": 1,
    "echo.k2": 2,
    "echo.tau": 10.0,
    "echo.t_max": 30.0,
    "echo.K": 4,
}

ECHO_TOLERANCE = 0.15


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip("\"'")


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ParameterError(f"{key} expects true/false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ParameterError(f"{key} expects an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParameterError(f"{key} expects a number")
        return float(value)
    if isinstance(default, str):
        return str(value)
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ParameterError(f"{key} expects a list")
        return list(value)
    return value


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line {lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ParameterError(f"unknown config key {key!r}")
        out[key] = _coerce(key, _parse_value(val))
    return out


def resolve_config(config_path: str | None, overrides: list[str]) -> dict:
    cfg = dict(DEFAULTS)
    if config_path:
        cfg.update(parse_config_text(Path(config_path).read_text(encoding="utf-8")))
    for item in overrides:
        if "=" not in item:
            raise ParameterError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ParameterError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, _parse_value(val))
    return cfg


def build_background(cfg: dict, mollify: float | None = None):
    kind = cfg["background.kind"]
    lam = cfg["background.lambda_bar"]
    if kind == "juettner":
        bg = juettner_profile(cfg["background.theta"], lambda_bar=lam)
    elif kind == "tabulated":
        if not cfg["background.table"]:
            raise ParameterError("background.table must name a CSV file")
        bg = load_tabulated_csv(cfg["background.table"], lambda_bar=lam)
    elif kind == "zero":
        bg = zero_profile()
    else:
        raise ParameterError(f"unknown background.kind {kind!r}")
    delta = cfg["background.mollify"] if mollify is None else mollify
    if delta and kind != "zero":
        bg = mollify_boundary(bg, delta)
    return bg


def build_kernel(cfg: dict) -> InteractionKernel:
    model = cfg["kernel.model"]
    amp, gamma = cfg["kernel.amplitude"], cfg["kernel.gamma"]
    if model == "coulomb":
        return InteractionKernel("power_law", 1, gamma, amplitude=amp)
    if model == "gravity":
        return InteractionKernel("power_law", -1, gamma, amplitude=amp)
    if model == "tabulated":
        table = {int(k): float(v) for k, v in cfg["kernel.table"]}
        return InteractionKernel("tabulated", 1, gamma, table=table, amplitude=amp)
    raise ParameterError(f"unknown kernel.model {model!r}")


def build_sim_config(cfg: dict, t_max: float | None = None, K: int | None = None) -> SimConfig:
    bg = build_background(cfg, mollify=cfg["sim.mollify"])
    return SimConfig(
        torus=TorusSpec(cfg["sim.L"]), bg=bg, kernel=build_kernel(cfg), eps=cfg["sim.eps"],
        dt=cfg["sim.dt"], t_max=cfg["sim.t_max"] if t_max is None else t_max,
        schedule=LambdaSchedule(cfg["schedule.lambda0"], cfg["schedule.lambda_prime"],
                                cfg["schedule.nubar"], cfg["schedule.gamma"]),
        diag=(GevreyWeight(cfg["diag.lam"], cfg["diag.sigma"], cfg["diag.nu"]),),
        sigma=cfg["sim.sigma"], beta=cfg["sim.beta"], kappa_a=cfg["sim.kappa_a"],
        K=cfg["sim.K"] if K is None else K, n_v1=cfg["sim.n_v1"], n_w=cfg["sim.n_w"],
        edge_cells=cfg["sim.edge_cells"], c_cfl=cfg["sim.c_cfl"], out_dt=cfg["sim.out_dt"],
        diag_every=cfg["sim.diag_every"], h_diag=cfg["sim.h_diag"], n_eta=cfg["sim.n_eta"],
        linearized=cfg["sim.linearized"], enforce_stability=cfg["sim.enforce_stability"])


def _profile(cfg: dict) -> ProfileSpec:
    return ProfileSpec(q=cfg["sim.profile_q"], radius=cfg["sim.profile_radius"])


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def _write(out_dir: Path, name: str, text: str) -> str:
    path = out_dir / name
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text if text.endswith("\n") else text + "\n")
    return name


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    return str(o)


def _write_manifest(out_dir: Path, command: str, cfg: dict, outputs: list[str], status: dict):
    doc = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "content_hash": content_hash({"command": command, "config": cfg}),
        "outputs": outputs,
        "status": status,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    _write(out_dir, "manifest.json", _json(doc))


# ---------------------------------------------------------------------------
# Commands; each returns (exit_code, outputs, status)
# ---------------------------------------------------------------------------

def cmd_alpha_hat(cfg: dict, out_dir: Path):
    eta_max, n = cfg["alpha_hat.eta_max"], cfg["alpha_hat.n"]
    if n < 2:
        raise ParameterError("alpha_hat.n must be >= 2")
    if not eta_max > 0:
        raise ParameterError("alpha_hat.eta_max must be positive (degenerate range)")
    eta = np.linspace(0.0, eta_max, n)
    a = alpha_hat(eta)
    b = alpha_hat_bound(eta)
    name = _write(out_dir, "alpha_hat.csv", _csv_text(["eta", "alpha_hat", "bound"], zip(eta, a, b)))
    ok = bool(np.all(np.abs(a) <= b))
    return (0 if ok else 1), [name], {"within_bound": ok}


def cmd_kernel(cfg: dict, out_dir: Path):
    bg, w = build_background(cfg), build_kernel(cfg)
    torus = TorusSpec(cfg["torus.L"])
    t = np.linspace(0.0, cfg["kernel_eval.t_max"], cfg["kernel_eval.n"])
    vals = kernel_L(bg, w, torus, t, cfg["torus.k"])
    name = _write(out_dir, "kernel.csv", _csv_text(["t", "L"], zip(t, np.atleast_1d(vals))))
    return 0, [name], {}


def cmd_laplace(cfg: dict, out_dir: Path):
    bg, w = build_background(cfg), build_kernel(cfg)
    torus = TorusSpec(cfg["torus.L"])
    rows = []
    for pair in cfg["laplace.z"]:
        if len(pair) != 2:
            raise ParameterError("laplace.z entries must be [re, im] pairs")
        z = complex(float(pair[0]), float(pair[1]))
        v = laplace_L(z, cfg["torus.k"], bg, w, torus, side=cfg["laplace.side"])
        rows.append((z.real, z.imag, float(v.real), float(v.imag)))
    name = _write(out_dir, "laplace.csv", _csv_text(["z_re", "z_im", "re", "im"], rows))
    return 0, [name], {}


def cmd_stability(cfg: dict, out_dir: Path, threads: int = 1):
    bg, w = build_background(cfg), build_kernel(cfg)
    torus = TorusSpec(cfg["torus.L"], (cfg["torus.k"],))
    spec = ScanSpec(cfg["stability.d_re"], cfg["stability.d_im"], cfg["stability.r_max"],
                    cfg["stability.s_max"] or None)
    rep = stability_scan(bg, w, torus, cfg["background.lambda_bar"],
                         cfg["stability.kappa_target"], spec, workers=threads)
    name = _write(out_dir, "stability.json", rep.to_json())
    return (0 if rep.passed else 1), [name], {"pass": rep.passed, "kappa_min": rep.kappa_min}


def cmd_critical_size(cfg: dict, out_dir: Path):
    model = cfg["critical.model"]
    if cfg["critical.thetas"]:
        thetas = np.asarray(cfg["critical.thetas"], dtype=float)
    else:
        if cfg["critical.n_theta"] < 1:
            raise ParameterError("critical.n_theta must be >= 1 (empty grid)")
        thetas = np.linspace(cfg["critical.theta_min"], cfg["critical.theta_max"],
                             cfg["critical.n_theta"])
    lam = cfg["background.lambda_bar"]
    delta = cfg["background.mollify"]

    def factory(th):
        bg = juettner_profile(th, lambda_bar=lam)
        return mollify_boundary(bg, delta) if delta else bg

    L_max = critical_sweep(model, thetas, factory)
    name = _write(out_dir, "critical_size.csv", _csv_text(["theta", "L_max"], zip(thetas, L_max)))
    return 0, [name], {"min_L_max": float(np.min(L_max))}


def cmd_linear_evolve(cfg: dict, out_dir: Path):
    bg, w = build_background(cfg), build_kernel(cfg)
    torus = TorusSpec(cfg["torus.L"])
    k, L = cfg["torus.k"], torus.L
    dt = cfg["linear.dt"] or default_dt(k, L)
    amp, nu = cfg["linear.source_amplitude"], cfg["linear.source_nu"]
    if cfg["linear.source"] == "gevrey":
        def source(t):
            return amp * np.exp(-bracket(k, k * np.asarray(t) / L) ** nu) + 0j
    elif cfg["linear.source"] == "zero":
        def source(t):
            return np.zeros_like(np.asarray(t, dtype=float)) + 0j
    else:
        raise ParameterError("linear.source must be 'gevrey' or 'zero'")
    prob = VolterraProblem(k, source, lambda t: kernel_L(bg, w, torus, t, k), dt, cfg["linear.t_max"])
    traj = solve(prob)
    outputs = [_write(out_dir, "trajectory.csv", traj.to_csv())]
    end = cfg["linear.fit_end"] or cfg["linear.t_max"]
    fit = fit_stretched_exponential(traj, (cfg["linear.fit_start"], end))
    outputs.append(_write(out_dir, "decay_fit.json", fit.to_json()))
    return 0, outputs, {"nu_fit": fit.nu_fit, "no_decay": fit.no_decay}


def cmd_simulate(cfg: dict, out_dir: Path):
    sim = build_sim_config(cfg)
    pert = [Perturbation(cfg["sim.mode"], 1.0, _profile(cfg))]
    ckpt = out_dir / "checkpoint.bin" if cfg["sim.checkpoint"] else None
    try:
        series = run(sim, pert, checkpoint=ckpt)
    except DivergenceError as exc:
        name = _write(out_dir, "divergence.json", _json({"time": exc.time, "message": str(exc)}))
        exc.outputs = [name]
        raise
    outputs = [_write(out_dir, "diagnostics.csv", series.to_csv())]
    if ckpt is not None:
        outputs.append(ckpt.name)
    rel = float(np.max(series.mass_resid)) / series.initial_norm if series.initial_norm else 0.0
    return 0, outputs, {"steps": series.steps, "mass_resid_rel": rel,
                        "truncation": series.truncation}


def cmd_echo(cfg: dict, out_dir: Path):
    sim = build_sim_config(cfg, t_max=cfg["echo.t_max"], K=cfg["echo.K"])
    rep, full, signal = echo_experiment(sim, cfg["echo.k1"], cfg["echo.k2"], cfg["echo.tau"],
                                        _profile(cfg))
    probe = full.rho_mode(rep.probe_mode)
    outputs = [
        _write(out_dir, "echo.json", rep.to_json()),
        _write(out_dir, "echo_signal.csv",
               _csv_text(["t", "nonlinear_abs", "rho_abs"], zip(full.times, signal, np.abs(probe)))),
    ]
    ok = (not rep.no_echo) and rep.relative_timing_error <= ECHO_TOLERANCE
    return (0 if ok else 1), outputs, {"t_peak": rep.t_peak, "no_echo": rep.no_echo}


def cmd_selftest(cfg: dict, out_dir: Path):
    results = run_property_suites(cfg["run.seed"])
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    ok = all(r.passed for r in results)
    name = _write(out_dir, "selftest.json", _json([r.__dict__ for r in results]))
    return (0 if ok else 1), [name], {"pass": ok}


COMMANDS = {
    "alpha-hat": cmd_alpha_hat,
    "kernel": cmd_kernel,
    "laplace": cmd_laplace,
    "stability": cmd_stability,
    "critical-size": cmd_critical_size,
    "linear-evolve": cmd_linear_evolve,
    "simulate": cmd_simulate,
    "echo": cmd_echo,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rvp-landau", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat 'namespace.key = value' configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, help="seed for sampled checks (run.seed)")
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    p.add_argument("--eta-max", type=float, help="alias for alpha_hat.eta_max")
    p.add_argument("--n", type=int, help="alias for alpha_hat.n")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.eta_max is not None:
        overrides.append(f"alpha_hat.eta_max={args.eta_max!r}")
    if args.n is not None:
        overrides.append(f"alpha_hat.n={args.n}")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    try:
        cfg = resolve_config(args.config, overrides)
        out_dir.mkdir(parents=True, exist_ok=True)
        fn = COMMANDS[args.command]
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            if args.command == "stability":
                code, outputs, status = fn(cfg, out_dir, threads=args.threads)
            else:
                code, outputs, status = fn(cfg, out_dir)
        _write_manifest(out_dir, args.command, cfg, outputs, status)
        return code
    except RVPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if out_dir.is_dir() and "cfg" in locals():
            status = {"error": type(exc).__name__, "message": str(exc)}
            if isinstance(exc, DivergenceError):
                status["divergence_time"] = exc.time
            _write_manifest(out_dir, args.command, cfg, getattr(exc, "outputs", []), status)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
