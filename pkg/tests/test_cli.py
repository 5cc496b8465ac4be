from __future__ import annotations

import json

import pytest

from rvp_landau.cli import DEFAULTS, main, parse_config_text
from rvp_landau.errors import ParameterError

SMALL_SIM = ["--set", "sim.K=2", "--set", "sim.n_v1=32", "--set", "sim.n_w=16",
             "--set", "sim.t_max=1.0", "--set", "sim.out_dt=0.1", "--set", "sim.diag_every=0.5"]


def manifest(out):
    return json.loads((out / "manifest.json").read_text(encoding="utf-8"))


def test_parse_config_text():
    cfg = parse_config_text("# comment\ntorus.L = 0.6\nlaplace.z = [[1, 2]]\nsim.linearized = true\n")
    assert cfg == {"torus.L": 0.6, "laplace.z": [[1, 2]], "sim.linearized": True}
    with pytest.raises(ParameterError):
        parse_config_text("no.such_key = 1\n")
    with pytest.raises(ParameterError):
        parse_config_text("torus.L = abc\n")


def test_alpha_hat_command(tmp_path):
    assert main(["alpha-hat", "--out", str(tmp_path), "--n", "64"]) == 0
    lines = (tmp_path / "alpha_hat.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "eta,alpha_hat,bound" and len(lines) == 65
    m = manifest(tmp_path)
    assert m["command"] == "alpha-hat" and m["config"]["alpha_hat.n"] == 64
    assert set(m["config"]) == set(DEFAULTS)


def test_degenerate_range_exits_2(tmp_path):
    assert main(["alpha-hat", "--out", str(tmp_path), "--eta-max", "0"]) == 2
    assert "error" in manifest(tmp_path)["status"]


def test_unknown_key_exits_2(tmp_path):
    assert main(["kernel", "--out", str(tmp_path), "--set", "torus.size=1"]) == 2


def test_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("kernel_eval.n = 11\ntorus.L = 0.5\n", encoding="utf-8")
    out = tmp_path / "o"
    assert main(["kernel", "--config", str(cfg), "--out", str(out)]) == 0
    rows = (out / "kernel.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "t,L" and len(rows) == 12


def test_missing_config_file(tmp_path):
    assert main(["kernel", "--config", str(tmp_path / "none.cfg"), "--out", str(tmp_path)]) == 2


def test_laplace_command(tmp_path):
    assert main(["laplace", "--out", str(tmp_path), "--set", "laplace.z=[[0, 0], [1, 0.5]]"]) == 0
    rows = (tmp_path / "laplace.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "z_re,z_im,re,im"
    assert float(rows[1].split(",")[2]) == pytest.approx(-1.25, abs=1e-10)


def test_stability_command(tmp_path):
    args = ["stability", "--out", str(tmp_path), "--set", "stability.d_re=0.05",
            "--set", "stability.d_im=0.05", "--set", "stability.r_max=3.0", "--threads", "2"]
    assert main(args) == 0
    rep = json.loads((tmp_path / "stability.json").read_text(encoding="utf-8"))
    assert rep["pass"] is True and rep["kappa_min"] == pytest.approx(0.466, abs=2e-3)


def test_stability_gravity_fails(tmp_path):
    args = ["stability", "--out", str(tmp_path), "--set", "kernel.model='gravity'",
            "--set", "torus.L=0.7", "--set", "stability.d_re=0.05", "--set", "stability.d_im=0.05",
            "--set", "stability.r_max=3.0"]
    assert main(args) == 1


def test_critical_size_command(tmp_path):
    assert main(["critical-size", "--out", str(tmp_path)]) == 0
    m = manifest(tmp_path)
    assert 0.93 <= m["status"]["min_L_max"] <= 1.03


def test_linear_evolve_command(tmp_path):
    assert main(["linear-evolve", "--out", str(tmp_path), "--set", "linear.t_max=30"]) == 0
    fit = json.loads((tmp_path / "decay_fit.json").read_text(encoding="utf-8"))
    assert 0 < fit["nu_fit"] < 1
    assert (tmp_path / "trajectory.csv").read_text(encoding="utf-8").startswith("t,re,im,abs\n")


def test_linear_evolve_window_error(tmp_path):
    args = ["linear-evolve", "--out", str(tmp_path), "--set", "linear.t_max=6",
            "--set", "linear.fit_start=5.9"]
    assert main(args) == 4


@pytest.mark.filterwarnings("ignore::rvp_landau.errors.TruncationWarning")
def test_simulate_command(tmp_path):
    assert main(["simulate", "--out", str(tmp_path), "--set", "sim.checkpoint=true"] + SMALL_SIM) == 0
    head = (tmp_path / "diagnostics.csv").read_text(encoding="utf-8").splitlines()[0]
    assert head == ("t,mass_resid,rho_abs_k1,rho_abs_k2,gevrey_l0.1_s0_n0.5,"
                    "bootstrap1,bootstrap2,bootstrap3,ratio_m0")
    assert (tmp_path / "checkpoint.bin").read_bytes()[:8] == b"RVPSIM01"
    assert manifest(tmp_path)["status"]["mass_resid_rel"] < 1e-10


@pytest.mark.filterwarnings("ignore::rvp_landau.errors.TruncationWarning")
def test_simulate_divergence_exits_5(tmp_path):
    args = ["simulate", "--out", str(tmp_path), "--set", "kernel.model='gravity'",
            "--set", "sim.L=1.5", "--set", "sim.linearized=true"] + SMALL_SIM + [
        "--set", "sim.t_max=30"]
    assert main(args) == 5
    div = json.loads((tmp_path / "divergence.json").read_text(encoding="utf-8"))
    assert 0 < div["time"] < 30
    assert manifest(tmp_path)["status"]["error"] == "DivergenceError"


def test_selftest_command(tmp_path, capsys):
    assert main(["selftest", "--out", str(tmp_path), "--seed", "1"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 5 and all(line.startswith("PASS") for line in out)


def test_deterministic_outputs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["kernel", "--out", str(d), "--set", "kernel_eval.n=21"]) == 0
    assert (a / "kernel.csv").read_bytes() == (b / "kernel.csv").read_bytes()
    assert manifest(a)["content_hash"] == manifest(b)["content_hash"]


def test_bad_threads(tmp_path):
    assert main(["kernel", "--out", str(tmp_path), "--threads", "0"]) == 2
