import csv
import json
import os
import shutil

import numpy as np
import pytest

from cohesim.cli import main
from cohesim.runconfig import (build_problem, build_problem_from_resolved,
                               load_config, normalize_config, resolve_config)
from cohesim.errors import ConfigError

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")


def write_cfg(tmp_path, name="cfg.json", **updates):
    cfg = {
        "mesh": {"dim": 1, "divisions": 6, "dirichlet_sides": ["left", "right"]},
        "materials": [
            {"lame_lambda": 0.0, "lame_mu": 1.0, "mu_grad": [0.8]},
            {"lame_lambda": 0.0, "lame_mu": 1.8, "mu_grad": [-0.8]},
        ],
        "law": {"kind": "exponential", "kappa": 1.0, "rho": 0.7},
        "loading": {"profile": "ramp", "T": 1.0,
                    "g": {"kind": "stretch", "axis": 0, "amplitude": 1.0,
                          "center": 0.0}},
        "solver": {"tau": 0.125, "eps": 0.05},
        "seed": 1,
    }
    for key, val in updates.items():
        cfg[key] = val
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_simulate_minimal_zero_load(tmp_path):
    cfg = write_cfg(tmp_path, loading={
        "profile": "ramp", "T": 1.0,
        "g": {"kind": "translate", "vector": [0.0]}})
    out = str(tmp_path / "run")
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    rows = list(csv.DictReader(open(os.path.join(out, "timeseries.csv"))))
    assert len(rows) == 9
    assert all(float(r["total"]) == 0.0 for r in rows)
    assert all(float(r["work"]) == 0.0 for r in rows)
    for name in ("report.json", "report.txt", "config_resolved.json",
                 "fields/step_0000.csv", "fields/step_0008.vtk",
                 "plots/slip_traction.csv"):
        assert os.path.exists(os.path.join(out, name))


def test_simulate_and_verify_roundtrip(tmp_path):
    cfg = write_cfg(tmp_path)
    out = str(tmp_path / "run")
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    assert main(["verify", "--trajectory", out, "--competitors", "10",
                 "--seed", "3"]) == 0
    rep1 = open(os.path.join(out, "report.json"), "rb").read()
    assert main(["verify", "--trajectory", out, "--competitors", "10",
                 "--seed", "3"]) == 0
    rep2 = open(os.path.join(out, "report.json"), "rb").read()
    assert rep1 == rep2                      # byte-identical regeneration
    report = json.loads(rep1)
    assert report["summary"]["history_pass"]
    assert report["seed"] == 3


def test_tau_override_halves_drift(tmp_path):
    cfg = write_cfg(tmp_path)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["simulate", "--config", cfg, "--out", out1]) == 0
    assert main(["simulate", "--config", cfg, "--tau", "0.0625",
                 "--out", out2]) == 0
    def max_drift(d):
        rep = json.load(open(os.path.join(d, "report.json")))
        return max(abs(s["drift_work_rule"]) for s in rep["steps"])
    assert max_drift(out1) / max_drift(out2) >= 1.8


def test_verify_detects_corrupted_gamma(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = str(tmp_path / "run")
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    snap = os.path.join(out, "fields", "step_0008.csv")
    rows = list(csv.DictReader(open(snap)))
    rows[3]["gamma"] = "-0.5"
    with open(snap, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        wr.writerows(rows)
    code = main(["verify", "--trajectory", out])
    assert code == 1
    assert "state corruption" in capsys.readouterr().err


def test_verify_missing_snapshot_exits_4(tmp_path):
    cfg = write_cfg(tmp_path)
    out = str(tmp_path / "run")
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    os.remove(os.path.join(out, "fields", "step_0004.csv"))
    assert main(["verify", "--trajectory", out]) == 4


def test_verify_rejects_sparse_snapshot_cadence(tmp_path):
    cfg = write_cfg(tmp_path, output={"snapshot_every": 4})
    out = str(tmp_path / "run")
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    assert main(["verify", "--trajectory", out]) == 4


def test_invalid_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({
        "mesh": {"dim": 3, "divisions": 2, "dirichlet_sides": []},
        "materials": [{"lame_mu": -1.0}],
        "law": {"kind": "weird"},
        "loading": {"T": -2},
    }))
    assert main(["simulate", "--config", str(bad), "--out",
                 str(tmp_path / "x")]) == 2
    err = capsys.readouterr().err
    for fragment in ("mesh.dim", "dirichlet_sides", "law.kind", "loading.T",
                     "materials must list exactly two"):
        assert fragment in err
    notjson = tmp_path / "notjson.json"
    notjson.write_text("{oops")
    assert main(["simulate", "--config", str(notjson), "--out",
                 str(tmp_path / "y")]) == 2


def test_tau_not_dividing_horizon_exits_2(tmp_path):
    cfg = write_cfg(tmp_path, solver={"tau": 0.3, "eps": 0.05})
    assert main(["simulate", "--config", cfg, "--out",
                 str(tmp_path / "z")]) == 2


def test_study_tau(tmp_path):
    cfg = write_cfg(tmp_path)
    out = str(tmp_path / "study")
    assert main(["study", "--config", cfg, "--ladder", "tau",
                 "--out", out]) == 0
    summary = json.load(open(os.path.join(out, "study_tau.json")))
    assert summary["drift_rate"] >= 0.9
    assert summary["drift_rate_work_rule"] >= 0.9
    rows = list(csv.DictReader(open(os.path.join(out, "study_tau.csv"))))
    assert len(rows) == 3


def test_study_eps(tmp_path):
    cfg = write_cfg(tmp_path)
    out = str(tmp_path / "study")
    assert main(["study", "--config", cfg, "--ladder", "eps",
                 "--out", out]) == 0
    summary = json.load(open(os.path.join(out, "study_eps.json")))
    assert summary["per_step_h1_decreasing"] is True


def test_law_dump(tmp_path):
    cfg = write_cfg(tmp_path)
    out = str(tmp_path / "grids")
    assert main(["law", "dump", "--config", cfg, "--grid", "41",
                 "--out", out]) == 0
    from cohesim.laws import CohesiveLaw, psi, phi_eps_gap_bound, RegularizedLaw
    law = CohesiveLaw("exponential", kappa=1.0, rho=0.7)

    def load(name):
        rows = list(csv.DictReader(open(os.path.join(out, name))))
        n = int(np.sqrt(len(rows)))
        grid = np.array([float(r["value"]) for r in rows]).reshape(n, n)
        ys = np.array([float(r["y"]) for r in rows]).reshape(n, n)[:, 0]
        return ys, grid

    ys, P = load("phi.csv")
    # diagonal equals the loading function
    assert np.allclose(np.diag(P), psi(law, ys), atol=1e-15)
    # monotone in both slots
    assert np.all(np.diff(P, axis=0) >= -1e-14)
    assert np.all(np.diff(P, axis=1) >= -1e-14)
    _, PE = load("phi_eps.csv")
    assert np.max(np.abs(PE - P)) <= phi_eps_gap_bound(RegularizedLaw(law, 0.05))
    _, D = load("dphi_dy.csv")
    assert np.all(D >= 0) and np.all(D <= law.slope0 + 1e-14)


def test_resolved_config_round_trip(tmp_path):
    cfg_path = write_cfg(tmp_path)
    cfg = normalize_config(load_config(cfg_path))
    problem, solver_cfg, damage_on = build_problem(cfg)
    resolved = resolve_config(cfg, problem, solver_cfg, damage_on)
    problem2, solver_cfg2, damage2 = build_problem_from_resolved(resolved)
    resolved2 = resolve_config(
        {k: v for k, v in resolved.items() if k != "derived"},
        problem2, solver_cfg2, damage2)
    assert json.dumps(resolved, sort_keys=True) \
        == json.dumps(resolved2, sort_keys=True)


def test_bundled_fixture_configs_are_valid():
    for name in ("fixture2d.json", "cycle2d.json", "damage2d.json",
                 "minimal1d.json"):
        cfg = normalize_config(load_config(os.path.join(CONFIGS, name)))
        problem, solver_cfg, _ = build_problem(cfg)
        n = problem.program.T / solver_cfg.tau
        assert abs(n - round(n)) < 1e-9


def test_simulate_damage_flag(tmp_path):
    cfg = write_cfg(tmp_path, damage={
        "enabled": True, "w_coeffs": [0.05, 0.05], "r": 2.0, "eta": 1e-3,
        "alpha0": 0.0})
    out = str(tmp_path / "dmg")
    assert main(["simulate", "--config", cfg, "--damage", "--out", out]) == 0
    rows = list(csv.DictReader(open(os.path.join(out, "fields",
                                                 "step_0008.csv"))))
    assert "alpha1" in rows[0] and "alpha2" in rows[0]
    resolved = json.load(open(os.path.join(out, "config_resolved.json")))
    assert resolved["damage"]["enabled"] is True
    # verify reloads the damage run
    assert main(["verify", "--trajectory", out, "--competitors", "5"]) == 0
