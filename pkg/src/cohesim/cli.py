"""Command-line interface.

Subcommands::

    cohesim simulate --config FILE [--tau X] [--eps X] [--damage] --out DIR
    cohesim verify --trajectory DIR [--competitors N] [--seed S]
    cohesim study --config FILE --ladder {tau,eps} --out DIR
    cohesim law dump --config FILE --grid N [--out DIR]

Exit codes: 0 success, 1 certification failure, 2 invalid configuration,
3 step failure (partial outputs are kept), 4 missing snapshots.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import ConfigError, StateCorruptionError, StepFailureError
from .outputs import (MissingSnapshotsError, load_trajectory, write_law_grids,
                      write_report, write_report_text, write_run)
from .runconfig import build_problem, load_config, normalize_config, resolve_config
from .solver import SolverConfig, eps_continuation, evolve, evolve_damage
from .verify import certify

EXIT_OK, EXIT_CERT, EXIT_CONFIG, EXIT_STEP, EXIT_SNAPSHOTS = 0, 1, 2, 3, 4


def _build(args):
    raw = load_config(args.config)
    if args.tau is not None:
        raw.setdefault("solver", {})["tau"] = args.tau
    if args.eps is not None:
        raw.setdefault("solver", {})["eps"] = args.eps
    cfg = normalize_config(raw)
    override = True if getattr(args, "damage", False) else None
    problem, solver_cfg, damage_on = build_problem(cfg, damage_override=override)
    return cfg, problem, solver_cfg, damage_on


def cmd_simulate(args) -> int:
    cfg, problem, solver_cfg, damage_on = _build(args)
    resolved = resolve_config(cfg, problem, solver_cfg, damage_on)
    if not resolved["derived"]["certified"]:
        print("warning: convexity hypothesis violated; trajectory will be "
              "flagged non-certified", file=sys.stderr)
    try:
        traj = evolve_damage(problem, solver_cfg) if damage_on \
            else evolve(problem, solver_cfg)
    except StepFailureError as exc:
        print(f"step failure: {exc}", file=sys.stderr)
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "failure.json"), "w") as fh:
            json.dump({"error": str(exc), "diagnostics": exc.diagnostics},
                      fh, indent=2, sort_keys=True, default=float)
        return EXIT_STEP
    report = certify(traj, seed=cfg["seed"], competitors=args.competitors)
    write_run(args.out, traj, resolved, report.to_dict(),
              snapshot_every=cfg["output"]["snapshot_every"])
    print(f"run written to {args.out} "
          f"({'PASS' if report.passed else 'FAIL'})")
    return EXIT_OK if report.passed else EXIT_CERT


def cmd_verify(args) -> int:
    traj = load_trajectory(args.trajectory)
    report = certify(traj, seed=args.seed, competitors=args.competitors)
    d = report.to_dict()
    write_report(os.path.join(args.trajectory, "report.json"), d)
    write_report_text(os.path.join(args.trajectory, "report.txt"), d)
    for key in sorted(report.summary):
        print(f"{key:24s} {report.summary[key]}")
    print("PASS" if report.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_CERT


def _fit_rate(xs, ys):
    xs, ys = np.log(np.asarray(xs)), np.log(np.maximum(np.asarray(ys), 1e-300))
    return float(np.polyfit(xs, ys, 1)[0])


def cmd_study(args) -> int:
    cfg, problem, solver_cfg, damage_on = _build(args)
    os.makedirs(args.out, exist_ok=True)
    run = evolve_damage if damage_on else evolve
    rows, summary = [], {}
    if args.ladder == "tau":
        taus = [solver_cfg.tau * 2, solver_cfg.tau, solver_cfg.tau / 2]
        from dataclasses import replace
        from .verify import check_energy_balance
        from .fem import holder_seminorm, interior_node_ids
        interior = interior_node_ids(problem.space.mesh)
        drifts, drifts_rule = [], []
        for tau in taus:
            traj = run(problem, replace(solver_cfg, tau=tau))
            eb = check_energy_balance(traj)
            last = traj.states[-1]
            hold_g = holder_seminorm(last.gamma, 0.5, interior)
            hold_u = holder_seminorm(last.u[0], 0.5, interior)
            drifts.append(np.max(np.abs(eb["drift"])))
            drifts_rule.append(np.max(np.abs(eb["drift_work_rule"])))
            rows.append({"tau": tau, "max_drift": drifts[-1],
                         "max_drift_work_rule": drifts_rule[-1],
                         "holder_gamma_T": hold_g, "holder_u1_T": hold_u})
        summary["drift_rate"] = _fit_rate(taus, drifts)
        summary["drift_rate_work_rule"] = _fit_rate(taus, drifts_rule)
        hg = [r["holder_gamma_T"] for r in rows]
        summary["holder_gamma_spread"] = (max(hg) - min(hg)) / max(max(hg), 1e-300)
    else:
        ladder = [solver_cfg.eps, solver_cfg.eps / 3, solver_cfg.eps / 9]
        out = eps_continuation(problem, solver_cfg, ladder)
        diffs = out["h1_diffs"]
        gaps = out["f_minus_feps"]
        for i, eps in enumerate(ladder):
            rows.append({
                "eps": eps,
                "max_f_gap": float(np.max(gaps[i])),
                "h1_diff_to_next": float(np.max(diffs[i])) if i < len(diffs) else "",
            })
        per_step_decreasing = bool(np.all(
            (diffs[1] < diffs[0]) | (diffs[0] <= 1e-12)))
        summary["per_step_h1_decreasing"] = per_step_decreasing
    path = os.path.join(args.out, f"study_{args.ladder}.csv")
    import csv as _csv
    with open(path, "w", newline="") as fh:
        wr = _csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        wr.writerows(rows)
    with open(os.path.join(args.out, f"study_{args.ladder}.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
    for k in sorted(summary):
        print(f"{k:28s} {summary[k]}")
    return EXIT_OK


def cmd_law_dump(args) -> int:
    raw = load_config(args.config)
    cfg = normalize_config(raw)
    problem, solver_cfg, _ = build_problem(cfg)
    paths = write_law_grids(args.out, problem.law, solver_cfg.eps, args.grid)
    for name, p in sorted(paths.items()):
        print(f"wrote {p}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cohesim",
        description="Two-plate cohesive-slip simulator and verifier")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run an evolution")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--tau", type=float, default=None)
    p_sim.add_argument("--eps", type=float, default=None)
    p_sim.add_argument("--damage", action="store_true",
                       help="enable the damage model")
    p_sim.add_argument("--competitors", type=int, default=20,
                       help="stability competitors per step in the report")
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_ver = sub.add_parser("verify", help="re-certify a stored run")
    p_ver.add_argument("--trajectory", required=True)
    p_ver.add_argument("--competitors", type=int, default=100)
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.set_defaults(func=cmd_verify)

    p_st = sub.add_parser("study", help="tau or eps refinement ladder")
    p_st.add_argument("--config", required=True)
    p_st.add_argument("--ladder", choices=("tau", "eps"), required=True)
    p_st.add_argument("--tau", type=float, default=None)
    p_st.add_argument("--eps", type=float, default=None)
    p_st.add_argument("--out", required=True)
    p_st.set_defaults(func=cmd_study)

    p_law = sub.add_parser("law", help="cohesive-law utilities")
    law_sub = p_law.add_subparsers(dest="law_command", required=True)
    p_dump = law_sub.add_parser("dump", help="tabulate the densities to CSV")
    p_dump.add_argument("--config", required=True)
    p_dump.add_argument("--grid", type=int, default=101)
    p_dump.add_argument("--out", default="law_grids")
    p_dump.set_defaults(func=cmd_law_dump)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingSnapshotsError as exc:
        print(f"missing snapshots: {exc}", file=sys.stderr)
        return EXIT_SNAPSHOTS
    except StateCorruptionError as exc:
        print(f"state corruption: {exc}", file=sys.stderr)
        return EXIT_CERT
    except StepFailureError as exc:
        print(f"step failure: {exc}", file=sys.stderr)
        return EXIT_STEP


if __name__ == "__main__":
    sys.exit(main())
