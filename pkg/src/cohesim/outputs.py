"""Run-directory persistence: time series, field snapshots, reports.

Layout of a run directory::

    timeseries.csv          one row per time step (RFC-4180)
    fields/step_0000.csv    nodal fields, full float precision
    fields/step_0000.vtk    legacy-ASCII VTK unstructured grid
    plots/slip_traction.csv slip/traction series at the tracked point
    report.json             certification report (sorted keys)
    config_resolved.json    config + derived constants + seed

Floats are written with %.17g so nodal values round-trip exactly; reports
regenerated from the same (trajectory, seed) are byte-identical.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from . import laws
from .energies import EnergyBreakdown
from .errors import StateCorruptionError
from .fem import FEField
from .laws import RegularizedLaw
from .solver import SystemState, Trajectory, nodal_slip

__all__ = [
    "write_run", "write_report", "write_timeseries", "write_fields_csv",
    "write_fields_vtk", "load_trajectory", "write_law_grids",
    "MissingSnapshotsError", "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1


class MissingSnapshotsError(RuntimeError):
    """Run directory lacks the per-step snapshots a check needs (exit 4)."""


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


# ----------------------------------------------------------------------
# Time series.
# ----------------------------------------------------------------------

_TS_FLOAT_COLS = [
    "time", "elastic_1", "elastic_2", "cohesive", "cohesive_reg",
    "damage_internal", "damage_gradient", "total", "total_reg", "work",
    "remainder_bound", "gamma_max", "slip_max",
]


def write_timeseries(path: str, traj: Trajectory) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k"] + _TS_FLOAT_COLS + ["newton_iters", "flags"])
        for st, rem in zip(traj.states, traj.remainder_bound):
            e = st.energies
            slip = nodal_slip(st.u[0], st.u[1], traj.problem.scalar_space)
            row = [st.k] + [_fmt(v) for v in (
                st.t, e.elastic_1, e.elastic_2, e.cohesive,
                e.cohesive_reg if e.cohesive_reg is not None else e.cohesive,
                e.damage_internal, e.damage_gradient, e.total, e.total_reg,
                e.work_accumulated, rem,
                np.max(st.gamma.values), np.max(slip.values),
            )] + [st.newton_iters, ";".join(st.flags)]
            wr.writerow(row)


def read_timeseries(path: str) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ----------------------------------------------------------------------
# Field snapshots.
# ----------------------------------------------------------------------

def _field_columns(space, damage: bool):
    dim = space.mesh.dim
    cols = ["node"] + ["xy"[d] for d in range(dim)]
    for layer in (1, 2):
        cols += [f"u{layer}{'xy'[c]}" for c in range(dim)]
    cols.append("gamma")
    if damage:
        cols += ["alpha1", "alpha2"]
    return cols


def write_fields_csv(path: str, state: SystemState) -> None:
    space = state.u[0].space
    dim = space.mesh.dim
    damage = state.alpha is not None
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(_field_columns(space, damage))
        u1 = state.u[0].values.reshape(space.n_nodes, dim)
        u2 = state.u[1].values.reshape(space.n_nodes, dim)
        for i in range(space.n_nodes):
            row = [i] + [_fmt(c) for c in space.mesh.vertices[i]]
            row += [_fmt(c) for c in u1[i]] + [_fmt(c) for c in u2[i]]
            row.append(_fmt(state.gamma.values[i]))
            if damage:
                row += [_fmt(state.alpha[0].values[i]),
                        _fmt(state.alpha[1].values[i])]
            wr.writerow(row)


def write_fields_vtk(path: str, state: SystemState) -> None:
    """Legacy-ASCII VTK unstructured grid with point data."""
    space = state.u[0].space
    mesh = space.mesh
    dim = mesh.dim
    nv = mesh.cells.shape[1]
    cell_type = 3 if dim == 1 else 5          # VTK_LINE / VTK_TRIANGLE
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("cohesive slip state\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        for p in mesh.vertices:
            coords = list(p) + [0.0] * (3 - dim)
            fh.write(" ".join(_fmt(c) for c in coords) + "\n")
        fh.write(f"CELLS {mesh.n_cells} {mesh.n_cells * (nv + 1)}\n")
        for c in mesh.cells:
            fh.write(f"{nv} " + " ".join(str(i) for i in c) + "\n")
        fh.write(f"CELL_TYPES {mesh.n_cells}\n")
        for _ in range(mesh.n_cells):
            fh.write(f"{cell_type}\n")
        fh.write(f"POINT_DATA {mesh.n_nodes}\n")
        for name, f in (("u1", state.u[0]), ("u2", state.u[1])):
            fh.write(f"VECTORS {name} double\n")
            vals = f.values.reshape(mesh.n_nodes, dim)
            for v in vals:
                coords = list(v) + [0.0] * (3 - dim)
                fh.write(" ".join(_fmt(c) for c in coords) + "\n")
        scalars = [("gamma", state.gamma)]
        if state.alpha is not None:
            scalars += [("alpha1", state.alpha[0]), ("alpha2", state.alpha[1])]
        for name, f in scalars:
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in f.values:
                fh.write(_fmt(v) + "\n")


# ----------------------------------------------------------------------
# Hysteresis plot data.
# ----------------------------------------------------------------------

def write_slip_traction(path: str, traj: Trajectory) -> None:
    """Slip/traction series at the quadrature point with the largest
    final history slip (the hysteresis probe)."""
    prob = traj.problem
    reg = RegularizedLaw(prob.law, traj.config.eps)
    last = traj.states[-1]
    gq = last.gamma.at_quad()
    m, q = np.unravel_index(int(np.argmax(gq)), gq.shape)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "time", "schedule", "slip", "gamma",
                     "traction", "traction_envelope"])
        for st in traj.states:
            d = st.u[0].at_quad() - st.u[1].at_quad()
            mag = float(np.linalg.norm(d[m, q]))
            g = float(st.gamma.at_quad()[m, q])
            tr = float(laws.dphi_eps_dy(reg, mag, max(g, 0.0)))
            env = float(laws.dpsi(prob.law, mag))
            wr.writerow([st.k, _fmt(st.t), _fmt(prob.program.s(st.t)),
                         _fmt(mag), _fmt(g), _fmt(tr), _fmt(env)])


_GNUPLOT = """set datafile separator ','
set key autotitle columnhead
set xlabel 'slip'
set ylabel 'traction'
plot 'plots/slip_traction.csv' using 4:6 with linespoints, \\
     '' using 4:7 with lines
"""


# ----------------------------------------------------------------------
# Reports and whole runs.
# ----------------------------------------------------------------------

def report_bytes(report_dict: dict) -> bytes:
    return (json.dumps(report_dict, indent=2, sort_keys=True) + "\n").encode()


def write_report(path: str, report_dict: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(report_bytes(report_dict))


def write_report_text(path: str, report_dict: dict) -> None:
    s = report_dict["summary"]
    lines = ["certification summary", "---------------------"]
    for key in sorted(s):
        lines.append(f"{key:24s} {s[key]}")
    lines.append("")
    lines.append("PASS" if all(v for k, v in s.items() if k.endswith("_pass"))
                 else "FAIL")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_run(out_dir: str, traj: Trajectory, resolved_config: dict,
              report_dict: dict | None = None, snapshot_every: int = 1) -> None:
    os.makedirs(out_dir, exist_ok=True)
    fields_dir = os.path.join(out_dir, "fields")
    plots_dir = os.path.join(out_dir, "plots")
    os.makedirs(fields_dir, exist_ok=True)
    os.makedirs(plots_dir, exist_ok=True)
    write_timeseries(os.path.join(out_dir, "timeseries.csv"), traj)
    for st in traj.states:
        if st.k % snapshot_every == 0 or st.k == traj.n_steps:
            base = os.path.join(fields_dir, f"step_{st.k:04d}")
            write_fields_csv(base + ".csv", st)
            write_fields_vtk(base + ".vtk", st)
    write_slip_traction(os.path.join(plots_dir, "slip_traction.csv"), traj)
    if os.environ.get("PLOTS") == "1":
        with open(os.path.join(plots_dir, "slip_traction.gp"), "w") as fh:
            fh.write(_GNUPLOT)
    with open(os.path.join(out_dir, "config_resolved.json"), "wb") as fh:
        fh.write(report_bytes(resolved_config))
    if report_dict is not None:
        write_report(os.path.join(out_dir, "report.json"), report_dict)
        write_report_text(os.path.join(out_dir, "report.txt"), report_dict)


# ----------------------------------------------------------------------
# Reload.
# ----------------------------------------------------------------------

def load_trajectory(run_dir: str):
    """Rebuild a Trajectory from a run directory.

    Energies, accumulated work and remainder bounds are recomputed from the
    stored nodal fields with the same quadratures the solver used, so a
    reloaded trajectory certifies identically to the in-memory one.
    """
    from .runconfig import build_problem_from_resolved

    cfg_path = os.path.join(run_dir, "config_resolved.json")
    if not os.path.exists(cfg_path):
        raise MissingSnapshotsError(f"no config_resolved.json in {run_dir}")
    with open(cfg_path) as fh:
        resolved = json.load(fh)
    if resolved.get("output", {}).get("snapshot_every", 1) != 1:
        raise MissingSnapshotsError(
            "history-slip verification needs snapshot cadence 1")
    problem, solver_cfg, damage_on = build_problem_from_resolved(resolved)
    from .energies import work_increment, elastic_inner
    from .solver import _breakdown, SystemState, Trajectory

    reg = RegularizedLaw(problem.law, solver_cfg.eps)
    n = round(problem.program.T / solver_cfg.tau)
    fields_dir = os.path.join(run_dir, "fields")
    ts = read_timeseries(os.path.join(run_dir, "timeseries.csv"))
    if len(ts) != n + 1:
        raise MissingSnapshotsError(
            f"timeseries has {len(ts)} rows, expected {n + 1}")
    space, sspace = problem.space, problem.scalar_space
    dim = space.mesh.dim
    states, remainder = [], []
    work, r_accum = 0.0, 0.0
    prev = None
    for k in range(n + 1):
        path = os.path.join(fields_dir, f"step_{k:04d}.csv")
        if not os.path.exists(path):
            raise MissingSnapshotsError(f"missing snapshot {path}")
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) != space.n_nodes:
            raise StateCorruptionError(f"snapshot {path} has wrong node count")
        def col(name):
            return np.array([float(r[name]) for r in rows])
        u_vals = []
        for layer in (1, 2):
            comps = np.stack([col(f"u{layer}{'xy'[c]}") for c in range(dim)],
                             axis=1)
            u_vals.append(comps if space.ncomp > 1 else comps.ravel())
        u = (FEField(space, u_vals[0]), FEField(space, u_vals[1]))
        gamma = FEField(sspace, col("gamma"))
        if np.any(gamma.values < 0):
            raise StateCorruptionError("stored history slip has negative values")
        alphas = None
        if damage_on:
            alphas = (FEField(sspace, col("alpha1")),
                      FEField(sspace, col("alpha2")))
        t_k = k * solver_cfg.tau
        if prev is not None:
            work += work_increment(prev.u[0], prev.u[1], problem.tensors,
                                   problem.program, prev.t, t_k,
                                   alphas=prev.alpha)
            ds = problem.program.s(t_k) - problem.program.s(prev.t)
            qg = sum(elastic_inner(problem.program.g, problem.program.g, tt, aa)
                     for tt, aa in zip(problem.tensors,
                                       prev.alpha or (None, None)))
            r_accum += 0.5 * ds * ds * qg
        remainder.append(r_accum)
        bd = _breakdown(problem, reg, u[0], u[1], gamma, alphas,
                        problem.damage, work)
        flags = tuple(f for f in ts[k]["flags"].split(";") if f)
        st = SystemState(k, t_k, u, gamma, alphas, bd,
                         int(ts[k]["newton_iters"]), flags)
        states.append(st)
        prev = st
    certified = bool(resolved["derived"]["certified"])
    return Trajectory(problem, solver_cfg, states, certified, remainder)


# ----------------------------------------------------------------------
# Law grid dumps.
# ----------------------------------------------------------------------

def write_law_grids(out_dir: str, law, eps: float, grid: int,
                    y_max: float | None = None, z_max: float | None = None):
    """CSV grids of phi, phi_eps and d_y phi on [0,y_max] x [0,z_max]."""
    os.makedirs(out_dir, exist_ok=True)
    reg = RegularizedLaw(law, eps)
    y_max = 3.0 * law.curvature_scale if y_max is None else y_max
    z_max = 3.0 * law.curvature_scale if z_max is None else z_max
    ys = np.linspace(0.0, y_max, grid)
    zs = np.linspace(0.0, z_max, grid)
    Y, Z = np.meshgrid(ys, zs, indexing="ij")
    tables = {
        "phi.csv": laws.phi(law, Y, Z),
        "phi_eps.csv": laws.phi_eps(reg, Y, Z),
        "dphi_dy.csv": laws.dphi_dy(law, Y, Z),
    }
    for name, grid_vals in tables.items():
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["y", "z", "value"])
            for i in range(len(ys)):
                for j in range(len(zs)):
                    wr.writerow([_fmt(ys[i]), _fmt(zs[j]),
                                 _fmt(grid_vals[i, j])])
    return {name: os.path.join(out_dir, name) for name in tables}
