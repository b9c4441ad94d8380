"""Run configuration: JSON schema, validation, problem construction.

A run is described by one JSON document (see README for the schema).  The
resolved configuration echoes the normalized input plus a ``derived`` block
(seed, Korn constant, coercivities, convexity margin, resolved tau/eps), so
a run directory is self-describing: rebuilding the problem from the
resolved config and re-resolving reproduces it byte-identically.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import ConfigError
from .fem import FESpace, FEField, LoadingProgram, build_box_mesh, interpolate
from .laws import CohesiveLaw
from .materials import ElasticTensor
from .solver import DamageSpec, Problem, SolverConfig, default_eps

__all__ = [
    "load_config", "normalize_config", "build_problem", "resolve_config",
    "build_problem_from_resolved",
]

_SOLVER_DEFAULTS = {
    "inner_tol": 1e-9,
    "max_newton": 60,
    "max_fallback": 5000,
    "armijo_c": 1e-4,
    "backtrack": 0.5,
    "max_backtracks": 60,
    "sweep_limit": 60,
    "sweep_tol": 1e-12,
    "alpha_tol": 1e-9,
    "alpha_max_iter": 2000,
    "initial_tol": 1e-8,
    "adopt_initial_minimizer": False,
}


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc


def _require(cfg, key, errors, kind=None):
    if key not in cfg:
        errors.append(f"missing required key {key!r}")
        return None
    val = cfg[key]
    if kind is not None and not isinstance(val, kind):
        errors.append(f"key {key!r} has wrong type {type(val).__name__}")
        return None
    return val


def normalize_config(raw: dict) -> dict:
    """Validate a raw config dict and fill defaults; raises ConfigError
    with every problem found."""
    errors: list[str] = []
    cfg = {}

    mesh = _require(raw, "mesh", errors, dict) or {}
    dim = mesh.get("dim")
    if dim not in (1, 2):
        errors.append("mesh.dim must be 1 or 2")
        dim = 2
    divisions = mesh.get("divisions")
    if isinstance(divisions, int):
        divisions = [divisions] * dim
    if (not isinstance(divisions, list) or len(divisions) != dim
            or any((not isinstance(d, int)) or d < 1 for d in divisions)):
        errors.append("mesh.divisions must be a positive int per axis")
        divisions = [1] * dim
    sides = mesh.get("dirichlet_sides", [])
    if not sides:
        errors.append("mesh.dirichlet_sides must be nonempty")
    lengths = mesh.get("lengths", [1.0] * dim)
    cfg["mesh"] = {"dim": dim, "divisions": divisions,
                   "dirichlet_sides": list(sides),
                   "lengths": [float(L) for L in lengths]}

    mats = _require(raw, "materials", errors, list) or []
    if len(mats) != 2:
        errors.append("materials must list exactly two layers")
        mats = [{}, {}]
    cfg["materials"] = []
    for i, m in enumerate(mats):
        entry = {
            "lame_lambda": float(m.get("lame_lambda", 0.0)),
            "lame_mu": float(m.get("lame_mu", 0.0)),
            "lambda_grad": m.get("lambda_grad"),
            "mu_grad": m.get("mu_grad"),
        }
        if entry["lame_mu"] <= 0 and m.get("mu_grad") is None:
            errors.append(f"materials[{i}].lame_mu must be positive")
        cfg["materials"].append(entry)

    law = _require(raw, "law", errors, dict) or {}
    kind = law.get("kind")
    if kind not in ("exponential", "cubic_capped"):
        errors.append("law.kind must be 'exponential' or 'cubic_capped'")
        kind = "exponential"
    entry = {"kind": kind, "kappa": float(law.get("kappa", 0.0))}
    if entry["kappa"] <= 0:
        errors.append("law.kappa must be positive")
        entry["kappa"] = 1.0
    if kind == "exponential":
        entry["rho"] = float(law.get("rho", 0.0))
        if entry["rho"] <= 0:
            errors.append("law.rho must be positive")
            entry["rho"] = 1.0
    else:
        entry["delta_cap"] = float(law.get("delta_cap", 0.0))
        if entry["delta_cap"] <= 0:
            errors.append("law.delta_cap must be positive")
            entry["delta_cap"] = 1.0
    cfg["law"] = entry

    loading = _require(raw, "loading", errors, dict) or {}
    profile = loading.get("profile", "ramp")
    if profile not in ("ramp", "cyclic"):
        errors.append("loading.profile must be 'ramp' or 'cyclic'")
        profile = "ramp"
    T = float(loading.get("T", 0.0))
    if T <= 0:
        errors.append("loading.T must be positive")
        T = 1.0
    period = loading.get("period")
    if profile == "cyclic" and (period is None or float(period) <= 0):
        errors.append("cyclic loading needs a positive period")
        period = T
    gspec = loading.get("g")
    if not isinstance(gspec, dict):
        errors.append("loading.g must be a boundary-shape spec")
        gspec = {"kind": "translate", "vector": [0.0] * dim}
    gspec = _normalize_shape(gspec, dim, errors, "loading.g")
    cfg["loading"] = {"profile": profile, "T": T,
                      "period": None if period is None else float(period),
                      "g": gspec}

    solver = dict(raw.get("solver", {}))
    tau = solver.pop("tau", None)
    eps = solver.pop("eps", None)
    norm_solver = {"tau": None if tau is None else float(tau),
                   "eps": None if eps is None else float(eps)}
    for key, default in _SOLVER_DEFAULTS.items():
        val = solver.pop(key, default)
        norm_solver[key] = type(default)(val)
    if solver:
        errors.append(f"unknown solver keys: {sorted(solver)}")
    if norm_solver["tau"] is not None:
        if norm_solver["tau"] <= 0:
            errors.append("solver.tau must be positive")
        else:
            n = T / norm_solver["tau"]
            if abs(n - round(n)) > 1e-9 or round(n) < 1:
                errors.append("T / solver.tau must be a positive integer")
    cfg["solver"] = norm_solver

    dmg = raw.get("damage", {"enabled": False})
    enabled = bool(dmg.get("enabled", False))
    entry = {"enabled": enabled}
    if enabled:
        entry["w_coeffs"] = [float(w) for w in dmg.get("w_coeffs", [1.0, 1.0])]
        if len(entry["w_coeffs"]) != 2 or any(w < 0 for w in entry["w_coeffs"]):
            errors.append("damage.w_coeffs must be two nonnegative numbers")
            entry["w_coeffs"] = [1.0, 1.0]
        entry["r"] = float(dmg.get("r", dim + 1))
        if entry["r"] <= dim:
            errors.append(f"damage.r must exceed the dimension {dim}")
            entry["r"] = dim + 1.0
        entry["eta"] = float(dmg.get("eta", 1e-3))
        if entry["eta"] <= 0:
            errors.append("damage.eta must be positive")
            entry["eta"] = 1e-3
        entry["alpha0"] = float(dmg.get("alpha0", 0.0))
        if not 0.0 <= entry["alpha0"] <= 1.0:
            errors.append("damage.alpha0 must lie in [0, 1]")
            entry["alpha0"] = 0.0
    cfg["damage"] = entry

    initial = raw.get("initial", {})
    u0 = initial.get("u0", {"kind": "zero"})
    if u0.get("kind") not in ("zero", "affine"):
        errors.append("initial.u0.kind must be 'zero' or 'affine'")
        u0 = {"kind": "zero"}
    if u0.get("kind") == "affine":
        layers = u0.get("layers")
        if not isinstance(layers, list) or len(layers) != 2:
            errors.append("initial.u0.layers must list two affine shapes")
            u0 = {"kind": "zero"}
        else:
            u0 = {"kind": "affine",
                  "layers": [_normalize_shape(
                      {"kind": "affine", **l}, dim, errors,
                      f"initial.u0.layers[{i}]") for i, l in enumerate(layers)]}
    cfg["initial"] = {"u0": u0}

    out = raw.get("output", {})
    every = int(out.get("snapshot_every", 1))
    if every < 1:
        errors.append("output.snapshot_every must be >= 1")
        every = 1
    cfg["output"] = {"snapshot_every": every}
    cfg["seed"] = int(raw.get("seed", 0))
    cfg["schema_version"] = 1

    if errors:
        raise ConfigError("invalid configuration:\n  - " + "\n  - ".join(errors))
    return cfg


def _normalize_shape(spec: dict, dim: int, errors: list, where: str) -> dict:
    """Affine nodal shapes: g(x) = matrix @ x + offset (with sugar kinds)."""
    kind = spec.get("kind")
    if kind == "translate":
        vec = spec.get("vector", [0.0] * dim)
        matrix = [[0.0] * dim for _ in range(dim)]
        offset = [float(v) for v in vec]
    elif kind == "stretch":
        axis = int(spec.get("axis", 0))
        amp = float(spec.get("amplitude", 1.0))
        center = float(spec.get("center", 0.0))
        if not 0 <= axis < dim:
            errors.append(f"{where}: axis out of range")
            axis = 0
        matrix = [[0.0] * dim for _ in range(dim)]
        matrix[axis][axis] = amp
        offset = [0.0] * dim
        offset[axis] = -amp * center
    elif kind == "affine":
        matrix = spec.get("matrix", [[0.0] * dim for _ in range(dim)])
        offset = spec.get("offset", [0.0] * dim)
    else:
        errors.append(f"{where}: unknown shape kind {kind!r}")
        matrix = [[0.0] * dim for _ in range(dim)]
        offset = [0.0] * dim
    matrix = [[float(v) for v in row] for row in matrix]
    offset = [float(v) for v in offset]
    if len(matrix) != dim or any(len(row) != dim for row in matrix) \
            or len(offset) != dim:
        errors.append(f"{where}: matrix/offset shape mismatch for dim {dim}")
        matrix = [[0.0] * dim for _ in range(dim)]
        offset = [0.0] * dim
    return {"kind": "affine", "matrix": matrix, "offset": offset}


def _shape_field(space: FESpace, shape: dict) -> FEField:
    A = np.asarray(shape["matrix"])
    b = np.asarray(shape["offset"])
    vals = space.mesh.vertices @ A.T + b
    return FEField(space, vals if space.ncomp > 1 else vals.ravel())


def build_problem(cfg: dict, damage_override: bool | None = None):
    """Construct (Problem, SolverConfig, damage_enabled) from a normalized
    config."""
    mcfg = cfg["mesh"]
    mesh = build_box_mesh(mcfg["dim"], tuple(mcfg["divisions"]),
                          mcfg["dirichlet_sides"], lengths=mcfg["lengths"])
    dim = mcfg["dim"]
    space = FESpace(mesh, dim)
    sspace = FESpace(mesh, 1)

    damage_on = cfg["damage"]["enabled"] if damage_override is None \
        else damage_override
    if damage_on and not cfg["damage"].get("enabled", False):
        raise ConfigError("damage run requested but config has no damage block")
    eta = cfg["damage"].get("eta") if damage_on else None
    tensors = tuple(
        ElasticTensor(
            dim, m["lame_lambda"], m["lame_mu"],
            lambda_grad=None if m["lambda_grad"] is None else tuple(m["lambda_grad"]),
            mu_grad=None if m["mu_grad"] is None else tuple(m["mu_grad"]),
            eta=eta)
        for m in cfg["materials"])

    lcfg = cfg["law"]
    law = CohesiveLaw(lcfg["kind"], lcfg["kappa"], rho=lcfg.get("rho"),
                      delta_cap=lcfg.get("delta_cap"))

    ldg = cfg["loading"]
    g = _shape_field(space, ldg["g"])
    program = LoadingProgram(ldg["profile"], g, ldg["T"], period=ldg["period"])

    u0_values = None
    if cfg["initial"]["u0"]["kind"] == "affine":
        u0_values = tuple(
            _shape_field(space, shape).values
            for shape in cfg["initial"]["u0"]["layers"])

    damage_spec = None
    if damage_on:
        d = cfg["damage"]
        a0 = np.full(sspace.n_nodes, d["alpha0"])
        damage_spec = DamageSpec(tuple(d["w_coeffs"]), d["r"],
                                 alpha0_values=(a0, a0.copy()))

    problem = Problem(space, sspace, tensors, law, program,
                      u0_values=u0_values, damage=damage_spec)

    s = cfg["solver"]
    tau = s["tau"] if s["tau"] is not None else ldg["T"] / 64.0
    eps = s["eps"] if s["eps"] is not None else default_eps(law, program)
    solver_cfg = SolverConfig(
        tau=tau, eps=eps,
        **{k: s[k] for k in _SOLVER_DEFAULTS})
    n = ldg["T"] / tau
    if abs(n - round(n)) > 1e-9:
        raise ConfigError("T / tau must be an integer")
    return problem, solver_cfg, damage_on


def resolve_config(cfg: dict, problem: Problem, solver_cfg: SolverConfig,
                   damage_on: bool) -> dict:
    """Echo the normalized config plus derived provenance constants."""
    hyp = problem.hypothesis()
    resolved = json.loads(json.dumps(cfg))    # deep copy, JSON-clean
    resolved["solver"]["tau"] = solver_cfg.tau
    resolved["solver"]["eps"] = solver_cfg.eps
    resolved["damage"]["enabled"] = damage_on
    resolved["derived"] = {
        "korn_constant": float(hyp["korn"]),
        "c1": float(hyp["c1"]),
        "c2": float(hyp["c2"]),
        "lambda_curvature": float(hyp["lam"]),
        "mu_convexity": float(hyp["mu_convexity"]),
        "certified": bool(hyp["certified"]),
        "n_steps": round(problem.program.T / solver_cfg.tau),
        "domain_measure": problem.domain_measure(),
    }
    return resolved


def build_problem_from_resolved(resolved: dict):
    cfg = {k: v for k, v in resolved.items() if k != "derived"}
    return build_problem(cfg)
