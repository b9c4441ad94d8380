"""Incremental global minimization scheme for the two-plate system.

Each time step solves

    u^k  in argmin_v  F_eps(t^k, v, gamma^{k-1})        (Dirichlet trace w(t^k))
    gamma^k = gamma^{k-1} v |u1^k - u2^k|               (nodewise max)

by damped Newton with an exact sparse Hessian and Armijo backtracking,
falling back to gradient descent if Newton stalls.  When the convexity
hypothesis lam < (c1 ^ c2) / (2 K2h^2) holds, the reduced energy is
uniformly convex on the FE space and the Newton iterate is the unique
global minimizer; otherwise the run is flagged "non-certified" and sampled
stability checks become the only evidence.

The damage variant alternates the convex u-solve with a projected monotone
descent on the damage pair under the nodewise box [alpha^{k-1}, 1],
finishing each step with one more u-solve so the displacement is exactly
equilibrated at the accepted damage state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse.linalg as spla

from .energies import (DisplacementOperator, EnergyBreakdown, cohesive_energy,
                       damage_energy, damage_gradient, elastic_energy_parts,
                       elastic_inner, total_energy, work_increment)
from .errors import ConfigError, StepFailureError
from .fem import (FEField, FESpace, LoadingProgram, h1_norm, interpolate,
                  lift_dirichlet)
from .laws import CohesiveLaw, RegularizedLaw
from .materials import coercivity_constant, estimate_korn_constant, modulus_bound

__all__ = [
    "DamageSpec",
    "Problem",
    "SolverConfig",
    "SystemState",
    "Trajectory",
    "inner_minimize",
    "update_history_slip",
    "evolve",
    "evolve_damage",
    "eps_continuation",
    "default_eps",
]


@dataclass(frozen=True)
class DamageSpec:
    """Gradient-damage parameters: w_i(s) = w_coeffs[i]*s, exponent r > n."""

    w_coeffs: tuple
    r: float
    alpha0_values: tuple | None = None   # per-layer nodal arrays, default 0


@dataclass
class Problem:
    """Geometry, materials, interface law, loading and initial data."""

    space: FESpace                 # vector displacement space
    scalar_space: FESpace          # scalar space for gamma / alpha
    tensors: tuple                 # (ElasticTensor, ElasticTensor)
    law: CohesiveLaw
    program: LoadingProgram
    u0_values: tuple | None = None  # per-layer nodal arrays, default 0
    damage: DamageSpec | None = None
    _hyp: dict = field(default_factory=dict, repr=False)

    def initial_u(self):
        if self.u0_values is None:
            return (self.space.zero_field(), self.space.zero_field())
        return tuple(FEField(self.space, np.array(v, dtype=float))
                     for v in self.u0_values)

    def hypothesis(self) -> dict:
        """Coercivities, Korn constant and the convexity margin (cached)."""
        if not self._hyp:
            pts = self.space.mesh.vertices
            c1 = coercivity_constant(self.tensors[0], pts)
            c2 = coercivity_constant(self.tensors[1], pts)
            korn = estimate_korn_constant(self.space)
            lam = self.law.lam
            mu = min(c1, c2) / korn**2 - 2.0 * lam
            self._hyp.update(
                c1=c1, c2=c2, korn=korn, lam=lam, mu_convexity=mu,
                certified=bool(mu > 0.0),
            )
        return self._hyp

    def domain_measure(self) -> float:
        return float(np.sum(self.space.cell_measure))


@dataclass(frozen=True)
class SolverConfig:
    tau: float
    eps: float
    inner_tol: float = 1e-9
    max_newton: int = 60
    max_fallback: int = 5000
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    damage: bool = False
    sweep_limit: int = 60
    sweep_tol: float = 1e-12
    alpha_tol: float = 1e-9
    alpha_max_iter: int = 2000
    initial_tol: float = 1e-8
    adopt_initial_minimizer: bool = False

    def __post_init__(self):
        if self.tau <= 0 or self.eps <= 0:
            raise ConfigError("tau and eps must be positive")
        if self.inner_tol <= 0 or self.sweep_tol <= 0:
            raise ConfigError("tolerances must be positive")


@dataclass
class SystemState:
    k: int
    t: float
    u: tuple                      # (FEField, FEField)
    gamma: FEField
    alpha: tuple | None
    energies: EnergyBreakdown
    newton_iters: int = 0
    flags: tuple = ()


@dataclass
class Trajectory:
    problem: Problem
    config: SolverConfig
    states: list
    certified: bool
    remainder_bound: list         # per-step competitor-chain remainder R^tau_k

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1


def default_eps(law: CohesiveLaw, program: LoadingProgram) -> float:
    """min(0.05 * loading slip scale, 0.1 * law curvature scale)."""
    smax = max(abs(program.s(t)) for t in np.linspace(0, program.T, 65))
    gmag = np.abs(program.g.values)
    gmax = float(np.max(np.linalg.norm(program.g.values, axis=-1))
                 if program.g.values.ndim > 1 else np.max(gmag))
    slip_scale = 0.05 * smax * gmax
    curv = 0.1 * law.curvature_scale
    candidates = [c for c in (slip_scale, curv) if c > 0]
    if not candidates:
        raise ConfigError("cannot derive a default eps from a zero loading")
    return min(candidates)


# ----------------------------------------------------------------------
# Inner minimization.
# ----------------------------------------------------------------------

def _stack(u1: FEField, u2: FEField) -> np.ndarray:
    return np.stack([np.atleast_2d(u1.values.T).T, np.atleast_2d(u2.values.T).T])


def _free_masks(space: FESpace):
    free = space.free_mask
    return np.concatenate([free, free])


def inner_minimize(problem: Problem, reg: RegularizedLaw, t: float,
                   gamma_prev: FEField, config: SolverConfig,
                   warm=None, alphas=None, _retried=False):
    """Global minimization of F_eps(t, ., gamma_prev) at fixed damage.

    Returns ``(u1, u2, info)`` where info carries iteration counts and the
    final gradient norm.  Raises StepFailureError if neither Newton nor the
    gradient-descent fallback reaches the tolerance, or if the accepted
    state cannot beat the trivial competitor (w(t), w(t)).
    """
    space = problem.space
    op = DisplacementOperator(space, problem.tensors, reg, gamma_prev, alphas)
    shape = (2, space.n_nodes, space.ncomp)

    datum = problem.program.datum_values(t)
    datum = datum.reshape(space.n_nodes, space.ncomp)
    dn = space.mesh.dirichlet_nodes

    def with_trace(values):
        v = values.reshape(shape).copy()
        v[:, dn, :] = datum[dn]
        return v

    if warm is None:
        warm = (space.zero_field(), space.zero_field())
    U = with_trace(_stack(*warm))
    free = _free_masks(space)

    def grad_free(U):
        return op.gradient(U).ravel()[free]

    def set_free(U, x):
        V = U.copy().ravel()
        V[free] = x
        return V.reshape(shape)

    x = U.ravel()[free]
    E = op.energy(U)
    g = grad_free(U)
    newton_iters = 0
    fallback_iters = 0

    # roundoff slack: near the minimum, energy differences fall below
    # machine resolution while the gradient is still above tolerance
    def armijo(U, x, E, g, p):
        gp = float(g @ p)
        slack = 8.0 * np.finfo(float).eps * (1.0 + abs(E))
        step = 1.0
        for _ in range(config.max_backtracks):
            x_new = x + step * p
            U_new = set_free(U, x_new)
            E_new = op.energy(U_new)
            if E_new <= E + config.armijo_c * step * gp + slack:
                return U_new, x_new, E_new
            step *= config.backtrack
        return None

    for _ in range(config.max_newton):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= config.inner_tol:
            break
        H = op.hessian(U)
        Hff = H[free][:, free].tocsc()
        try:
            p = spla.spsolve(Hff, -g)
        except Exception:
            p = -g
        if not np.all(np.isfinite(p)) or float(g @ p) >= 0.0:
            p = -g
        res = armijo(U, x, E, g, p)
        if res is None:
            break
        U, x, E = res
        g = grad_free(U)
        newton_iters += 1

    gnorm = float(np.linalg.norm(g))
    if gnorm > config.inner_tol:
        # Armijo gradient descent with Barzilai-Borwein step guesses
        step = 1.0
        x_old, g_old = None, None
        for _ in range(config.max_fallback):
            if x_old is not None:
                dx, dg = x - x_old, g - g_old
                denom = float(dg @ dg)
                step = float(dx @ dg) / denom if denom > 0 else 1.0
                step = min(max(abs(step), 1e-12), 1e6)
            p = -g
            x_old, g_old = x.copy(), g.copy()
            res = armijo(U, x, E, g, step * p)
            if res is None:
                break
            U, x, E = res
            g = grad_free(U)
            fallback_iters += 1
            gnorm = float(np.linalg.norm(g))
            if gnorm <= config.inner_tol:
                break

    if gnorm > config.inner_tol:
        raise StepFailureError(
            f"inner minimization stalled at t={t:.6g} (|grad|={gnorm:.3e})",
            diagnostics={"t": t, "grad_norm": gnorm, "energy": E,
                         "newton_iters": newton_iters,
                         "fallback_iters": fallback_iters})

    # postcondition: no worse than the trivial competitor (w(t), w(t));
    # if a (non-certified) run lands above it, restart from the competitor
    E_triv = op.energy(np.stack([datum, datum]))
    if E > E_triv + 1e-9 * (1.0 + abs(E_triv)):
        if _retried:
            raise StepFailureError(
                f"minimizer above the trivial competitor at t={t:.6g}",
                diagnostics={"t": t, "energy": E, "trivial": E_triv})
        triv = tuple(FEField(space, datum.copy() if space.ncomp > 1
                             else datum.ravel().copy()) for _ in range(2))
        return inner_minimize(problem, reg, t, gamma_prev, config,
                              warm=triv, alphas=alphas, _retried=True)

    u1 = FEField(space, U[0] if space.ncomp > 1 else U[0].ravel())
    u2 = FEField(space, U[1] if space.ncomp > 1 else U[1].ravel())
    info = {"newton_iters": newton_iters, "fallback_iters": fallback_iters,
            "grad_norm": gnorm, "energy": E}
    return u1, u2, info


def nodal_slip(u1: FEField, u2: FEField, scalar_space: FESpace) -> FEField:
    d = u1.values - u2.values
    mag = np.abs(d).ravel() if d.ndim == 1 else np.linalg.norm(d, axis=-1)
    return FEField(scalar_space, mag)


def update_history_slip(gamma_prev: FEField, u1: FEField, u2: FEField) -> FEField:
    """gamma^k = gamma^{k-1} v |u1 - u2| nodewise."""
    slip = nodal_slip(u1, u2, gamma_prev.space)
    return FEField(gamma_prev.space, np.maximum(gamma_prev.values, slip.values))


# ----------------------------------------------------------------------
# Damage solve (one layer at a time, projected descent).
# ----------------------------------------------------------------------

def _alpha_energy(alpha: FEField, u: FEField, tensor, w_coeff, r):
    lam_w_e = elastic_inner(u, u, tensor, alpha) * 0.5
    space = alpha.space
    aq = alpha.at_quad()
    internal = float(np.einsum("m,mq->", space.cell_measure,
                               w_coeff * aq * space.quad_weights[None, :]))
    g = alpha.grad_at_cells()
    gn = np.linalg.norm(g, axis=-1)
    grad_term = float(np.sum(space.cell_measure * gn**r)) / r
    return lam_w_e + internal + grad_term


def _alpha_solve(alpha: FEField, lower: np.ndarray, u: FEField, tensor,
                 w_coeff: float, r: float, config: SolverConfig) -> FEField:
    """Projected monotone descent on the nodal box [lower, 1].

    Spectral (Barzilai-Borwein) step guesses with Armijo backtracking; the
    alpha-energy is convex in alpha, so the method converges to the
    box-constrained minimizer.
    """
    a = np.clip(alpha.values.copy(), lower, 1.0)
    f = FEField(alpha.space, a)
    E = _alpha_energy(f, u, tensor, w_coeff, r)
    g = damage_gradient(f, u, tensor, w_coeff, r)
    res0 = np.linalg.norm(a - np.clip(a - g, lower, 1.0))
    tol = config.alpha_tol * max(1.0, res0)
    step = 1.0
    a_old = g_old = None
    slack = 8.0 * np.finfo(float).eps
    for _ in range(config.alpha_max_iter):
        proj_res = a - np.clip(a - g, lower, 1.0)
        if np.linalg.norm(proj_res) <= tol:
            break
        if a_old is not None:
            s_vec, y_vec = a - a_old, g - g_old
            sy = float(s_vec @ y_vec)
            step = float(s_vec @ s_vec) / sy if sy > 0 else 1.0
            step = min(max(step, 1e-10), 1e8)
        a_old, g_old = a.copy(), g.copy()
        improved = False
        s = step
        for _ in range(config.max_backtracks):
            cand = np.clip(a - s * g, lower, 1.0)
            fc = FEField(alpha.space, cand)
            Ec = _alpha_energy(fc, u, tensor, w_coeff, r)
            dec = float(g @ (cand - a))
            if Ec <= E + config.armijo_c * dec + slack * (1 + abs(E)):
                a, f, E = cand, fc, Ec
                improved = True
                break
            s *= config.backtrack
        if not improved:
            break
        g = damage_gradient(f, u, tensor, w_coeff, r)
    return f


# ----------------------------------------------------------------------
# Evolution loops.
# ----------------------------------------------------------------------

def _n_steps(program: LoadingProgram, tau: float) -> int:
    n = round(program.T / tau)
    if n < 1 or abs(n * tau - program.T) > 1e-9 * program.T:
        raise ConfigError(f"tau={tau} does not divide the horizon T={program.T}")
    return n


def _sanity_bound(problem: Problem) -> float:
    """Prop-2.6-style upper bound on the minimized energy (runtime sanity)."""
    pts = problem.space.mesh.vertices
    M = sum(modulus_bound(t, pts) for t in problem.tensors)
    prog = problem.program
    smax = max(abs(prog.s(t)) for t in np.linspace(0, prog.T, 129))
    wmax = smax * h1_norm(prog.g)
    return 0.5 * M * wmax**2 + problem.domain_measure() * problem.law.sup


def _run(problem: Problem, config: SolverConfig, damage: bool,
         warm_hints=None) -> Trajectory:
    program = problem.program
    n = _n_steps(program, config.tau)
    reg = RegularizedLaw(problem.law, config.eps)
    hyp = problem.hypothesis()
    space, sspace = problem.space, problem.scalar_space

    dspec = problem.damage
    if damage and dspec is None:
        raise ConfigError("damage run requested but the problem has no damage spec")
    if damage:
        ndim = space.mesh.dim
        if dspec.r <= ndim:
            raise ConfigError(f"damage exponent r={dspec.r} must exceed dim={ndim}")
        for t in problem.tensors:
            if t.eta is None:
                raise ConfigError("damage run needs tensors with eta set")

    u1, u2 = problem.initial_u()
    datum0 = program.datum_values(0.0)
    scale = 1.0 + float(np.max(np.abs(datum0)))
    dn = space.mesh.dirichlet_nodes
    for u in (u1, u2):
        if np.max(np.abs((u.values - datum0)[dn])) > 1e-10 * scale:
            raise ConfigError(
                "initial displacement does not match the loading trace at t=0")
    gamma = nodal_slip(u1, u2, sspace)

    if damage:
        if dspec.alpha0_values is None:
            alphas = (sspace.zero_field(), sspace.zero_field())
        else:
            alphas = tuple(FEField(sspace, np.array(v, dtype=float))
                           for v in dspec.alpha0_values)
        for a in alphas:
            if np.any(a.values < 0) or np.any(a.values > 1):
                raise ConfigError("initial damage outside [0, 1]")
    else:
        alphas = None

    # initial-datum admissibility: one inner solve at t = 0
    m1, m2, _ = inner_minimize(problem, reg, 0.0, gamma, config,
                               warm=(u1, u2), alphas=alphas)
    E_init = _state_energy(problem, reg, u1, u2, gamma, alphas, dspec)
    E_min = _state_energy(problem, reg, m1, m2, gamma, alphas, dspec)
    if E_init - E_min > config.initial_tol * (1.0 + abs(E_min)):
        if not config.adopt_initial_minimizer:
            raise ConfigError(
                "initial displacement is not a minimizer of its own energy "
                f"(improvable by {E_init - E_min:.3e}); set adopt_initial_minimizer")
        u1, u2 = m1, m2
        gamma = nodal_slip(u1, u2, sspace)
        m1, m2, _ = inner_minimize(problem, reg, 0.0, gamma, config,
                                   warm=(u1, u2), alphas=alphas)
        E_min2 = _state_energy(problem, reg, m1, m2, gamma, alphas, dspec)
        if (_state_energy(problem, reg, u1, u2, gamma, alphas, dspec)
                - E_min2 > config.initial_tol * (1.0 + abs(E_min2))):
            raise ConfigError("initial datum adoption did not stabilize")

    sanity = _sanity_bound(problem)
    work = 0.0
    states = [SystemState(
        0, 0.0, (u1, u2), gamma, alphas,
        _breakdown(problem, reg, u1, u2, gamma, alphas, dspec, work), 0,
        () if hyp["certified"] else ("non-certified",))]
    remainder = [0.0]
    r_accum = 0.0

    for k in range(1, n + 1):
        t_prev, t_k = (k - 1) * config.tau, k * config.tau
        prev = states[-1]
        if warm_hints is not None and k < len(warm_hints):
            warm = warm_hints[k]
        else:
            warm = tuple(lift_dirichlet(u, program, t_k) for u in prev.u)
        flags = () if hyp["certified"] else ("non-certified",)
        try:
            if damage:
                u1, u2, alphas, iters, step_flags = _damage_step(
                    problem, reg, t_k, prev.gamma, prev.alpha, warm, config, dspec)
                flags += step_flags
            else:
                u1, u2, info = inner_minimize(problem, reg, t_k, prev.gamma,
                                              config, warm=warm)
                iters = info["newton_iters"] + info["fallback_iters"]
                alphas = None
        except StepFailureError as exc:
            exc.diagnostics["partial_states"] = len(states)
            raise
        gamma = update_history_slip(prev.gamma, u1, u2)
        work += work_increment(prev.u[0], prev.u[1], problem.tensors, program,
                               t_prev, t_k, alphas=prev.alpha)
        ds = program.s(t_k) - program.s(t_prev)
        qg = sum(elastic_inner(program.g, program.g, tt, aa)
                 for tt, aa in zip(problem.tensors,
                                   prev.alpha or (None, None)))
        r_accum += 0.5 * ds * ds * qg
        remainder.append(r_accum)
        bd = _breakdown(problem, reg, u1, u2, gamma, alphas, dspec, work)
        if bd.total > sanity * (1.0 + 1e-9) + 1e-12:
            flags += ("sanity-bound-exceeded",)
        states.append(SystemState(k, t_k, (u1, u2), gamma, alphas, bd, iters, flags))

    return Trajectory(problem, config, states, hyp["certified"], remainder)


def _state_energy(problem, reg, u1, u2, gamma, alphas, dspec):
    e = sum(elastic_energy_parts(u1, u2, problem.tensors, alphas))
    e += cohesive_energy(u1, gamma, reg, u2=u2)
    if alphas is not None and dspec is not None:
        e += damage_energy(alphas[0], alphas[1], dspec.w_coeffs, dspec.r)
    return e


def _breakdown(problem, reg, u1, u2, gamma, alphas, dspec, work) -> EnergyBreakdown:
    return total_energy(
        u1, u2, gamma, problem.tensors, problem.law, reg=reg, alphas=alphas,
        damage_w=dspec.w_coeffs if (dspec and alphas) else None,
        damage_r=dspec.r if (dspec and alphas) else None, work=work)


def _damage_step(problem, reg, t_k, gamma_prev, alphas_prev, warm, config, dspec):
    """Alternate minimization over (u, alpha) with irreversibility."""
    alphas = tuple(a.copy() for a in alphas_prev)
    lowers = tuple(a.values.copy() for a in alphas_prev)
    u1, u2 = warm
    E = None
    iters, flags = 0, ()
    converged = False
    for _ in range(config.sweep_limit):
        u1, u2, info = inner_minimize(problem, reg, t_k, gamma_prev, config,
                                      warm=(u1, u2), alphas=alphas)
        iters += info["newton_iters"] + info["fallback_iters"]
        alphas = tuple(
            _alpha_solve(a, lo, u, t, w, dspec.r, config)
            for a, lo, u, t, w in zip(alphas, lowers, (u1, u2),
                                      problem.tensors, dspec.w_coeffs))
        E_new = _state_energy(problem, reg, u1, u2, gamma_prev, alphas, dspec)
        if E is not None and E - E_new <= config.sweep_tol * (1.0 + abs(E_new)):
            converged = True
            E = E_new
            break
        E = E_new
    if not converged:
        flags += ("critical_point_only",)
    # re-equilibrate the displacement at the accepted damage state
    u1, u2, info = inner_minimize(problem, reg, t_k, gamma_prev, config,
                                  warm=(u1, u2), alphas=alphas)
    iters += info["newton_iters"] + info["fallback_iters"]
    return u1, u2, alphas, iters, flags


def evolve(problem: Problem, config: SolverConfig, warm_hints=None) -> Trajectory:
    """Run the undamaged evolution over the full loading program."""
    return _run(problem, config, damage=False, warm_hints=warm_hints)


def evolve_damage(problem: Problem, config: SolverConfig) -> Trajectory:
    """Run the damage-coupled evolution (alternate minimization per step)."""
    return _run(problem, config, damage=True)


def eps_continuation(problem: Problem, config: SolverConfig, eps_ladder):
    """Run the evolution for each eps in the ladder with warm-starting.

    Returns a dict with the trajectories, the per-step H1 distances between
    consecutive rungs and the per-step |F - F_eps| gaps of each rung.
    """
    eps_ladder = list(eps_ladder)
    if sorted(eps_ladder, reverse=True) != eps_ladder:
        raise ConfigError("eps ladder must be strictly decreasing")
    trajectories = []
    hints = None
    for eps in eps_ladder:
        cfg = replace(config, eps=eps)
        traj = evolve(problem, cfg, warm_hints=hints)
        trajectories.append(traj)
        hints = [st.u for st in traj.states]
    diffs = []
    for ta, tb in zip(trajectories, trajectories[1:]):
        diffs.append([
            float(np.hypot(
                h1_norm(FEField(problem.space, a.u[0].values - b.u[0].values)),
                h1_norm(FEField(problem.space, a.u[1].values - b.u[1].values))))
            for a, b in zip(ta.states, tb.states)])
    gaps = []
    for traj, eps in zip(trajectories, eps_ladder):
        reg = RegularizedLaw(problem.law, eps)
        gaps.append([
            float(cohesive_energy(st.u[0], st.gamma, problem.law, u2=st.u[1])
                  - cohesive_energy(st.u[0], st.gamma, reg, u2=st.u[1]))
            for st in traj.states])
    return {"eps": eps_ladder, "trajectories": trajectories,
            "h1_diffs": np.array(diffs), "f_minus_feps": np.array(gaps)}
