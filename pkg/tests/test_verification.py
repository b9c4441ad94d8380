import numpy as np
import pytest

from conftest import make_rod_problem

from cohesim.errors import StateCorruptionError
from cohesim.fem import FEField, LoadingProgram, h1_norm
from cohesim.laws import RegularizedLaw
from cohesim.solver import Problem, SolverConfig, evolve, inner_minimize
from cohesim.verify import (brute_force_oracle, certify, check_el_residual,
                            check_energy_balance, check_global_stability,
                            check_history_slip)


@pytest.fixture(scope="module")
def rod_traj():
    prob = make_rod_problem()
    return evolve(prob, SolverConfig(tau=1 / 8, eps=0.05))


def test_zero_load_drift_is_zero(quick_config):
    prob = make_rod_problem()
    prog = LoadingProgram("ramp", prob.space.zero_field(), T=1.0)
    prob = Problem(prob.space, prob.scalar_space, prob.tensors, prob.law, prog)
    traj = evolve(prob, quick_config)
    eb = check_energy_balance(traj)
    assert np.max(np.abs(eb["drift"])) <= 1e-12
    assert np.max(np.abs(eb["drift_work_rule"])) <= 1e-12


def test_one_sided_inequality_holds(rod_traj):
    eb = check_energy_balance(rod_traj)
    slack = 10 * rod_traj.config.inner_tol
    assert np.all(eb["drift_work_rule"] <= eb["remainder_bound"] + slack + 1e-14)
    assert eb["one_sided_pass"]


def test_global_stability_margins(rod_traj):
    gs = check_global_stability(rod_traj, seed=123, count=40)
    assert np.min(gs["margins"]) >= -1e-8
    assert gs["gs_pass"]


def test_history_slip_check(rod_traj):
    out = check_history_slip(rod_traj)
    assert out["gap_sup"] == 0.0
    assert out["history_pass"]


def test_history_slip_detects_corruption(rod_traj):
    import copy
    bad = copy.deepcopy(rod_traj)
    bad.states[-1].gamma.values[2] *= 0.5     # below the running max
    with pytest.raises(StateCorruptionError):
        check_history_slip(bad)
    bad2 = copy.deepcopy(rod_traj)
    bad2.states[2].gamma.values[:] = bad2.states[3].gamma.values * 1.5
    with pytest.raises(StateCorruptionError):
        check_history_slip(bad2)


def test_el_residual_at_converged_state(rod_traj):
    prob = rod_traj.problem
    reg = RegularizedLaw(prob.law, rod_traj.config.eps)
    for k in (1, rod_traj.n_steps):
        st = rod_traj.states[k]
        res = check_el_residual(prob, reg, st.u, rod_traj.states[k - 1].gamma)
        assert res <= 10 * rod_traj.config.inner_tol


def test_el_residual_zero_state():
    prob = make_rod_problem()
    reg = RegularizedLaw(prob.law, 0.05)
    res = check_el_residual(prob, reg,
                            (prob.space.zero_field(), prob.space.zero_field()),
                            prob.scalar_space.zero_field())
    assert res == 0.0


def test_el_residual_grows_linearly_with_perturbation(rod_traj):
    """Residual scales ~ linearly in the perturbation size (bounded Hessian)."""
    prob = rod_traj.problem
    reg = RegularizedLaw(prob.law, rod_traj.config.eps)
    st = rod_traj.states[-1]
    gamma_prev = rod_traj.states[-2].gamma
    rng = np.random.default_rng(7)
    direction = rng.standard_normal(prob.space.n_nodes)
    direction[prob.space.mesh.dirichlet_nodes] = 0.0
    res = []
    for h in (1e-4, 2e-4, 4e-4):
        u_pert = (FEField(prob.space, st.u[0].values + h * direction),
                  st.u[1].copy())
        res.append(check_el_residual(prob, reg, u_pert, gamma_prev))
    assert res[1] == pytest.approx(2 * res[0], rel=0.05)
    assert res[2] == pytest.approx(4 * res[0], rel=0.05)


def test_brute_force_oracle_zero_load():
    prob = make_rod_problem(cells=3)
    prog = LoadingProgram("ramp", prob.space.zero_field(), T=1.0)
    prob = Problem(prob.space, prob.scalar_space, prob.tensors, prob.law, prog)
    reg = RegularizedLaw(prob.law, 0.05)
    (u1, u2), E, spread = brute_force_oracle(
        prob, reg, 1.0, prob.scalar_space.zero_field(), restarts=30, seed=9)
    assert E <= 1e-18
    assert np.max(np.abs(u1.values)) <= 1e-9
    assert spread <= 1e-10


def test_brute_force_oracle_rejects_large_problems():
    prob = make_rod_problem(cells=40)
    reg = RegularizedLaw(prob.law, 0.05)
    with pytest.raises(ValueError):
        brute_force_oracle(prob, reg, 1.0, prob.scalar_space.zero_field())


def test_certify_report_deterministic(rod_traj):
    r1 = certify(rod_traj, seed=5, competitors=15)
    r2 = certify(rod_traj, seed=5, competitors=15)
    assert r1.to_dict() == r2.to_dict()
    r3 = certify(rod_traj, seed=6, competitors=15)
    assert r3.to_dict() != r1.to_dict()   # margins sampled differently
    assert r1.passed


def test_certify_summary_fields(rod_traj):
    rep = certify(rod_traj, seed=0, competitors=10)
    s = rep.summary
    for key in ("eb_max_drift", "eb_pass", "one_sided_pass", "gs_margin_min",
                "gs_pass", "gamma_gap_sup", "history_pass", "el_residual_max",
                "el_pass", "convexity_gap_min", "convexity_pass",
                "certified_hypothesis"):
        assert key in s
    assert s["gamma_gap_sup"] == 0.0
    assert s["convexity_gap_min"] >= -1e-10
    assert len(rep.steps) == rod_traj.n_steps + 1
    assert rep.steps[3]["k"] == 3
