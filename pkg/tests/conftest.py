import numpy as np
import pytest

from cohesim.fem import FESpace, LoadingProgram, build_box_mesh, interpolate
from cohesim.laws import CohesiveLaw
from cohesim.materials import ElasticTensor
from cohesim.solver import Problem, SolverConfig


@pytest.fixture
def exp_law():
    return CohesiveLaw("exponential", kappa=1.0, rho=1.0)


@pytest.fixture
def capped_law():
    return CohesiveLaw("cubic_capped", kappa=1.0, delta_cap=2.0)


def make_rod_problem(cells=8, kappa=1.0, rho=0.7, mu1=1.0, mu2=1.8,
                     grad=0.8, T=1.0, profile="ramp", period=None):
    """Two rods with opposite stiffness gradients, stretched between the
    clamped ends; develops genuine interior slip."""
    mesh = build_box_mesh(1, cells, ["left", "right"])
    V = FESpace(mesh, 1)
    S = FESpace(mesh, 1)
    t1 = ElasticTensor(1, 0.0, mu1, mu_grad=(grad,))
    t2 = ElasticTensor(1, 0.0, mu2, mu_grad=(-grad,))
    law = CohesiveLaw("exponential", kappa=kappa, rho=rho)
    g = interpolate(V, lambda x: x[:, 0])
    prog = LoadingProgram(profile, g, T=T, period=period)
    return Problem(V, S, (t1, t2), law, prog)


def make_plate_problem(nx=8, kappa=18.0, rho=0.02, amp=2.0, T=1.0,
                       profile="ramp", period=None):
    """Unit square, left edge clamped and stretched vertically; the layers
    have contrasting Poisson ratios so the interface slips."""
    mesh = build_box_mesh(2, (nx, nx), ["left"])
    V = FESpace(mesh, 2)
    S = FESpace(mesh, 1)
    mats = (ElasticTensor(2, 5.0, 0.25), ElasticTensor(2, 0.0, 0.25))
    law = CohesiveLaw("exponential", kappa=kappa, rho=rho)
    g = interpolate(V, lambda x: np.stack(
        [np.zeros(len(x)), amp * (x[:, 1] - 0.5)], axis=1))
    prog = LoadingProgram(profile, g, T=T, period=period)
    return Problem(V, S, mats, law, prog)


@pytest.fixture
def rod_problem():
    return make_rod_problem()


@pytest.fixture
def plate_problem():
    return make_plate_problem()


@pytest.fixture
def quick_config():
    return SolverConfig(tau=0.25, eps=0.05)
