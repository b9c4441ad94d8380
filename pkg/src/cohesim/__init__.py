"""Quasistatic evolution of two elastic plates with a cohesive interface.

Incremental global energy minimization with an irreversible history-slip
variable, an optional gradient-damage extension, and a certification
harness for the defining properties of energetic evolutions (global
stability, energy balance, irreversibility).
"""

from .laws import CohesiveLaw, RegularizedLaw
from .fem import FEField, FESpace, LoadingProgram, Mesh, build_box_mesh
from .materials import ElasticTensor, estimate_korn_constant
from .energies import EnergyBreakdown
from .solver import (DamageSpec, Problem, SolverConfig, SystemState,
                     Trajectory, eps_continuation, evolve, evolve_damage,
                     inner_minimize, update_history_slip)
from .verify import CertificationReport, certify

__version__ = "0.1.0"
