"""Cohesive-law unit tests.

Frozen reference values were computed with an independent high-precision
evaluator (mpmath at 40 digits) of the closed-form expressions; finite
differences cross-check every derivative away from the branch seams.
"""

import numpy as np
import pytest

from cohesim import laws
from cohesim.laws import CohesiveLaw, RegularizedLaw

# mpmath, 40 digits:  1 - e^-1,  e^-1/2*0.25 + (1-e^-1) - e^-1/2,  e^-1*0.5,
# (e^-1 + e^-1)/2 * 0.75,  root of z = 0.1 e^-z,  root of z = e^-z
PSI_1 = 0.63212055882855768
PHI_05_1 = 0.49416576838926681
DPHI_DY_05_1 = 0.18393972058572116
DPHI_DZ_05_1 = 0.27590958087858174
Z_EPS_01 = 0.091276527160862264
Z_EPS_1 = 0.56714329040978387


def grid(law, n=80):
    scale = 3.0 * law.curvature_scale
    y = np.linspace(0.0, scale, n)
    z = np.linspace(0.0, scale, n)
    return np.meshgrid(y, z, indexing="ij")


# ----------------------------------------------------------------------
# psi
# ----------------------------------------------------------------------

def test_psi_examples(exp_law):
    assert laws.psi(exp_law, 0.0) == 0.0
    assert laws.psi(exp_law, 50.0) == pytest.approx(1.0, abs=1e-12)
    assert laws.psi(exp_law, 1.0) == pytest.approx(PSI_1, abs=1e-15)


def test_psi_negative_raises(exp_law):
    with pytest.raises(ValueError):
        laws.psi(exp_law, -0.1)
    with pytest.raises(ValueError):
        laws.phi(exp_law, 0.1, -0.1)


@pytest.mark.parametrize("kind", ["exp", "capped"])
def test_psi_shape_assumptions(kind, exp_law, capped_law):
    law = exp_law if kind == "exp" else capped_law
    z = np.linspace(0.0, 3 * law.curvature_scale, 400)
    p, dp, ddp = laws.psi(law, z), laws.dpsi(law, z), laws.ddpsi(law, z)
    assert p[0] == 0.0 and law.slope0 > 0
    assert np.all(np.diff(p) >= 0) and np.all(p <= law.sup + 1e-15)
    assert np.all(np.diff(dp) <= 1e-15)          # psi' nonincreasing
    assert np.all(ddp >= -law.lam - 1e-12)       # curvature bound


def test_capped_saturates(capped_law):
    assert laws.psi(capped_law, capped_law.delta_cap) == capped_law.kappa
    assert laws.psi(capped_law, 10.0) == capped_law.kappa
    assert laws.dpsi(capped_law, 3.0) == 0.0
    assert capped_law.lam == pytest.approx(6 * capped_law.kappa
                                           / capped_law.delta_cap**2)


# ----------------------------------------------------------------------
# phi and its partials
# ----------------------------------------------------------------------

def test_phi_examples(exp_law):
    assert laws.phi(exp_law, 0.0, 0.0) == 0.0
    # y >= z branch is psi(y)
    for y, z in [(1.0, 0.5), (2.0, 2.0), (0.3, 0.0)]:
        assert laws.phi(exp_law, y, z) == laws.psi(exp_law, y)
    assert laws.phi(exp_law, 0.5, 1.0) == pytest.approx(PHI_05_1, abs=1e-15)


def test_dphi_dy_examples(exp_law):
    assert laws.dphi_dy(exp_law, 0.0, 1.0) == 0.0
    z = 0.7
    assert laws.dphi_dy(exp_law, z, z) == laws.dpsi(exp_law, z)
    assert laws.dphi_dy(exp_law, 0.5, 1.0) == pytest.approx(DPHI_DY_05_1, abs=1e-15)


def test_dphi_dz_examples(exp_law):
    assert laws.dphi_dz(exp_law, 1.0, 0.5) == 0.0
    assert laws.dphi_dz(exp_law, 0.7, 0.7) == 0.0
    assert laws.dphi_dz(exp_law, 0.5, 1.0) == pytest.approx(DPHI_DZ_05_1, abs=1e-15)


@pytest.mark.parametrize("kind", ["exp", "capped"])
def test_derivatives_match_finite_differences(kind, exp_law, capped_law):
    law = exp_law if kind == "exp" else capped_law
    h = 1e-6
    seams = [law.delta_cap] if kind == "capped" else []
    rng = np.random.default_rng(0)
    pts = rng.uniform(2 * h, 3 * law.curvature_scale, size=(300, 2))
    for y, z in pts:
        if abs(y - z) < 10 * h or any(abs(v - s) < 10 * h
                                      for v in (y, z) for s in seams):
            continue
        fd_y = (laws.phi(law, y + h, z) - laws.phi(law, y - h, z)) / (2 * h)
        fd_z = (laws.phi(law, y, z + h) - laws.phi(law, y, z - h)) / (2 * h)
        ref_y, ref_z = laws.dphi_dy(law, y, z), laws.dphi_dz(law, y, z)
        # abs floor covers the eps_mach*|phi|/h noise of the quotient
        assert fd_y == pytest.approx(ref_y, rel=1e-6, abs=1e-8)
        assert fd_z == pytest.approx(ref_z, rel=1e-6, abs=1e-8)


@pytest.mark.parametrize("kind", ["exp", "capped"])
def test_phi_properties_on_grid(kind, exp_law, capped_law):
    """Nonnegativity, bound, monotonicity in each slot, branch identity."""
    law = exp_law if kind == "exp" else capped_law
    Y, Z = grid(law)
    P = laws.phi(law, Y, Z)
    assert np.all(P >= 0) and np.all(P <= law.sup + 1e-14)
    assert np.all(np.diff(P, axis=0) >= -1e-14)       # y-monotone
    assert np.all(np.diff(P, axis=1) >= -1e-14)       # z-monotone
    D = laws.dphi_dy(law, Y, Z)
    assert np.all(D >= 0) and np.all(D <= law.slope0 + 1e-14)
    assert np.all(D <= laws.dpsi(law, Z) + 1e-14)     # <= d_y phi(z, z)
    # strict z-increase on z > y
    DZ = laws.dphi_dz(law, Y, Z)
    inside = (Z > Y) & (Z < (law.delta_cap if kind == "capped" else np.inf))
    assert np.all(DZ[inside] > 0)
    # branch identity phi(y, z) = phi(y, max(z, y)), exactly
    assert np.array_equal(P, laws.phi(law, Y, np.maximum(Z, Y)))


@pytest.mark.parametrize("kind", ["exp", "capped"])
def test_phi_midpoint_lambda_convexity(kind, exp_law, capped_law):
    law = exp_law if kind == "exp" else capped_law
    s = np.linspace(0.0, 3 * law.curvature_scale, 40)
    A, B, Z = np.meshgrid(s, s, s, indexing="ij")
    lhs = laws.phi(law, (A + B) / 2, Z)
    rhs = (laws.phi(law, A, Z) + laws.phi(law, B, Z)) / 2 \
        + law.lam / 8 * (A - B) ** 2
    assert np.all(lhs <= rhs + 1e-12)


# ----------------------------------------------------------------------
# Regularization
# ----------------------------------------------------------------------

def test_fixed_point_values(exp_law):
    assert laws.fixed_point_z_eps(exp_law, 0.1) == pytest.approx(Z_EPS_01, abs=1e-14)
    assert laws.fixed_point_z_eps(exp_law, 1.0) == pytest.approx(Z_EPS_1, abs=1e-14)


@pytest.mark.parametrize("kind", ["exp", "capped"])
def test_fixed_point_residual_and_limit(kind, exp_law, capped_law):
    law = exp_law if kind == "exp" else capped_law
    prev = None
    for eps in [1.0, 0.3, 0.1, 0.03, 0.01, 0.003]:
        z = laws.fixed_point_z_eps(law, eps)
        assert abs(z - eps * laws.dpsi(law, z)) <= 1e-14 * (1 + z)
        if prev is not None:
            assert z < prev
        prev = z
    assert laws.fixed_point_z_eps(law, 1e-8) / 1e-8 == pytest.approx(
        law.slope0, rel=1e-6)


def test_psi_eps_branches(exp_law):
    reg = RegularizedLaw(exp_law, 0.1)
    assert reg.z_eps == pytest.approx(Z_EPS_01, abs=1e-14)
    assert laws.psi_eps(reg, 0.0) == 0.0
    assert laws.dpsi_eps(reg, 0.0) == 0.0
    assert laws.psi_eps(reg, 0.05) == pytest.approx(0.0125, abs=1e-15)
    assert laws.dpsi_eps(reg, 0.05) == pytest.approx(0.5, abs=1e-15)
    z = np.linspace(reg.z_eps, 3.0, 100)
    assert np.array_equal(laws.dpsi_eps(reg, z), laws.dpsi(exp_law, z))


@pytest.mark.parametrize("kind", ["exp", "capped"])
def test_dpsi_eps_is_min_exactly(kind, exp_law, capped_law):
    law = exp_law if kind == "exp" else capped_law
    reg = RegularizedLaw(law, 0.2)
    z = np.linspace(0.0, 3 * law.curvature_scale, 500)
    assert np.array_equal(laws.dpsi_eps(reg, z),
                          np.minimum(z / reg.eps, laws.dpsi(law, z)))


def test_phi_eps_zero_slip_line(exp_law):
    reg = RegularizedLaw(exp_law, 0.1)
    z = np.linspace(0.0, 3.0, 50)
    expected = laws.psi_eps(reg, z) - z * laws.dpsi_eps(reg, z) / 2
    got = laws.phi_eps(reg, np.zeros_like(z), z)
    got[0] = laws.phi_eps(reg, 0.0, 0.0)   # (0,0) sits on the y >= z branch
    assert np.allclose(got, np.where(z > 0, expected, 0.0), atol=1e-15)
    assert np.all(laws.dphi_eps_dy(reg, np.zeros_like(z), z) == 0.0)


def test_phi_eps_offset_past_z_eps(exp_law):
    """For y, z beyond z_eps the two densities differ by the exact constant
    z_eps^2/(2 eps) - psi(z_eps): the z_eps-dependence cancels elsewhere."""
    reg = RegularizedLaw(exp_law, 0.1)
    c = reg.z_eps**2 / (2 * reg.eps) - laws.psi(exp_law, reg.z_eps)
    for y, z in [(0.5, 1.0), (1.0, 0.5), (2.0, 2.5), (0.2, 0.2)]:
        gap = laws.phi_eps(reg, y, z) - laws.phi(exp_law, y, z)
        assert gap == pytest.approx(c, abs=1e-15)
        assert laws.dphi_eps_dy(reg, y, z) == laws.dphi_dy(exp_law, y, z)


@pytest.mark.parametrize("kind", ["exp", "capped"])
def test_phi_eps_uniform_convergence_bound(kind, exp_law, capped_law):
    """Prop-style bound: sup |phi_eps - phi| <= sup|psi_eps - psi|
    + psi'(0)/2 * z_eps + 2 psi'(0) z_eps, decreasing to 0 with eps."""
    law = exp_law if kind == "exp" else capped_law
    Y, Z = grid(law, 120)
    P = laws.phi(law, Y, Z)
    sups, bounds = [], []
    for eps in [1.0, 0.3, 0.1, 0.03, 0.01]:
        reg = RegularizedLaw(law, eps)
        sup = float(np.max(np.abs(laws.phi_eps(reg, Y, Z) - P)))
        bound = laws.phi_eps_gap_bound(reg)
        assert sup <= bound + 1e-14
        sups.append(sup)
        bounds.append(bound)
    assert np.all(np.diff(sups) < 0)
    assert np.all(np.diff(bounds) < 0)


def test_phi_eps_c1_in_y_at_origin(exp_law):
    reg = RegularizedLaw(exp_law, 0.1)
    assert laws.dphi_eps_dy(reg, 0.0, 0.0) == 0.0
    h = 1e-8
    assert laws.dphi_eps_dy(reg, h, 0.0) <= 2 * h / reg.eps
    D = laws.dphi_eps_dy(reg, *grid(exp_law, 60))
    assert np.all(D >= 0) and np.all(D <= exp_law.slope0 + 1e-14)


def test_hessian_coefficients_match_fd(exp_law):
    reg = RegularizedLaw(exp_law, 0.1)
    h = 1e-6
    rng = np.random.default_rng(1)
    for _ in range(100):
        y, z = rng.uniform(2 * h, 2.5, 2)
        if abs(y - z) < 10 * h or abs(y - reg.z_eps) < 10 * h:
            continue
        fd = (laws.dphi_eps_dy(reg, y + h, z)
              - laws.dphi_eps_dy(reg, y - h, z)) / (2 * h)
        assert laws.d2phi_eps_dy2(reg, y, z) == pytest.approx(fd, rel=1e-5, abs=1e-8)
        assert laws.dphi_eps_dy_over_y(reg, y, z) == pytest.approx(
            laws.dphi_eps_dy(reg, y, z) / y, rel=1e-12)


def test_invalid_law_parameters():
    with pytest.raises(ValueError):
        CohesiveLaw("exponential", kappa=-1.0, rho=1.0)
    with pytest.raises(ValueError):
        CohesiveLaw("exponential", kappa=1.0)
    with pytest.raises(ValueError):
        CohesiveLaw("cubic_capped", kappa=1.0)
    with pytest.raises(ValueError):
        CohesiveLaw("nope", kappa=1.0, rho=1.0)
    with pytest.raises(ValueError):
        laws.fixed_point_z_eps(CohesiveLaw("exponential", kappa=1.0, rho=1.0), -0.1)
