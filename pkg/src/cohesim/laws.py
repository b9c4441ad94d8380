"""Cohesive interface laws.

The interface response is governed by a scalar loading function ``psi``
(strictly increasing, bounded, concave, C^2 with a curvature bound
``psi'' >= -lam``) from which the two-branch cohesive energy density

    phi(y, z) = psi'(z)/(2z) * y^2 + psi(z) - z*psi'(z)/2   if y < z
                psi(y)                                       otherwise

is built: the quadratic branch models elastic unloading below the maximal
slip ``z`` reached so far, the ``psi`` branch the dissipative loading
envelope.  A kink-free regularization ``psi_eps`` (quadratic of stiffness
1/eps below the fixed point ``z_eps`` of ``s -> eps*psi'(s)``, shifted
``psi`` above) removes the slope discontinuity of ``phi`` at zero slip so
the solver can assemble derivatives everywhere.

Two parametric families are provided:

* ``exponential``:  psi(z) = kappa*(1 - exp(-rho*z))
* ``cubic_capped``: kappa * s*(s^2 - 3s + 3) with s = z/delta_cap on
  [0, delta_cap], constant kappa past it (complete decohesion).

All evaluators are vectorized over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CohesiveLaw",
    "RegularizedLaw",
    "psi",
    "dpsi",
    "ddpsi",
    "phi",
    "dphi_dy",
    "dphi_dz",
    "fixed_point_z_eps",
    "psi_eps",
    "dpsi_eps",
    "ddpsi_eps",
    "phi_eps",
    "dphi_eps_dy",
    "dphi_eps_dz",
    "d2phi_eps_dy2",
    "dphi_eps_dy_over_y",
    "phi_eps_gap_bound",
]

_KINDS = ("exponential", "cubic_capped")


@dataclass(frozen=True)
class CohesiveLaw:
    """Parametric loading function psi with its curvature bound.

    Parameters
    ----------
    kind : str
        ``"exponential"`` or ``"cubic_capped"``.
    kappa : float
        Energy plateau sup psi (stiffness*length units).
    rho : float, optional
        Decay rate of the exponential family (1/length).
    delta_cap : float, optional
        Slip at which the capped cubic saturates.
    """

    kind: str
    kappa: float
    rho: float | None = None
    delta_cap: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown cohesive law kind {self.kind!r}")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.kind == "exponential":
            if self.rho is None or self.rho <= 0:
                raise ValueError("exponential law needs rho > 0")
        else:
            if self.delta_cap is None or self.delta_cap <= 0:
                raise ValueError("cubic_capped law needs delta_cap > 0")

    @property
    def lam(self) -> float:
        """Curvature bound: psi''(z) >= -lam for all z >= 0."""
        if self.kind == "exponential":
            return self.kappa * self.rho**2
        return 6.0 * self.kappa / self.delta_cap**2

    @property
    def slope0(self) -> float:
        """psi'(0), the initial interface stiffness (= sup of psi')."""
        if self.kind == "exponential":
            return self.kappa * self.rho
        return 3.0 * self.kappa / self.delta_cap

    @property
    def sup(self) -> float:
        """sup_z psi(z); both families saturate at kappa."""
        return self.kappa

    @property
    def curvature_scale(self) -> float:
        """Characteristic slip over which psi bends (1/rho or delta_cap)."""
        if self.kind == "exponential":
            return 1.0 / self.rho
        return self.delta_cap


def _check_nonneg(z, name="z"):
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError(f"{name} must be nonnegative")
    return z


def psi(law: CohesiveLaw, z):
    """Loading function psi(z); monotone, psi(0)=0, bounded by law.sup."""
    z = _check_nonneg(z)
    if law.kind == "exponential":
        out = law.kappa * (1.0 - np.exp(-law.rho * z))
    else:
        s = np.minimum(z / law.delta_cap, 1.0)
        out = law.kappa * s * (s * s - 3.0 * s + 3.0)
    return out if out.ndim else float(out)


def dpsi(law: CohesiveLaw, z):
    """psi'(z); positive, nonincreasing, dpsi(0) = law.slope0."""
    z = _check_nonneg(z)
    if law.kind == "exponential":
        out = law.kappa * law.rho * np.exp(-law.rho * z)
    else:
        s = z / law.delta_cap
        out = np.where(s < 1.0, 3.0 * law.kappa / law.delta_cap * (1.0 - s) ** 2, 0.0)
    return out if out.ndim else float(out)


def ddpsi(law: CohesiveLaw, z):
    """psi''(z); for the capped cubic the kink value at delta_cap is one-sided (0)."""
    z = _check_nonneg(z)
    if law.kind == "exponential":
        out = -law.kappa * law.rho**2 * np.exp(-law.rho * z)
    else:
        s = z / law.delta_cap
        out = np.where(s < 1.0, 6.0 * law.kappa / law.delta_cap**2 * (s - 1.0), 0.0)
    return out if out.ndim else float(out)


# ----------------------------------------------------------------------
# Two-branch density phi and its partial derivatives.
# ----------------------------------------------------------------------

def _two_branch(y, z, below, at_or_above):
    """Select ``below(y, z_safe)`` on y < z, else ``at_or_above(y)``.

    ``z_safe`` replaces z by 1 where the y < z branch is inactive so the
    quotient psi'(z)/z never divides by zero (y < z implies z > 0).
    """
    y = _check_nonneg(y, "y")
    z = _check_nonneg(z, "z")
    y, z = np.broadcast_arrays(y, z)
    unloading = y < z
    z_safe = np.where(unloading, z, 1.0)
    out = np.where(unloading, below(y, z_safe), at_or_above(y))
    return out if out.ndim else float(out)


def phi(law: CohesiveLaw, y, z):
    """Cohesive energy density phi(y, z) for slip y and history slip z."""
    return _two_branch(
        y, z,
        lambda y, z: dpsi(law, z) / (2.0 * z) * y**2 + psi(law, z) - z * dpsi(law, z) / 2.0,
        lambda y: psi(law, y),
    )


def dphi_dy(law: CohesiveLaw, y, z):
    """d(phi)/dy; in [0, psi'(0)].

    At the seam y = z both branches agree (= psi'(z)).  At the origin the
    y >= z branch applies and returns the one-sided value psi'(0); the
    unregularized density is not differentiable there and the solver never
    uses this value (it differentiates phi_eps instead).
    """
    return _two_branch(
        y, z,
        lambda y, z: dpsi(law, z) * y / z,
        lambda y: dpsi(law, y),
    )


def dphi_dz(law: CohesiveLaw, y, z):
    """d(phi)/dz; zero for z <= y, positive for z > y >= 0."""
    y = _check_nonneg(y, "y")
    z = _check_nonneg(z, "z")
    y, z = np.broadcast_arrays(y, z)
    growing = z > y
    z_safe = np.where(growing, z, 1.0)
    expr = (dpsi(law, z_safe) - z_safe * ddpsi(law, z_safe)) / 2.0 * (1.0 - y**2 / z_safe**2)
    out = np.where(growing, expr, 0.0)
    return out if out.ndim else float(out)


# ----------------------------------------------------------------------
# Regularization.
# ----------------------------------------------------------------------

def fixed_point_z_eps(law: CohesiveLaw, eps: float, rtol: float = 1e-15) -> float:
    """Unique fixed point of s -> eps*psi'(s), by bisection.

    psi' is decreasing, so g(s) = eps*psi'(s) - s crosses zero exactly once
    in (0, upper] with upper = min(eps*psi'(0), delta_cap if capped).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    upper = eps * law.slope0
    if law.kind == "cubic_capped":
        upper = min(upper, law.delta_cap)
    lo, hi = 0.0, upper
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if eps * dpsi(law, mid) - mid > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * (1.0 + hi):
            break
    z = 0.5 * (lo + hi)
    if abs(z - eps * dpsi(law, z)) > 1e-14 * (1.0 + z):
        raise RuntimeError("fixed-point iteration for z_eps did not converge")
    return z


@dataclass(frozen=True)
class RegularizedLaw:
    """Cohesive law with the zero-slip kink smoothed at scale eps.

    ``z_eps`` is solved once at construction and cached; it satisfies
    z_eps = eps*psi'(z_eps) to 1e-14 relative tolerance.
    """

    base: CohesiveLaw
    eps: float
    z_eps: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "z_eps", fixed_point_z_eps(self.base, self.eps))


def psi_eps(reg: RegularizedLaw, z):
    """Regularized loading function: z^2/(2 eps) below z_eps, shifted psi above."""
    z = _check_nonneg(z)
    law, e, ze = reg.base, reg.eps, reg.z_eps
    out = np.where(
        z <= ze,
        z * z / (2.0 * e),
        psi(law, z) - psi(law, ze) + ze * ze / (2.0 * e),
    )
    return out if out.ndim else float(out)


def dpsi_eps(reg: RegularizedLaw, z):
    """psi_eps'(z) = min(z/eps, psi'(z)), exactly."""
    z = _check_nonneg(z)
    out = np.minimum(z / reg.eps, dpsi(reg.base, z))
    return out if out.ndim else float(out)


def ddpsi_eps(reg: RegularizedLaw, z):
    """psi_eps''(z); the jump at z_eps takes the psi'' side for z >= z_eps."""
    z = _check_nonneg(z)
    out = np.where(z < reg.z_eps, 1.0 / reg.eps, ddpsi(reg.base, z))
    return out if out.ndim else float(out)


def phi_eps(reg: RegularizedLaw, y, z):
    """Regularized density: phi with psi replaced by psi_eps."""
    return _two_branch(
        y, z,
        lambda y, z: dpsi_eps(reg, z) / (2.0 * z) * y**2 + psi_eps(reg, z) - z * dpsi_eps(reg, z) / 2.0,
        lambda y: psi_eps(reg, y),
    )


def dphi_eps_dy(reg: RegularizedLaw, y, z):
    """d(phi_eps)/dy; C^1 in y including the origin, in [0, psi'(0)]."""
    return _two_branch(
        y, z,
        lambda y, z: dpsi_eps(reg, z) * y / z,
        lambda y: dpsi_eps(reg, y),
    )


def dphi_eps_dz(reg: RegularizedLaw, y, z):
    """d(phi_eps)/dz; zero for z <= y."""
    y = _check_nonneg(y, "y")
    z = _check_nonneg(z, "z")
    y, z = np.broadcast_arrays(y, z)
    growing = z > y
    z_safe = np.where(growing, z, 1.0)
    expr = (dpsi_eps(reg, z_safe) - z_safe * ddpsi_eps(reg, z_safe)) / 2.0 * (1.0 - y**2 / z_safe**2)
    out = np.where(growing, expr, 0.0)
    return out if out.ndim else float(out)


def d2phi_eps_dy2(reg: RegularizedLaw, y, z):
    """Second y-derivative; one-sided values at the seams y=z and y=z_eps."""
    return _two_branch(
        y, z,
        lambda y, z: dpsi_eps(reg, z) / z + 0.0 * y,
        lambda y: ddpsi_eps(reg, y),
    )


def dphi_eps_dy_over_y(reg: RegularizedLaw, y, z):
    """dphi_eps_dy(y, z)/y with its y->0 limit; the tangential Hessian weight.

    On the quadratic branch this is psi_eps'(z)/z independently of y; on the
    loading branch it is psi_eps'(y)/y, which tends to 1/eps at the origin.
    """
    y = _check_nonneg(y, "y")
    z = _check_nonneg(z, "z")
    y, z = np.broadcast_arrays(y, z)
    unloading = y < z
    z_safe = np.where(unloading, z, 1.0)
    y_safe = np.where((~unloading) & (y > 0), y, 1.0)
    loading = np.where(
        y >= reg.z_eps,
        dpsi(reg.base, np.where(~unloading, y, 1.0)) / y_safe,
        1.0 / reg.eps,
    )
    out = np.where(unloading, dpsi_eps(reg, z_safe) / z_safe, loading)
    return out if out.ndim else float(out)


def phi_eps_gap_bound(reg: RegularizedLaw) -> float:
    """Analytic bound on sup |phi_eps - phi| over the whole quadrant.

    sup|psi_eps - psi| is attained at z_eps (the difference grows on
    [0, z_eps] and is constant after), and the slope mismatch contributes
    at most psi'(0)*z_eps/2 through the shifted-branch constant plus
    2*psi'(0)*z_eps through the integrated derivative gap.
    """
    law, ze = reg.base, reg.z_eps
    sup_psi_gap = psi(law, ze) - ze * ze / (2.0 * reg.eps)
    return sup_psi_gap + 0.5 * law.slope0 * ze + 2.0 * law.slope0 * ze
