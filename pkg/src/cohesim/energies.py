"""Energy functionals on FE fields and their assembled derivatives.

Total energy of the two-plate system at frozen history slip gamma:

    F(u1, u2) = sum_i 1/2 int C_i(x[, alpha_i]) e(u_i) : e(u_i) dx
              + int Phi(|u1 - u2|, gamma) dx
              [+ sum_i int (w_i(alpha_i) + |grad alpha_i|^r / r) dx]

Slip magnitude |u1 - u2| and gamma are evaluated at quadrature points (P1
interpolation), which makes the evaluated energy and the assembled
gradient/Hessian exactly compatible - the Newton solver relies on that.
Cell contributions are always summed in fixed cell order, so repeated
evaluation is bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import laws
from .errors import StateCorruptionError
from .fem import FEField, FESpace, LoadingProgram, h1_norm
from .laws import CohesiveLaw, RegularizedLaw
from .materials import ElasticTensor

__all__ = [
    "EnergyBreakdown",
    "elastic_energy",
    "elastic_inner",
    "cohesive_energy",
    "damage_energy",
    "work_increment",
    "shifted_energy_gap",
    "DisplacementOperator",
    "damage_gradient",
    "total_energy",
]


@dataclass
class EnergyBreakdown:
    """Per-state energy decomposition; totals exclude accumulated work.

    ``cohesive`` integrates the unregularized density, ``cohesive_reg`` the
    regularized one actually minimized by the solver (equal when the state
    was produced without regularization).
    """

    elastic_1: float
    elastic_2: float
    cohesive: float
    cohesive_reg: float | None = None
    damage_internal: float = 0.0
    damage_gradient: float = 0.0
    work_accumulated: float = 0.0

    @property
    def elastic(self) -> float:
        return self.elastic_1 + self.elastic_2

    @property
    def total(self) -> float:
        return (self.elastic + self.cohesive
                + self.damage_internal + self.damage_gradient)

    @property
    def total_reg(self) -> float:
        coh = self.cohesive if self.cohesive_reg is None else self.cohesive_reg
        return (self.elastic + coh
                + self.damage_internal + self.damage_gradient)


# ----------------------------------------------------------------------
# Pointwise density dispatch (regularized or not).
# ----------------------------------------------------------------------

def _density(lawlike, y, z):
    if isinstance(lawlike, RegularizedLaw):
        return laws.phi_eps(lawlike, y, z)
    return laws.phi(lawlike, y, z)


def _density_dy(lawlike, y, z):
    if isinstance(lawlike, RegularizedLaw):
        return laws.dphi_eps_dy(lawlike, y, z)
    return laws.dphi_dy(lawlike, y, z)


# ----------------------------------------------------------------------
# Quadrature-level material coefficients.
# ----------------------------------------------------------------------

def _lame_weights(space: FESpace, tensor: ElasticTensor, alpha: FEField | None):
    """Quadrature-weighted Lame coefficients per cell: (lam_w, mu_w).

    lam_w[m] = sum_q w_q * deg(alpha_q) * lam(x_q); integrating a cellwise
    constant strain against them reproduces the quadrature of C e : e.
    """
    lam_q, mu_q = tensor.lame_at(space.quad_points)     # (M, nq)
    if alpha is not None:
        a_q = alpha.at_quad()
        if np.any(alpha.values < -1e-12) or np.any(alpha.values > 1 + 1e-12):
            raise ValueError("damage field outside [0, 1]")
        deg = tensor.eta + (1.0 - np.clip(a_q, 0.0, 1.0)) ** 2
    else:
        deg = 1.0
    w = space.quad_weights[None, :]
    return np.sum(w * deg * lam_q, axis=1), np.sum(w * deg * mu_q, axis=1)


def _strain_energy_cells(u: FEField, lam_w, mu_w):
    e = u.sym_grad_at_cells()
    tr = np.trace(e, axis1=-2, axis2=-1)
    ee = np.sum(e * e, axis=(-2, -1))
    return 0.5 * u.space.cell_measure * (lam_w * tr**2 + 2.0 * mu_w * ee)


def elastic_energy(u1: FEField, u2: FEField, tensors, alphas=None) -> float:
    """Total bulk elastic energy of the two layers."""
    if u1.space is not u2.space:
        raise ValueError("displacement fields must share one FE space")
    parts = elastic_energy_parts(u1, u2, tensors, alphas)
    return parts[0] + parts[1]


def elastic_energy_parts(u1: FEField, u2: FEField, tensors, alphas=None):
    alphas = alphas or (None, None)
    out = []
    for u, t, a in zip((u1, u2), tensors, alphas):
        lam_w, mu_w = _lame_weights(u.space, t, a)
        out.append(float(np.sum(_strain_energy_cells(u, lam_w, mu_w))))
    return tuple(out)


def elastic_inner(u: FEField, v: FEField, tensor: ElasticTensor,
                  alpha: FEField | None = None) -> float:
    """int C(x[, alpha]) e(u) : e(v) dx (one layer)."""
    lam_w, mu_w = _lame_weights(u.space, tensor, alpha)
    eu, ev = u.sym_grad_at_cells(), v.sym_grad_at_cells()
    tru = np.trace(eu, axis1=-2, axis2=-1)
    trv = np.trace(ev, axis1=-2, axis2=-1)
    dots = np.sum(eu * ev, axis=(-2, -1))
    return float(np.sum(u.space.cell_measure * (lam_w * tru * trv + 2.0 * mu_w * dots)))


def _slip_at_quad(u1: FEField, u2: FEField):
    d = u1.at_quad() - u2.at_quad()                     # (M, nq[, n])
    if d.ndim == 2:
        return np.abs(d)
    return np.linalg.norm(d, axis=-1)


def cohesive_energy(u_or_delta, gamma: FEField, lawlike, u2: FEField = None) -> float:
    """Interfacial energy int Phi(.|slip|, gamma) dx.

    Accepts either the displacement pair ``(u1, u2)`` (slip evaluated at
    quadrature points from the vector difference) or a precomputed scalar
    slip field as the first argument with ``u2=None``.
    """
    if np.any(gamma.values < 0):
        raise StateCorruptionError("history slip has negative nodal values")
    if u2 is not None:
        space = u_or_delta.space
        delta_q = _slip_at_quad(u_or_delta, u2)
    else:
        space = u_or_delta.space
        delta_q = u_or_delta.at_quad()
    gamma_q = gamma.at_quad()
    dens = _density(lawlike, delta_q, np.maximum(gamma_q, 0.0))
    return float(np.einsum("m,mq->", space.cell_measure,
                           dens * space.quad_weights[None, :]))


def damage_energy(alpha1: FEField, alpha2: FEField, w_coeffs, r: float) -> float:
    """sum_i int ( w_i(alpha_i) + |grad alpha_i|^r / r ) dx, w_i(s) = w_coeffs[i]*s."""
    n = alpha1.space.mesh.dim
    if r <= n:
        raise ValueError(f"damage gradient exponent r={r} must exceed dim={n}")
    total = 0.0
    for a, w in zip((alpha1, alpha2), w_coeffs):
        space = a.space
        aq = a.at_quad()
        internal = np.einsum("m,mq->", space.cell_measure,
                             w * aq * space.quad_weights[None, :])
        g = a.grad_at_cells()
        gn = np.linalg.norm(g, axis=-1)
        total += float(internal + np.sum(space.cell_measure * gn**r) / r)
    return total


def work_increment(u1: FEField, u2: FEField, tensors, program: LoadingProgram,
                   t_left: float, t_right: float, alphas=None) -> float:
    """Work of the loading over [t_left, t_right] against the frozen state.

    Equals int_{t_left}^{t_right} sum_i <C_i e(u_i), e(w'(s))> ds with the
    state held at its value at t_left (the piecewise-constant-in-time
    interpolant), i.e. (s(t_right) - s(t_left)) * sum_i <C_i e(u_i), e(g)>.
    """
    ds = program.s(t_right) - program.s(t_left)
    alphas = alphas or (None, None)
    tot = sum(elastic_inner(u, program.g, t, a)
              for u, t, a in zip((u1, u2), tensors, alphas))
    return ds * tot


def total_energy(u1, u2, gamma, tensors, lawlike, reg=None, alphas=None,
                 damage_w=None, damage_r=None, work=0.0) -> EnergyBreakdown:
    """Assemble the full EnergyBreakdown of a state."""
    e1, e2 = elastic_energy_parts(u1, u2, tensors, alphas)
    coh = cohesive_energy(u1, gamma, lawlike, u2=u2)
    coh_reg = None if reg is None else cohesive_energy(u1, gamma, reg, u2=u2)
    if alphas is not None and alphas[0] is not None and damage_w is not None:
        di = damage_energy(alphas[0], alphas[1], damage_w, damage_r)
        # split internal / gradient parts for reporting
        grad_part = sum(
            float(np.sum(a.space.cell_measure
                         * np.linalg.norm(a.grad_at_cells(), axis=-1) ** damage_r))
            / damage_r
            for a in alphas)
        return EnergyBreakdown(e1, e2, coh, coh_reg, di - grad_part, grad_part, work)
    return EnergyBreakdown(e1, e2, coh, coh_reg, 0.0, 0.0, work)


def shifted_energy_gap(ua, ub, gamma: FEField, theta: float, tensors,
                       lawlike, mu: float, program: LoadingProgram | None = None,
                       t: float | None = None) -> float:
    """Uniform-convexity gap of the trace-shifted energy.

    Returns  theta F(a) + (1-theta) F(b) - F(theta a + (1-theta) b)
             - (mu/2) theta (1-theta) ||a - b||_H1^2

    for two states sharing the Dirichlet trace; nonnegativity over random
    pairs certifies uniform convexity of the shifted functional with
    modulus mu = (c1 ^ c2)/K2h^2 - 2*lambda on the FE space.
    """
    (ua1, ua2), (ub1, ub2) = ua, ub
    dn = ua1.space.mesh.dirichlet_nodes
    scale = 1.0 + max(np.abs(ua1.values).max(), np.abs(ub1.values).max())
    for fa, fb in ((ua1, ub1), (ua2, ub2)):
        if np.max(np.abs(fa.values[dn] - fb.values[dn])) > 1e-10 * scale:
            raise ValueError("states do not share the Dirichlet trace")
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")

    def F(u1, u2):
        return (elastic_energy(u1, u2, tensors)
                + cohesive_energy(u1, gamma, lawlike, u2=u2))

    mid1 = FEField(ua1.space, theta * ua1.values + (1 - theta) * ub1.values)
    mid2 = FEField(ua2.space, theta * ua2.values + (1 - theta) * ub2.values)
    diff_sq = (h1_norm(FEField(ua1.space, ua1.values - ub1.values)) ** 2
               + h1_norm(FEField(ua2.space, ua2.values - ub2.values)) ** 2)
    return (theta * F(ua1, ua2) + (1 - theta) * F(ub1, ub2) - F(mid1, mid2)
            - 0.5 * mu * theta * (1 - theta) * diff_sq)


# ----------------------------------------------------------------------
# Assembled derivatives of the regularized energy in the displacement pair.
# ----------------------------------------------------------------------

class DisplacementOperator:
    """Energy/gradient/Hessian of F_eps(t, ., gamma) in the stacked pair.

    Displacements are passed as one array U of shape (2, n_nodes, ncomp);
    gamma (and per-layer damage) are frozen at construction.  The elastic
    Hessian blocks are constant and cached; the cohesive block is
    reassembled at the current slip.
    """

    def __init__(self, space: FESpace, tensors, reg: RegularizedLaw,
                 gamma: FEField, alphas=None):
        self.space = space
        self.tensors = tensors
        self.reg = reg
        self.gamma_q = np.maximum(gamma.at_quad(), 0.0)
        self.alphas = alphas or (None, None)
        self.lame_w = [
            _lame_weights(space, t, a) for t, a in zip(tensors, self.alphas)
        ]
        self._elastic_blocks = [self._elastic_hessian(i) for i in range(2)]
        # cached index arrays for the cohesive coupling block
        mesh = space.mesh
        nc = space.ncomp
        self._cell_dofs = (mesh.cells[:, :, None] * nc
                           + np.arange(nc)[None, None, :])          # (M, nv, nc)
        self.n_dofs_layer = space.n_dofs

    # -- elastic ------------------------------------------------------

    def _elastic_hessian(self, i) -> sp.csr_matrix:
        space = self.space
        lam_w, mu_w = self.lame_w[i]
        G = space.grads                                  # (M, nv, d)
        meas = space.cell_measure
        eye = np.eye(space.ncomp)
        gdot = np.einsum("mad,mbd->mab", G, G)
        term_mu = 0.5 * (gdot[:, :, None, :, None] * eye[None, None, :, None, :]
                         + np.einsum("mbi,maj->maibj", G, G))
        term_lam = np.einsum("mai,mbj->maibj", G, G)
        blocks = (meas * lam_w)[:, None, None, None, None] * term_lam \
            + (2.0 * meas * mu_w)[:, None, None, None, None] * term_mu
        dofs = self._cell_dofs_for(space)
        rows = np.broadcast_to(dofs[:, :, :, None, None], blocks.shape).ravel()
        cols = np.broadcast_to(dofs[:, None, None, :, :], blocks.shape).ravel()
        return sp.coo_matrix((blocks.ravel(), (rows, cols)),
                             shape=(space.n_dofs, space.n_dofs)).tocsr()

    @staticmethod
    def _cell_dofs_for(space):
        nc = space.ncomp
        return space.mesh.cells[:, :, None] * nc + np.arange(nc)[None, None, :]

    # -- pointwise slip quantities -------------------------------------

    def _slip(self, U):
        space = self.space
        nodal = U[:, space.mesh.cells]                   # (2, M, nv, nc)
        uq = np.einsum("qv,smvc->smqc", space.quad_bary, nodal)
        d = uq[0] - uq[1]                                # (M, nq, nc)
        mag = np.linalg.norm(d, axis=-1)
        return d, mag

    # -- public surface -------------------------------------------------

    def energy(self, U) -> float:
        space = self.space
        total = 0.0
        for i in range(2):
            lam_w, mu_w = self.lame_w[i]
            g = np.einsum("mvd,mvc->mcd", space.grads, U[i][space.mesh.cells])
            e = 0.5 * (g + np.swapaxes(g, -1, -2))
            tr = np.trace(e, axis1=-2, axis2=-1)
            ee = np.sum(e * e, axis=(-2, -1))
            total += float(np.sum(
                0.5 * space.cell_measure * (lam_w * tr**2 + 2.0 * mu_w * ee)))
        _, mag = self._slip(U)
        dens = laws.phi_eps(self.reg, mag, self.gamma_q)
        total += float(np.einsum("m,mq->", space.cell_measure,
                                 dens * space.quad_weights[None, :]))
        return total

    def gradient(self, U) -> np.ndarray:
        space = self.space
        out = np.zeros_like(U)
        # elastic parts via the cached quadratic forms
        for i in range(2):
            out[i] = (self._elastic_blocks[i] @ U[i].ravel()).reshape(U[i].shape)
        # cohesive force
        d, mag = self._slip(U)
        force = laws.dphi_eps_dy(self.reg, mag, self.gamma_q)      # (M, nq)
        safe = np.where(mag > 0.0, mag, 1.0)
        f_q = (force / safe)[..., None] * d              # dir(0) = 0 convention
        f_q = f_q * (space.quad_weights[None, :, None]
                     * space.cell_measure[:, None, None])
        loads = np.einsum("qv,mqc->mvc", space.quad_bary, f_q)
        np.add.at(out[0], space.mesh.cells, loads)
        np.add.at(out[1], space.mesh.cells, -loads)
        return out

    def hessian(self, U) -> sp.csr_matrix:
        """Sparse Hessian on the stacked dof vector [u1; u2]."""
        space = self.space
        nd = self.n_dofs_layer
        d, mag = self._slip(U)
        a = laws.d2phi_eps_dy2(self.reg, mag, self.gamma_q)
        b = laws.dphi_eps_dy_over_y(self.reg, mag, self.gamma_q)
        safe = np.where(mag > 0.0, mag, 1.0)
        dirv = d / safe[..., None]
        dirv = np.where((mag > 0.0)[..., None], dirv, 0.0)
        eye = np.eye(space.ncomp)
        H_q = (b[..., None, None] * eye
               + (a - b)[..., None, None] * np.einsum("mqi,mqj->mqij", dirv, dirv))
        w = space.quad_weights
        meas = space.cell_measure
        # local block over (node a, comp i, node b, comp j)
        blocks = np.einsum("q,qa,qb,mqij,m->maibj", w, space.quad_bary,
                           space.quad_bary, H_q, meas)
        dofs = self._cell_dofs
        rows = np.broadcast_to(dofs[:, :, :, None, None], blocks.shape).ravel()
        cols = np.broadcast_to(dofs[:, None, None, :, :], blocks.shape).ravel()
        C = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(nd, nd)).tocsr()
        H11 = self._elastic_blocks[0] + C
        H22 = self._elastic_blocks[1] + C
        return sp.bmat([[H11, -C], [-C, H22]], format="csr")


# ----------------------------------------------------------------------
# Damage-side derivative (for the alternate-minimization alpha solve).
# ----------------------------------------------------------------------

def damage_gradient(alpha: FEField, u: FEField, tensor: ElasticTensor,
                    w_coeff: float, r: float) -> np.ndarray:
    """Nodal gradient of the alpha-energy of one layer at fixed displacement.

    d/d(alpha_a) of  int 1/2 (eta + (1-alpha)^2) C0 e(u):e(u)
                   + int w*alpha + |grad alpha|^r / r.
    """
    space = alpha.space
    lam_q, mu_q = tensor.lame_at(space.quad_points)
    e = u.sym_grad_at_cells()
    tr = np.trace(e, axis1=-2, axis2=-1)
    ee = np.sum(e * e, axis=(-2, -1))
    dens_q = 0.5 * (lam_q * tr[:, None] ** 2 + 2.0 * mu_q * ee[:, None])  # (M, nq)
    a_q = alpha.at_quad()
    ddeg = -2.0 * (1.0 - a_q)                            # d/dalpha of eta+(1-a)^2
    w_full = space.quad_weights[None, :] * space.cell_measure[:, None]
    cellq = w_full * (ddeg * dens_q + w_coeff)
    out = np.zeros(space.n_nodes)
    np.add.at(out, space.mesh.cells,
              np.einsum("qv,mq->mv", space.quad_bary, cellq))
    g = alpha.grad_at_cells()                            # (M, d)
    gn = np.linalg.norm(g, axis=-1)
    coef = np.where(gn > 0.0, gn ** (r - 2.0), 0.0)
    flux = coef[:, None] * g * space.cell_measure[:, None]
    np.add.at(out, space.mesh.cells, np.einsum("mvd,md->mv", space.grads, flux))
    return out
