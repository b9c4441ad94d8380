"""Isotropic elasticity tensors and the discrete Korn-Poincare constant.

The stiffness of each plate is an isotropic fourth-order tensor field

    C(x) A = lam(x) tr(A) I + 2 mu(x) A_sym,

homogeneous or with affinely varying Lame coefficients, optionally degraded
by a scalar damage variable through the factor eta + (1 - alpha)^2 (eta > 0
keeps coercivity at full damage; the degradation form is standard
phase-field practice).  The module also estimates the constant K2h of the
discrete Korn-Poincare inequality ||v||_H1 <= K2h ||e(v)||_L2 on the FE
subspace vanishing on the Dirichlet nodes, via the generalized eigenproblem
of the symmetric-gradient and H^1 Gram matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .errors import ConfigError
from .fem import FESpace, sym_grad_gram, vector_h1_gram

__all__ = [
    "ElasticTensor",
    "apply_tensor",
    "coercivity_constant",
    "modulus_bound",
    "estimate_korn_constant",
]


@dataclass(frozen=True)
class ElasticTensor:
    """Isotropic stiffness, homogeneous or with affine Lame fields.

    Homogeneous: ``lam(x) = lame_lambda``, ``mu(x) = lame_mu``.
    Field kind adds affine variation ``lame_lambda + lambda_grad . x`` (same
    for mu).  ``eta`` enables damage coupling: the tensor is scaled by
    eta + (1 - alpha)^2.
    """

    dim: int
    lame_lambda: float
    lame_mu: float
    lambda_grad: tuple | None = None
    mu_grad: tuple | None = None
    eta: float | None = None

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError("tensor dimension must be 1 or 2")
        if self.eta is not None and self.eta <= 0:
            raise ConfigError("damage residual factor eta must be positive")
        for g in (self.lambda_grad, self.mu_grad):
            if g is not None and len(g) != self.dim:
                raise ConfigError("Lame gradient length must match dimension")

    @property
    def is_field(self) -> bool:
        return self.lambda_grad is not None or self.mu_grad is not None

    def lame_at(self, x: np.ndarray):
        """Lame pair at points x of shape (..., dim)."""
        x = np.asarray(x, dtype=float)
        lam = np.full(x.shape[:-1], self.lame_lambda)
        mu = np.full(x.shape[:-1], self.lame_mu)
        if self.lambda_grad is not None:
            lam = lam + x @ np.asarray(self.lambda_grad)
        if self.mu_grad is not None:
            mu = mu + x @ np.asarray(self.mu_grad)
        return lam, mu


def _degradation(tensor: ElasticTensor, alpha):
    if alpha is None:
        return 1.0
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise ValueError("damage value outside [0, 1]")
    if tensor.eta is None:
        raise ConfigError("tensor has no damage coupling (eta unset)")
    return tensor.eta + (1.0 - alpha) ** 2


def apply_tensor(tensor: ElasticTensor, x, A, alpha=None) -> np.ndarray:
    """Evaluate C(x[, alpha]) A; A may be batched as (..., dim, dim)."""
    A = np.asarray(A, dtype=float)
    lam, mu = tensor.lame_at(x)
    lam = np.asarray(lam)[..., None, None]
    mu = np.asarray(mu)[..., None, None]
    A_sym = 0.5 * (A + np.swapaxes(A, -1, -2))
    tr = np.trace(A, axis1=-2, axis2=-1)[..., None, None]
    out = lam * tr * np.eye(tensor.dim) + 2.0 * mu * A_sym
    scale = _degradation(tensor, alpha)
    if np.ndim(scale):
        scale = np.asarray(scale)[..., None, None]
    return scale * out


def coercivity_constant(tensor: ElasticTensor, points=None) -> float:
    """Largest c with C(x)A:A >= c |A_sym|^2 everywhere.

    c(x) = 2 mu if lam >= 0, else n lam + 2 mu; field tensors take the
    minimum over ``points`` (affine coefficients attain extremes at box
    corners, so mesh nodes suffice).  Damage coupling multiplies by the
    worst case eta (alpha = 1).
    """
    if tensor.is_field:
        if points is None:
            raise ConfigError("field tensor needs sample points for coercivity")
        lam, mu = tensor.lame_at(np.asarray(points))
    else:
        lam, mu = np.array([tensor.lame_lambda]), np.array([tensor.lame_mu])
    n = tensor.dim
    if np.any(mu <= 0) or np.any(n * lam + 2 * mu <= 0):
        raise ConfigError("inadmissible Lame pair: need mu > 0 and n*lam + 2*mu > 0")
    c = float(np.min(np.where(lam >= 0, 2 * mu, n * lam + 2 * mu)))
    if tensor.eta is not None:
        c *= tensor.eta
    return c


def modulus_bound(tensor: ElasticTensor, points=None) -> float:
    """Upper bound M with |C(x)A| <= M |A| (worst case over the domain)."""
    if tensor.is_field:
        if points is None:
            raise ConfigError("field tensor needs sample points for modulus bound")
        lam, mu = tensor.lame_at(np.asarray(points))
    else:
        lam, mu = np.array([tensor.lame_lambda]), np.array([tensor.lame_mu])
    M = float(np.max(tensor.dim * np.abs(lam) + 2 * mu))
    if tensor.eta is not None:
        M *= tensor.eta + 1.0
    return M


def estimate_korn_constant(space: FESpace, dense_cutoff: int = 1500) -> float:
    """K2h = 1/sqrt(sigma_min) of  e-Gram v = sigma H1-Gram v  on free dofs.

    Certifies ||v||_H1 <= K2h ||e(v)||_L2 for every FE field vanishing on
    the Dirichlet nodes.  Small problems use a dense generalized eigensolve;
    larger ones shift-invert Lanczos.
    """
    if space.mesh.dirichlet_nodes.size == 0:
        raise ConfigError("Korn estimate needs a nonempty Dirichlet node set")
    if space.ncomp != space.mesh.dim:
        raise ConfigError("Korn estimate expects the vector displacement space")
    A = sym_grad_gram(space)
    B = vector_h1_gram(space)
    free = space.free_dofs
    A_ff = A[np.ix_(free, free)]
    B_ff = B[np.ix_(free, free)]
    nf = free.size
    if nf <= dense_cutoff:
        sig = scipy.linalg.eigh(A_ff.toarray(), B_ff.toarray(),
                                subset_by_index=[0, 0], eigvals_only=True)
        sigma_min = float(sig[0])
    else:
        vals = spla.eigsh(A_ff.tocsc(), k=1, M=B_ff.tocsc(), sigma=0.0,
                          which="LM", return_eigenvectors=False)
        sigma_min = float(vals[0])
    if not np.isfinite(sigma_min) or sigma_min <= 0:
        raise RuntimeError("singular Gram pencil in Korn estimate")
    return 1.0 / np.sqrt(sigma_min)
