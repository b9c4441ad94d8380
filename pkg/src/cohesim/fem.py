"""Simplicial P1 finite elements on box domains (n = 1, 2).

Structured meshes of an axis-aligned box, nodal P1 spaces for scalar and
vector fields, Gauss quadrature exact for quadratic integrands, Dirichlet
bookkeeping and the usual Sobolev / nodal Hoelder norms.  Everything is
immutable after construction; fields are plain value objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError

__all__ = [
    "Mesh",
    "FESpace",
    "FEField",
    "LoadingProgram",
    "build_box_mesh",
    "interpolate",
    "lift_dirichlet",
    "l2_norm",
    "semi_h1_norm",
    "h1_norm",
    "h1_norm_pair",
    "holder_seminorm",
    "interior_node_ids",
    "vector_h1_gram",
    "sym_grad_gram",
]

_SIDES_1D = ("left", "right")
_SIDES_2D = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class Mesh:
    """Conforming simplicial mesh of a box with tagged boundary facets."""

    dim: int
    vertices: np.ndarray          # (n_nodes, dim)
    cells: np.ndarray             # (n_cells, dim+1) node ids
    boundary_facets: tuple        # ((node ids), tag) pairs, tag in {dirichlet, neumann}
    dirichlet_nodes: np.ndarray   # sorted node ids
    box: tuple                    # (lo, hi) arrays

    @property
    def n_nodes(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def h(self) -> float:
        """Largest cell diameter."""
        pts = self.vertices[self.cells]
        d = 0.0
        for a in range(pts.shape[1]):
            for b in range(a + 1, pts.shape[1]):
                d = max(d, float(np.max(np.linalg.norm(pts[:, a] - pts[:, b], axis=1))))
        return d


def build_box_mesh(dim, divisions, dirichlet_sides, lengths=None) -> Mesh:
    """Structured simplicial mesh of [0,L1] x ... with tagged sides.

    Parameters
    ----------
    dim : int
        1 or 2.
    divisions : int or tuple of int
        Cells per axis (>= 1).
    dirichlet_sides : sequence of str
        Nonempty subset of {"left","right"} (1D) or
        {"left","right","bottom","top"} (2D).
    lengths : tuple of float, optional
        Box edge lengths, default all 1.
    """
    if dim not in (1, 2):
        raise ConfigError(f"dimension must be 1 or 2, got {dim}")
    divs = (divisions,) * dim if np.isscalar(divisions) else tuple(divisions)
    if len(divs) != dim or any(d < 1 for d in divs):
        raise ConfigError(f"bad divisions {divisions!r} for dim {dim}")
    lens = (1.0,) * dim if lengths is None else tuple(float(L) for L in lengths)
    if len(lens) != dim or any(L <= 0 for L in lens):
        raise ConfigError(f"bad box lengths {lengths!r}")
    sides = _SIDES_1D if dim == 1 else _SIDES_2D
    dirichlet_sides = tuple(dirichlet_sides)
    for s in dirichlet_sides:
        if s not in sides:
            raise ConfigError(f"unknown side {s!r} for dim {dim}")
    if not dirichlet_sides:
        raise ConfigError("at least one Dirichlet side is required")

    if dim == 1:
        nx, = divs
        verts = np.linspace(0.0, lens[0], nx + 1)[:, None]
        cells = np.stack([np.arange(nx), np.arange(1, nx + 1)], axis=1)
        side_nodes = {"left": np.array([0]), "right": np.array([nx])}
        facets = []
        for s in sides:
            tag = "dirichlet" if s in dirichlet_sides else "neumann"
            facets.append((tuple(side_nodes[s]), tag))
    else:
        nx, ny = divs
        xs = np.linspace(0.0, lens[0], nx + 1)
        ys = np.linspace(0.0, lens[1], ny + 1)
        X, Y = np.meshgrid(xs, ys, indexing="xy")
        verts = np.stack([X.ravel(), Y.ravel()], axis=1)
        nid = lambda i, j: j * (nx + 1) + i
        cells = []
        for j in range(ny):
            for i in range(nx):
                v00, v10 = nid(i, j), nid(i + 1, j)
                v01, v11 = nid(i, j + 1), nid(i + 1, j + 1)
                cells.append((v00, v10, v11))
                cells.append((v00, v11, v01))
        cells = np.asarray(cells, dtype=int)
        side_nodes = {
            "left": np.array([nid(0, j) for j in range(ny + 1)]),
            "right": np.array([nid(nx, j) for j in range(ny + 1)]),
            "bottom": np.array([nid(i, 0) for i in range(nx + 1)]),
            "top": np.array([nid(i, ny) for i in range(nx + 1)]),
        }
        facets = []
        edge_runs = {
            "left": [(nid(0, j), nid(0, j + 1)) for j in range(ny)],
            "right": [(nid(nx, j), nid(nx, j + 1)) for j in range(ny)],
            "bottom": [(nid(i, 0), nid(i + 1, 0)) for i in range(nx)],
            "top": [(nid(i, ny), nid(i + 1, ny)) for i in range(nx)],
        }
        for s in sides:
            tag = "dirichlet" if s in dirichlet_sides else "neumann"
            facets.extend((e, tag) for e in edge_runs[s])

    dnodes = np.unique(np.concatenate([side_nodes[s] for s in dirichlet_sides]))
    box = (np.zeros(dim), np.asarray(lens))
    return Mesh(dim, verts, cells, tuple(facets), dnodes, box)


# ----------------------------------------------------------------------
# P1 space: precomputed geometry and quadrature.
# ----------------------------------------------------------------------

def _quadrature(dim):
    """Barycentric points and reference weights, exact for degree 2."""
    if dim == 1:
        a = 0.5 / np.sqrt(3.0)
        pts = np.array([[0.5 + a, 0.5 - a], [0.5 - a, 0.5 + a]])
        wts = np.array([0.5, 0.5])
    else:
        pts = np.array([
            [2 / 3, 1 / 6, 1 / 6],
            [1 / 6, 2 / 3, 1 / 6],
            [1 / 6, 1 / 6, 2 / 3],
        ])
        wts = np.array([1 / 3, 1 / 3, 1 / 3])
    return pts, wts


class FESpace:
    """Nodal P1 space for fields with ``ncomp`` components.

    Precomputes per-cell measures, constant basis gradients, quadrature
    points (exact for quadratic integrands) and the Dirichlet dof set.
    """

    def __init__(self, mesh: Mesh, ncomp: int = 1):
        self.mesh = mesh
        self.ncomp = int(ncomp)
        dim = mesh.dim
        cells = mesh.cells
        pts = mesh.vertices[cells]                      # (M, nv, dim)
        if dim == 1:
            edge = pts[:, 1, 0] - pts[:, 0, 0]
            self.cell_measure = np.abs(edge)
            g = 1.0 / edge
            self.grads = np.stack([-g, g], axis=1)[:, :, None]
        else:
            d1 = pts[:, 1] - pts[:, 0]
            d2 = pts[:, 2] - pts[:, 0]
            det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
            self.cell_measure = 0.5 * np.abs(det)
            # gradients of barycentric coordinates
            g1 = np.stack([d2[:, 1], -d2[:, 0]], axis=1) / det[:, None]
            g2 = np.stack([-d1[:, 1], d1[:, 0]], axis=1) / det[:, None]
            self.grads = np.stack([-(g1 + g2), g1, g2], axis=1)
        if np.any(self.cell_measure <= 0):
            raise ConfigError("mesh has degenerate cells")
        self.quad_bary, self.quad_weights = _quadrature(dim)
        # (M, nq, dim) physical quadrature points
        self.quad_points = np.einsum("qv,mvd->mqd", self.quad_bary, pts)
        self.n_nodes = mesh.n_nodes
        self.n_dofs = mesh.n_nodes * self.ncomp
        mask = np.zeros(self.n_dofs, dtype=bool)
        for node in mesh.dirichlet_nodes:
            mask[node * self.ncomp:(node + 1) * self.ncomp] = True
        self.dirichlet_mask = mask
        self.free_mask = ~mask
        self.free_dofs = np.flatnonzero(self.free_mask)

    def zero_field(self) -> "FEField":
        shape = (self.n_nodes,) if self.ncomp == 1 else (self.n_nodes, self.ncomp)
        return FEField(self, np.zeros(shape))


@dataclass
class FEField:
    """Nodal coefficient vector on a P1 space.

    ``values`` has shape (n_nodes,) for scalar spaces and
    (n_nodes, ncomp) for vector spaces.
    """

    space: FESpace
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.space.n_nodes,) if self.space.ncomp == 1 \
            else (self.space.n_nodes, self.space.ncomp)
        if self.values.shape != expected:
            raise ValueError(f"field shape {self.values.shape} != {expected}")

    def copy(self) -> "FEField":
        return FEField(self.space, self.values.copy())

    def at_quad(self) -> np.ndarray:
        """Values at quadrature points: (M, nq) or (M, nq, ncomp)."""
        nodal = self.values[self.space.mesh.cells]      # (M, nv[, ncomp])
        if self.space.ncomp == 1:
            return np.einsum("qv,mv->mq", self.space.quad_bary, nodal)
        return np.einsum("qv,mvc->mqc", self.space.quad_bary, nodal)

    def grad_at_cells(self) -> np.ndarray:
        """Cellwise-constant gradient: (M, dim) or (M, ncomp, dim)."""
        nodal = self.values[self.space.mesh.cells]
        if self.space.ncomp == 1:
            return np.einsum("mvd,mv->md", self.space.grads, nodal)
        return np.einsum("mvd,mvc->mcd", self.space.grads, nodal)

    def sym_grad_at_cells(self) -> np.ndarray:
        """Cellwise symmetric gradient (strain), shape (M, ncomp, dim)."""
        g = self.grad_at_cells()
        if self.space.ncomp == 1:
            g = g[:, None, :]
        return 0.5 * (g + np.swapaxes(g, -1, -2))


def interpolate(space: FESpace, fn) -> FEField:
    """Nodal interpolation of ``fn(points) -> values``."""
    vals = np.asarray(fn(space.mesh.vertices), dtype=float)
    if space.ncomp == 1:
        vals = vals.reshape(space.n_nodes)
    else:
        vals = vals.reshape(space.n_nodes, space.ncomp)
    return FEField(space, vals)


# ----------------------------------------------------------------------
# Norms.
# ----------------------------------------------------------------------

def _quad_integral(space: FESpace, cellwise_q) -> float:
    """Sum_m |K_m| sum_q w_q f(m,q) in fixed cell order (deterministic)."""
    return float(np.einsum("m,mq->", space.cell_measure,
                           cellwise_q * space.quad_weights[None, :]))

def l2_norm(f: FEField) -> float:
    vq = f.at_quad()
    sq = vq**2 if f.space.ncomp == 1 else np.sum(vq**2, axis=-1)
    return np.sqrt(_quad_integral(f.space, sq))


def semi_h1_norm(f: FEField) -> float:
    g = f.grad_at_cells()
    sq = np.sum(g.reshape(g.shape[0], -1) ** 2, axis=1)
    return float(np.sqrt(np.sum(f.space.cell_measure * sq)))


def h1_norm(f: FEField) -> float:
    return float(np.hypot(l2_norm(f), semi_h1_norm(f)))


def h1_norm_pair(f1: FEField, f2: FEField) -> float:
    return float(np.hypot(h1_norm(f1), h1_norm(f2)))


def holder_seminorm(f: FEField, alpha: float, node_ids=None) -> float:
    """max over node pairs of |f(x)-f(y)| / |x-y|^alpha.

    ``node_ids`` restricts the pairs to a subdomain (e.g. the interior
    sub-box from :func:`interior_node_ids`); default is all nodes.
    """
    ids = np.arange(f.space.n_nodes) if node_ids is None else np.asarray(node_ids)
    if ids.size < 2:
        return 0.0
    x = f.space.mesh.vertices[ids]
    v = f.values[ids]
    iu, ju = np.triu_indices(ids.size, k=1)
    dx = np.linalg.norm(x[iu] - x[ju], axis=1)
    dv = np.abs(v[iu] - v[ju]) if v.ndim == 1 else np.linalg.norm(v[iu] - v[ju], axis=1)
    return float(np.max(dv / dx**alpha))


def interior_node_ids(mesh: Mesh) -> np.ndarray:
    """Nodes of the sub-box shrunk by one mesh layer from every face."""
    lo, hi = mesh.box
    spacing = np.array([
        np.min(np.diff(np.unique(np.round(mesh.vertices[:, d], 12))))
        for d in range(mesh.dim)
    ])
    tol = 1e-9 * float(np.max(hi - lo))
    keep = np.ones(mesh.n_nodes, dtype=bool)
    for d in range(mesh.dim):
        keep &= mesh.vertices[:, d] >= lo[d] + spacing[d] - tol
        keep &= mesh.vertices[:, d] <= hi[d] - spacing[d] + tol
    return np.flatnonzero(keep)


# ----------------------------------------------------------------------
# Loading program.
# ----------------------------------------------------------------------

@dataclass
class LoadingProgram:
    """Time-dependent Dirichlet datum w(t) = s(t) * g.

    Profiles::

        ramp:    s(t) = t
        cyclic:  s(t) = t * (1 - cos(2 pi t / period)) / 2

    The cyclic schedule oscillates with linearly growing peaks, so a run
    traverses load, unload and re-load past the previous maximum.  Both
    schedules are C^1 with bounded derivative on [0, T].
    """

    profile: str
    g: FEField
    T: float
    period: float | None = None

    def __post_init__(self):
        if self.profile not in ("ramp", "cyclic"):
            raise ConfigError(f"unknown loading profile {self.profile!r}")
        if self.T <= 0:
            raise ConfigError("time horizon T must be positive")
        if self.profile == "cyclic" and (self.period is None or self.period <= 0):
            raise ConfigError("cyclic profile needs a positive period")

    def s(self, t: float) -> float:
        self._check_time(t)
        if self.profile == "ramp":
            return float(t)
        return float(t * (1.0 - np.cos(2.0 * np.pi * t / self.period)) / 2.0)

    def sdot(self, t: float) -> float:
        self._check_time(t)
        if self.profile == "ramp":
            return 1.0
        w = 2.0 * np.pi / self.period
        return float((1.0 - np.cos(w * t)) / 2.0 + t * w * np.sin(w * t) / 2.0)

    def datum_values(self, t: float) -> np.ndarray:
        """Full nodal field of w(t) on the ambient space."""
        return self.s(t) * self.g.values

    def _check_time(self, t):
        if t < -1e-12 or t > self.T * (1.0 + 1e-12):
            raise ValueError(f"time {t} outside [0, {self.T}]")


def lift_dirichlet(f: FEField, program: LoadingProgram, t: float) -> FEField:
    """Copy of ``f`` with Dirichlet nodes overwritten by w(t) = s(t)*g."""
    out = f.copy()
    dn = f.space.mesh.dirichlet_nodes
    out.values[dn] = program.datum_values(t)[dn]
    return out


# ----------------------------------------------------------------------
# Gram matrices on the vector space (used for the Korn constant).
# ----------------------------------------------------------------------

def _assemble_pairwise(space: FESpace, blocks: np.ndarray) -> sp.csr_matrix:
    """Assemble per-cell local matrices ``blocks`` (M, nv, nc, nv, nc)."""
    nc = space.ncomp
    dofs = space.mesh.cells[:, :, None] * nc + np.arange(nc)[None, None, :]
    rows = np.broadcast_to(dofs[:, :, :, None, None], blocks.shape).ravel()
    cols = np.broadcast_to(dofs[:, None, None, :, :], blocks.shape).ravel()
    A = sp.coo_matrix((blocks.ravel(), (rows, cols)),
                      shape=(space.n_dofs, space.n_dofs))
    return A.tocsr()


def vector_h1_gram(space: FESpace) -> sp.csr_matrix:
    """Matrix of the full H^1 inner product int (v.w + grad v : grad w)."""
    Q, wts = space.quad_bary, space.quad_weights
    mass_ref = np.einsum("q,qa,qb->ab", wts, Q, Q)      # exact P1 mass, reference
    m_ab = space.cell_measure[:, None, None] * mass_ref[None, :, :]
    g_ab = np.einsum("mad,mbd->mab", space.grads, space.grads) \
        * space.cell_measure[:, None, None]
    eye = np.eye(space.ncomp)
    blocks = (m_ab + g_ab)[:, :, None, :, None] * eye[None, None, :, None, :]
    return _assemble_pairwise(space, blocks)


def sym_grad_gram(space: FESpace) -> sp.csr_matrix:
    """Matrix of int e(v) : e(w) for the vector P1 space."""
    gdot = np.einsum("mad,mbd->mab", space.grads, space.grads)
    eye = np.eye(space.ncomp)
    # sym(e_i x Ga) : sym(e_j x Gb) = (d_ij Ga.Gb + Gb_i Ga_j) / 2
    term1 = gdot[:, :, None, :, None] * eye[None, None, :, None, :]
    term2 = np.einsum("mbi,maj->maibj", space.grads, space.grads)
    blocks = 0.5 * (term1 + term2) * space.cell_measure[:, None, None, None, None]
    return _assemble_pairwise(space, blocks)
