import numpy as np
import pytest

from cohesim.errors import ConfigError
from cohesim.fem import (FEField, FESpace, LoadingProgram, build_box_mesh,
                         h1_norm, holder_seminorm, interior_node_ids,
                         interpolate, l2_norm, lift_dirichlet, semi_h1_norm)


def test_box_mesh_1d_counts():
    m = build_box_mesh(1, 4, ["left"])
    assert m.n_nodes == 5 and m.n_cells == 4
    assert list(m.dirichlet_nodes) == [0]


def test_box_mesh_2d_counts():
    m = build_box_mesh(2, (2, 2), ["left"])
    assert m.n_nodes == 9 and m.n_cells == 8
    assert len(m.dirichlet_nodes) == 3
    # left-edge nodes have x = 0
    assert np.all(m.vertices[m.dirichlet_nodes, 0] == 0.0)


@pytest.mark.parametrize("dim,divs,lengths", [
    (1, 7, (2.5,)), (2, (3, 5), (2.0, 0.5)), (2, (4, 4), None),
])
def test_cell_measures_partition_box(dim, divs, lengths):
    m = build_box_mesh(dim, divs, ["left"], lengths=lengths)
    space = FESpace(m, dim)
    box = np.prod(m.box[1] - m.box[0])
    assert np.sum(space.cell_measure) == pytest.approx(box, abs=1e-14)
    assert np.all(space.cell_measure > 0)


def test_empty_dirichlet_rejected():
    with pytest.raises(ConfigError):
        build_box_mesh(2, (2, 2), [])
    with pytest.raises(ConfigError):
        build_box_mesh(2, (2, 2), ["front"])
    with pytest.raises(ConfigError):
        build_box_mesh(3, (2, 2, 2), ["left"])


def test_quadrature_exact_for_quadratics():
    """The rules integrate degree-2 polynomials exactly on each cell."""
    for dim in (1, 2):
        m = build_box_mesh(dim, 3, ["left"], lengths=(1.3,) * dim)
        space = FESpace(m, 1)
        for ex in range(3):
            for ey in range(3 - ex):
                if dim == 1 and ey:
                    continue
                def f(x):
                    out = x[..., 0] ** ex
                    if dim == 2:
                        out = out * x[..., 1] ** ey
                    return out
                vals = f(space.quad_points)
                got = np.einsum("m,mq,q->", space.cell_measure, vals,
                                space.quad_weights)
                # exact integral over the box
                L = m.box[1]
                exact = L[0] ** (ex + 1) / (ex + 1)
                if dim == 2:
                    exact *= L[1] ** (ey + 1) / (ey + 1)
                assert got == pytest.approx(exact, abs=1e-14 * (1 + abs(exact)))


def test_partition_of_unity_at_quadrature():
    m = build_box_mesh(2, (3, 3), ["left"])
    space = FESpace(m, 1)
    assert np.allclose(np.sum(space.quad_bary, axis=1), 1.0, atol=1e-15)
    const = FEField(space, np.ones(space.n_nodes))
    assert np.allclose(const.at_quad(), 1.0, atol=1e-15)


def test_norms_zero_and_linear_field():
    m = build_box_mesh(2, (8, 8), ["left"])
    space = FESpace(m, 1)
    zero = space.zero_field()
    assert l2_norm(zero) == 0.0 and semi_h1_norm(zero) == 0.0 and h1_norm(zero) == 0.0
    f = interpolate(space, lambda x: x[:, 0])
    # independent closed forms: int x^2 = 1/3, int |grad|^2 = 1
    assert semi_h1_norm(f) == pytest.approx(1.0, abs=1e-14)
    assert l2_norm(f) == pytest.approx(1.0 / np.sqrt(3.0), abs=1e-14)
    assert h1_norm(f) == pytest.approx(np.sqrt(4.0 / 3.0), abs=1e-14)


def test_holder_seminorm():
    m = build_box_mesh(2, (4, 4), ["left"])
    space = FESpace(m, 1)
    const = FEField(space, np.full(space.n_nodes, 3.7))
    assert holder_seminorm(const, 0.5) == 0.0
    f = interpolate(space, lambda x: x[:, 0])
    # Lipschitz field: [f]_1 = 1 over the node cloud
    assert holder_seminorm(f, 1.0) == pytest.approx(1.0, abs=1e-12)
    # alpha = 1/2: max of dx/(dx^2+dy^2)^(1/4) is 1, at the (0,y)-(1,y) pairs
    assert holder_seminorm(f, 0.5) == pytest.approx(1.0, abs=1e-12)


def test_interior_node_ids():
    m = build_box_mesh(2, (4, 4), ["left"])
    ids = interior_node_ids(m)
    assert len(ids) == 9          # 3 x 3 inner grid of a 5 x 5 lattice
    assert np.all(m.vertices[ids] > 0.25 - 1e-9)
    assert np.all(m.vertices[ids] < 0.75 + 1e-9)


def test_loading_program_ramp_and_lift():
    m = build_box_mesh(2, (2, 2), ["left"])
    space = FESpace(m, 2)
    g = interpolate(space, lambda x: np.stack([x[:, 1], np.zeros(len(x))], axis=1))
    prog = LoadingProgram("ramp", g, T=2.0)
    assert prog.s(0.0) == 0.0 and prog.s(1.5) == 1.5 and prog.sdot(0.3) == 1.0
    f = FEField(space, np.ones((space.n_nodes, 2)))
    lifted = lift_dirichlet(f, prog, 0.5)
    dn = m.dirichlet_nodes
    assert np.allclose(lifted.values[dn], 0.5 * g.values[dn])
    free = np.setdiff1d(np.arange(space.n_nodes), dn)
    assert np.all(lifted.values[free] == 1.0)
    # idempotent
    again = lift_dirichlet(lifted, prog, 0.5)
    assert np.array_equal(again.values, lifted.values)
    # zero program at t=0: homogeneous data, compatible with zero state
    assert np.allclose(lift_dirichlet(f, prog, 0.0).values[dn], 0.0)


def test_loading_program_cyclic_schedule():
    m = build_box_mesh(1, 2, ["left"])
    space = FESpace(m, 1)
    g = interpolate(space, lambda x: x[:, 0])
    prog = LoadingProgram("cyclic", g, T=1.2, period=0.8)
    assert prog.s(0.0) == 0.0
    # peaks grow: s at the second crest exceeds the first
    assert prog.s(1.2) > prog.s(0.4) > 0
    # derivative matches a finite difference
    h = 1e-7
    for t in (0.2, 0.5, 0.9):
        fd = (prog.s(t + h) - prog.s(t - h)) / (2 * h)
        assert prog.sdot(t) == pytest.approx(fd, rel=1e-6)
    with pytest.raises(ValueError):
        prog.s(2.0)
    with pytest.raises(ConfigError):
        LoadingProgram("cyclic", g, T=1.0)
    with pytest.raises(ConfigError):
        LoadingProgram("sawtooth", g, T=1.0)


def test_field_shape_validation():
    m = build_box_mesh(2, (2, 2), ["left"])
    space = FESpace(m, 2)
    with pytest.raises(ValueError):
        FEField(space, np.zeros(space.n_nodes))
