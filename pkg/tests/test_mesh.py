import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from twoscale.mesh import (
    GridSpec,
    TorusGrid,
    build_curl_x,
    build_curl_y,
    build_div_x,
    build_div_y,
    build_grad_x,
    build_grad_y,
    cell_layout,
    edge_layout,
    face_layout,
    flux_layout,
    node_layout,
    product_inner,
    product_norm,
    project_mean_free,
)


def test_constant_gradient_only_at_boundary():
    G = build_grad_x(GridSpec(1, 4))
    out = G @ np.ones(3)
    assert out[0] != 0 and out[-1] != 0
    assert np.all(out[1:-1] == 0)


def test_linear_function_has_unit_gradient():
    g = GridSpec(1, 16)
    ln = node_layout(g)
    u = ln.positions[:, 0]
    out = build_grad_x(g) @ u
    # interior edges see two live nodes
    np.testing.assert_allclose(out[1:-1], 1.0, rtol=0, atol=1e-12)


@pytest.mark.parametrize("dim,n", [(1, 9), (2, 6), (3, 4)])
def test_grad_div_adjoint_random_pairs(dim, n):
    g = GridSpec(dim, n)
    G, D = build_grad_x(g), build_div_x(g)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        u = rng.standard_normal(G.shape[1])
        v = rng.standard_normal(G.shape[0])
        worst = max(worst, abs((G @ u) @ v + u @ (D @ v)))
    assert worst <= 1e-13 * n


@given(dim=st.integers(1, 3), n=st.integers(2, 6), seed=st.integers(0, 2**32 - 1))
def test_every_operator_pair_is_adjoint(dim, n, seed):
    rng = np.random.default_rng(seed)
    g = GridSpec(dim, n)
    t = TorusGrid(dim, n)
    # (operator, separately built adjoint)
    ops = [(build_grad_x(g), -build_div_x(g)), (build_grad_y(t), -build_div_y(t))]
    if dim > 1:
        C = build_curl_x(g)
        ops.append((C, C.T.tocsr()))
    for A, B in ops:
        u = rng.standard_normal(A.shape[1])
        v = rng.standard_normal(A.shape[0])
        lhs, rhs = (A @ u) @ v, u @ (B @ v)
        assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(u) * np.linalg.norm(v) * (n**2)


@pytest.mark.parametrize("dim", [2, 3])
def test_curl_grad_is_zero_matrix(dim):
    g = GridSpec(dim, 5)
    prod = build_curl_x(g) @ build_grad_x(g, target="edges")
    assert prod.count_nonzero() == 0 or np.abs(prod.toarray()).max() == 0


def test_div_curl_is_zero_3d():
    g = GridSpec(3, 5)
    C = build_curl_x(g)
    lf, lu = face_layout(g), edge_layout(g)
    E = np.random.default_rng(3).standard_normal(lu.size)
    F = lf.to_box(C @ E).reshape((3,) + g.box_shape)
    # forward face-to-cell divergence; away from the far boundary no padding enters
    div = sum(np.diff(F[a], axis=a)[tuple(slice(0, g.n_x - 1) for _ in range(3))] for a in range(3))
    assert np.abs(div).max() <= 1e-12 * np.abs(F).max()


def test_torus_gradient_of_constant_is_zero():
    t = TorusGrid(2, 8)
    assert np.all(build_grad_y(t) @ np.full(t.size, 3.7) == 0)


def test_torus_gradient_consistency_order():
    errs = []
    for n in (32, 64, 128):
        t = TorusGrid(1, n)
        y = t.coords()[:, 0]
        d = build_grad_y(t) @ np.sin(2 * np.pi * y)
        errs.append(np.abs(d - 2 * np.pi * np.cos(2 * np.pi * y)).max())
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    assert all(1.7 <= r <= 2.3 for r in ratios)


@given(n=st.integers(2, 12), seed=st.integers(0, 2**32 - 1), dim=st.integers(1, 2))
def test_torus_gradient_transpose_identity(n, seed, dim):
    t = TorusGrid(dim, n)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(t.size)
    v = rng.standard_normal(dim * t.size)
    G, D = build_grad_y(t), build_div_y(t)
    assert abs((G @ u) @ v + u @ (D @ v)) <= 1e-13 * max(1.0, np.linalg.norm(u) * np.linalg.norm(v) * n)


@pytest.mark.parametrize("dim", [2, 3])
def test_torus_curl_of_gradient_and_constants(dim):
    t = TorusGrid(dim, 6)
    C, G = build_curl_y(t), build_grad_y(t)
    assert np.abs((C @ G).toarray()).max() == 0
    assert np.all(C @ np.ones(dim * t.size) == 0)


def test_torus_curl_adjoint_pairing():
    t = TorusGrid(3, 4)
    C = build_curl_y(t)
    rng = np.random.default_rng(5)
    for _ in range(20):
        u, v = rng.standard_normal(C.shape[1]), rng.standard_normal(C.shape[0])
        assert abs((C @ u) @ v - u @ (C.T @ v)) <= 1e-13 * np.linalg.norm(u) * np.linalg.norm(v) * 10


@pytest.mark.parametrize("n", [2, 3, 4, 8, 16])
def test_periodic_gradient_kernel_is_constants(n):
    for dim in (1, 2):
        if n**dim > 256:
            continue
        G = build_grad_y(TorusGrid(dim, n)).toarray()
        assert G.shape[1] - np.linalg.matrix_rank(G) == 1


def test_quasi_periodic_kernel_is_larger():
    # one direction only: constants along the missing direction are also in the kernel
    t = TorusGrid(2, 4, ((1,), (0,)))
    G = build_grad_y(t).toarray()
    assert G.shape[1] - np.linalg.matrix_rank(G) == 4
    assert not t.ergodic


def test_project_mean_free_cases():
    assert np.all(project_mean_free(np.full(10, 5.0)) == 0)
    v = np.arange(8.0) - 3.5
    np.testing.assert_allclose(project_mean_free(v), v, atol=1e-15)
    r = np.random.default_rng(0).standard_normal((4, 33))
    assert np.abs(project_mean_free(r).mean(axis=-1)).max() <= 1e-14


def test_layout_sizes_and_roundtrip():
    g = GridSpec(2, 5)
    assert node_layout(g).size == 16
    assert edge_layout(g).size == 2 * 5 * 4
    assert flux_layout(g).size == 50
    assert cell_layout(g).size == 25
    le = edge_layout(g)
    v = np.arange(le.size, dtype=float)
    assert np.array_equal(le.from_box(le.to_box(v)), v)
    with pytest.raises(ValueError):
        face_layout(g)


def test_product_norm_and_inner_agree():
    g, t = GridSpec(1, 8), TorusGrid(1, 4)
    u = np.random.default_rng(2).standard_normal((7, 4))
    assert np.isclose(product_norm(u, g, t) ** 2, product_inner(u, u, g, t).real)


def test_curl_requires_dimension():
    with pytest.raises(ValueError):
        build_curl_x(GridSpec(1, 4))
    with pytest.raises(ValueError):
        build_curl_y(TorusGrid(1, 4))


def test_operators_are_sparse():
    assert sp.issparse(build_grad_x(GridSpec(2, 4)))
