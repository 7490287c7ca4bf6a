import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twoscale.cell import (
    CellSolverError,
    CoefficientField,
    ProbabilityModel,
    build_projection,
    homogenize,
    homogenized_tensor,
    load_field,
    monte_carlo_ahom,
    sample_periodized_field,
    save_field,
    solve_cell_problem,
    solve_memory_correctors,
)
from twoscale.mesh import TorusGrid, build_div_y, build_grad_y

# closed-form 1D layered cell ODE with alpha = 1, beta = 4: flux c = 2*1*4/5, phi' = c/a - 1
LAYERED_FLUX = 1.6
LAYERED_SLOPES = (0.6, -0.6)


def _flux(a, cor):
    e = np.zeros((a.n, a.torus.size))
    e[cor.direction] = 1.0
    return np.einsum("kij,jk->ik", a.values, e + cor.gradient)


def test_identity_has_zero_correctors():
    a = CoefficientField.constant(TorusGrid(2, 16), np.eye(2))
    for i in range(2):
        c = solve_cell_problem(a, i)
        assert np.all(c.potential == 0) and c.residual == 0.0


def test_layered_slopes_match_cell_ode():
    t = TorusGrid(1, 64)
    a = CoefficientField.layered(t, 1.0, 4.0)
    c = solve_cell_problem(a, 0)
    y = t.coords(0.5)[:, 0]
    expected = np.where(y < 0.5, *LAYERED_SLOPES)
    np.testing.assert_allclose(c.gradient[0], expected, atol=1e-8)


def test_smooth_1d_flux_is_constant():
    t = TorusGrid(1, 256)
    a = CoefficientField.from_function(t, lambda y: 2 + np.sin(2 * np.pi * y[:, 0]))
    q = _flux(a, solve_cell_problem(a, 0))[0]
    assert np.ptp(q) / abs(q.mean()) <= 1e-8


def test_constant_coefficient_is_reproduced():
    M = np.array([[3.0, 0.5], [0.5, 2.0]])
    T, _ = homogenize(CoefficientField.constant(TorusGrid(2, 8), M))
    np.testing.assert_allclose(T.matrix, M, atol=1e-14)


def test_layered_harmonic_mean():
    T, _ = homogenize(CoefficientField.layered(TorusGrid(1, 256), 1.0, 4.0))
    assert abs(T.matrix[0, 0] - LAYERED_FLUX) <= 1e-8


def test_layered_2d_is_harmonic_across_arithmetic_along():
    T, _ = homogenize(CoefficientField.layered(TorusGrid(2, 32), 1.0, 4.0, axis=0))
    np.testing.assert_allclose(np.diag(T.matrix), [LAYERED_FLUX, 2.5], atol=1e-8)


def test_checkerboard_and_duality():
    A, _ = homogenize(CoefficientField.checkerboard(TorusGrid(2, 256), 1.0, 4.0))
    B, _ = homogenize(CoefficientField.checkerboard(TorusGrid(2, 256), 4.0, 1.0))
    assert np.all(np.abs(np.diag(A.matrix) - 2.0) <= 0.04)
    assert abs(A.matrix[0, 0] * B.matrix[0, 0] / 4.0 - 1) <= 0.01


def test_checkerboard_richardson_approaches_two():
    vals = [homogenize(CoefficientField.checkerboard(TorusGrid(2, n), 1.0, 4.0))[0].matrix[0, 0]
            for n in (32, 64)]
    # first-order in h: extrapolate
    assert abs(2 * vals[1] - vals[0] - 2.0) <= 1e-3


@given(alpha=st.floats(0.2, 5.0), beta=st.floats(0.2, 5.0), n=st.sampled_from([8, 16]))
def test_voigt_reuss_bounds(alpha, beta, n):
    a = CoefficientField.checkerboard(TorusGrid(2, n), alpha, beta)
    T, _ = homogenize(a)
    ev = np.linalg.eigvalsh(T.matrix)
    harm, arith = 2 / (1 / alpha + 1 / beta), (alpha + beta) / 2
    assert ev.min() >= harm - 1e-8 and ev.max() <= arith + 1e-8
    assert np.abs(T.matrix - T.matrix.T).max() <= 1e-10


@given(seed=st.integers(0, 2**32 - 1))
def test_flux_identity_against_zero_mean_tests(seed):
    rng = np.random.default_rng(seed)
    t = TorusGrid(2, 8)
    m = rng.uniform(0.5, 2, (t.size, 2, 2))
    vals = m @ np.swapaxes(m, -1, -2) + 0.1 * np.eye(2)
    a = CoefficientField(vals, t)
    G = build_grad_y(t)
    for i in range(2):
        c = solve_cell_problem(a, i)
        q = _flux(a, c).ravel()
        psi = rng.standard_normal(t.size)
        psi -= psi.mean()
        assert abs(q @ (G @ psi)) <= 10 * 1e-10 * np.linalg.norm(q) * np.linalg.norm(G @ psi) * 10


def test_non_hermitian_coefficient_uses_gmres():
    t = TorusGrid(1, 32)
    y = t.coords(0.5)[:, 0]
    vals = (2 + np.sin(2 * np.pi * y) + 0.5j * np.cos(2 * np.pi * y))[:, None, None]
    a = CoefficientField(vals, t)
    assert not a.hermitian
    T, _ = homogenize(a)
    # 1D: harmonic mean of the complex coefficient
    assert abs(T.matrix[0, 0] - 1 / np.mean(1 / vals[:, 0, 0])) <= 1e-8


def test_non_elliptic_rejected():
    with pytest.raises(ValueError):
        CoefficientField.constant(TorusGrid(1, 4), [[-1.0]])


def test_solver_failure_carries_history():
    a = CoefficientField.checkerboard(TorusGrid(2, 32), 1.0, 100.0)
    with pytest.raises(CellSolverError) as info:
        solve_cell_problem(a, 0, maxiter=2)
    assert len(info.value.history) >= 1


def test_missing_direction_rejected():
    a = CoefficientField.constant(TorusGrid(2, 4), np.eye(2))
    with pytest.raises(ValueError):
        homogenized_tensor(a, [solve_cell_problem(a, 0)])


def test_memory_correctors_constant_is_zero():
    t = TorusGrid(2, 8)
    out = solve_memory_correctors(CoefficientField.constant(t, 2 * np.eye(2)), None, None)
    assert np.all(out["eta"] == 0)
    assert out["sigma"] is None and out["mu"] is None


def test_memory_corrector_sign_convention():
    t = TorusGrid(1, 32)
    a = CoefficientField.layered(t, 1.0, 4.0)
    chi = solve_memory_correctors(a)["eta"]
    phi = solve_cell_problem(a, 0)
    np.testing.assert_allclose(chi[0], -phi.gradient, atol=1e-9)


def test_memory_corrector_defining_equation():
    t = TorusGrid(2, 16)
    mu = CoefficientField.checkerboard(t, 1.0, 4.0)
    chi = solve_memory_correctors(None, None, mu)["mu"]
    P = build_projection("P_pot", t)
    for i in range(2):
        e = np.zeros((2, t.size))
        e[i] = 1.0
        r = P(np.einsum("kij,jk->ik", mu.values, e - chi[i]))
        assert np.abs(r).max() <= 1e-8


def test_projection_examples():
    t = TorusGrid(2, 8)
    rng = np.random.default_rng(0)
    const = np.repeat(rng.standard_normal((2, 1)), t.size, axis=1)
    np.testing.assert_allclose(build_projection("P_inv", t)(const), const, atol=1e-14)
    psi = rng.standard_normal(t.size)
    g = (build_grad_y(t) @ (psi - psi.mean())).reshape(2, -1)
    np.testing.assert_allclose(build_projection("P_pot", t)(g), g, atol=1e-12)
    v = rng.standard_normal((2, t.size))
    assert np.abs(build_projection("P_inv", t)(build_projection("P_pot", t)(v))).max() <= 1e-14
    # the divergence-free part is annihilated by the torus divergence
    w = build_projection("P_ker_div", t)(v)
    assert np.abs(build_div_y(t) @ w.ravel()).max() <= 1e-12


@given(kind=st.sampled_from(["P_inv", "P_pot", "P_ker_div", "P_ker_curl"]),
       seed=st.integers(0, 2**32 - 1), quasi=st.booleans())
def test_projection_algebra(kind, seed, quasi):
    t = TorusGrid(2, 6, ((1, 0), (2, 1))) if quasi else TorusGrid(2, 6)
    P = build_projection(kind, t)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, 2, t.size))
    Pu = P(u)
    np.testing.assert_allclose(P(Pu), Pu, atol=1e-12)
    assert abs(np.vdot(Pu, v - P(v))) <= 1e-12 * np.linalg.norm(u) * np.linalg.norm(v)


def test_unknown_projection():
    with pytest.raises(ValueError):
        build_projection("P_bogus", TorusGrid(1, 4))


def test_periodized_field_cases():
    m = ProbabilityModel(L=4, p=1.0, seed=3, alpha=1.0, beta=4.0)
    f = sample_periodized_field(m, 0)
    assert np.all(f.values[:, 0, 0] == 1.0)
    m = ProbabilityModel(L=4, seed=3)
    assert np.array_equal(sample_periodized_field(m, 5).values, sample_periodized_field(m, 5).values)


def test_phase_fraction_is_binomial():
    m = ProbabilityModel(L=8, seed=11, nodes_per_cell=1)
    fr = np.array([np.mean(sample_periodized_field(m, s).values[:, 0, 0] == 1.0) for s in range(1000)])
    # mean of 1000 * 64 Bernoulli(1/2) draws
    sigma = np.sqrt(0.25 / (1000 * 64))
    assert abs(fr.mean() - 0.5) <= 3 * sigma


def test_deterministic_model_has_no_spread():
    m = ProbabilityModel(L=4, p=1.0, seed=1, alpha=2.0, beta=4.0)
    T = monte_carlo_ahom(m, 4)
    np.testing.assert_allclose(T.matrix, 2 * np.eye(2), atol=1e-12)
    assert np.all(T.ci_halfwidth == 0)


def test_monte_carlo_thread_independent():
    m = ProbabilityModel(L=4, seed=9)
    a = monte_carlo_ahom(m, 6, workers=1)
    b = monte_carlo_ahom(m, 6, workers=3)
    assert np.array_equal(a.samples, b.samples)


def test_quasi_periodic_model():
    m = ProbabilityModel("quasi_periodic", V=((1, 2),), n_y=16, dim=2,
                         func=lambda y: 2 + np.cos(2 * np.pi * y[:, 0]))
    f = sample_periodized_field(m)
    assert f.torus.phys_dim == 2 and f.n == 2 and f.torus.ergodic
    T, _ = homogenize(f)
    ev = np.linalg.eigvalsh(T.matrix)
    assert ev.min() >= 1 / np.mean(1 / f.values[:, 0, 0]) - 1e-8 and ev.max() <= f.values[:, 0, 0].mean() + 1e-8


def test_field_roundtrip(tmp_path):
    t = TorusGrid(1, 8, ((3,),))
    a = CoefficientField.layered(t, 1.0, 4.0)
    save_field(tmp_path / "a.field", a)
    b = load_field(tmp_path / "a.field")
    assert np.array_equal(a.values, b.values) and b.torus == t
