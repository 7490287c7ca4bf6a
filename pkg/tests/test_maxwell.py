import numpy as np
import pytest

from twoscale.cell import CoefficientField, solve_memory_correctors
from twoscale.evol import EvolutionarySystem, MaterialLaw, WeightedTimeGrid, block_operator, unfold_matrix
from twoscale.maxwell import (
    REPORT_COLUMNS,
    MaxwellProblem,
    limit_checks,
    maxwell_corrector_report,
    memory_formula_residual,
    potential_basis,
    solve_maxwell_eps,
    solve_maxwell_homogenized,
)
from twoscale.mesh import GridSpec, TorusGrid, build_curl_x, edge_layout
from twoscale.unfold import UnfoldConfig

LAYERED_2D = TorusGrid(1, 8, freq=((1, 0),))


def f_tm(t, x, c):
    bump = np.where(t < 1, np.sin(np.pi * t) ** 2, 0.0)
    return 10 * bump * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]) * np.where(c == 0, 1.0, 0.5)


def tm(sigma=None, n_x=32, m=4, n_t=40, eta=None, f=f_tm):
    t = LAYERED_2D
    eta = CoefficientField.layered(t, 1.0, 4.0, n=3) if eta is None else eta
    mu = CoefficientField.constant(t, np.eye(3))
    return MaxwellProblem(eta, sigma, mu, f, None, UnfoldConfig(n_x, m), WeightedTimeGrid(2.0, n_t, 1.0))


def small_3d():
    t = TorusGrid(1, 4, freq=((1, 0, 0),))
    eta = CoefficientField.layered(t, 1.0, 4.0, n=3)
    mu = CoefficientField.layered(t, 1.0, 2.0, n=3)

    def f(tt, x, c):
        return 10 * np.where(tt < 1, np.sin(np.pi * tt) ** 2, 0.0) * np.prod(np.sin(np.pi * x), axis=-1)

    def g(tt, x, c):
        return np.where(tt < 1, np.sin(np.pi * tt) ** 2, 0.0) * np.cos(np.pi * x[..., 0]) * (c == 0)

    return MaxwellProblem(eta, None, mu, f, g, UnfoldConfig(8, 4), WeightedTimeGrid(2.0, 20, 1.0),
                          reduction="full_3d_small")


def test_validation():
    t = LAYERED_2D
    eye = CoefficientField.constant(t, np.eye(3))
    tg = WeightedTimeGrid(1.0, 10, 1.0)
    with pytest.raises(ValueError):
        MaxwellProblem(eye, None, eye, None, None, UnfoldConfig(8, 2), tg, reduction="te")
    with pytest.raises(ValueError):
        MaxwellProblem(eye, None, eye, None, None, UnfoldConfig(32, 2), tg, reduction="full_3d_small")
    neg = CoefficientField.constant(t, -2 * np.eye(3), require_elliptic=False)
    with pytest.raises(ValueError):
        MaxwellProblem(eye, neg, eye, None, None, UnfoldConfig(8, 2), tg)


def test_zero_data():
    p = tm(f=None, n_t=10)
    s = solve_maxwell_eps(p)
    assert np.all(s["u"] == 0) and np.all(s["q"] == 0)
    h = solve_maxwell_homogenized(p)
    assert np.abs(h.u0).max() == 0 and np.abs(h.chi1).max() == 0


def test_constant_coefficients_have_no_corrector():
    eta = CoefficientField.constant(LAYERED_2D, 2 * np.eye(3))
    p = tm(sigma=CoefficientField.constant(LAYERED_2D, np.eye(3)), eta=eta, n_t=20)
    h = solve_maxwell_homogenized(p)
    assert np.abs(h.chi1).max() <= 1e-12
    a = solve_maxwell_eps(p)
    b = solve_maxwell_eps(p.with_m(2))
    assert np.abs(a["u"] - b["u"]).max() <= 1e-12
    assert np.abs(a["u"] - h.u0).max() <= 1e-10


def test_skew_block_and_hermitian_unfolded_coefficient():
    p = tm(n_x=16, m=2)
    lu, lq = p.layouts()
    t = p.torus
    eta, _, mu = p.blocks()
    m0 = MaterialLaw(block_operator(lu, eta, t), block_operator(lu, 0 * eta, t))
    m1 = MaterialLaw(block_operator(lq, mu, t), block_operator(lq, 0 * mu, t))
    op = p.eps.operator(t)
    S = EvolutionarySystem(m0, m1, build_curl_x(p.grid), unfold=(op, lu, lq)).skew()
    assert abs(S + S.conj().T).max() == 0
    U = unfold_matrix(op, lu)
    N = m0.conjugate(U).N0
    assert abs(N - N.conj().T).max() == 0
    assert abs(U.T @ U - np.eye(U.shape[0])).max() == 0


def test_eps_checks():
    s = solve_maxwell_eps(tm(n_t=20))
    c = s["checks"]
    assert c["bound_ok"] and c["causal"] and c["energy_slack"] >= 0
    assert c["max_step_residual"] <= 1e-9


@pytest.fixture(scope="module")
def tm_limit():
    p = tm()
    return p, solve_maxwell_homogenized(p)


def test_limit_residuals_and_kernel(tm_limit):
    p, h = tm_limit
    assert max(h.residuals.values()) <= 1e-10
    chk = limit_checks(p, h)
    assert chk["ker_curl"] <= 1e-12
    # no H3 corrector in the transverse magnetic reduction
    assert np.all(h.chi2 == 0)


def test_undamped_memory_formula_is_exact(tm_limit):
    p, h = tm_limit
    r = memory_formula_residual(p, h)
    assert r["residual"] <= 1e-12
    assert r["formula_vs_solver"] <= 1e-12
    assert r["non_potential"] <= 1e-12


def test_memory_residual_halves_with_dt():
    sig = CoefficientField.constant(LAYERED_2D, 2 * np.eye(3))
    res = []
    for n_t in (40, 80, 160):
        p = tm(sigma=sig, n_t=n_t)
        res.append(memory_formula_residual(p, solve_maxwell_homogenized(p))["residual"])
    r = np.array(res[:-1]) / np.array(res[1:])
    assert np.all((r > 1.7) & (r < 2.3))


def test_proportional_damping_matches_solver():
    eta = CoefficientField.layered(LAYERED_2D, 1.0, 4.0, n=3)
    p = tm(sigma=CoefficientField(2 * eta.values, LAYERED_2D), n_t=40)
    r = memory_formula_residual(p, solve_maxwell_homogenized(p))
    assert r["residual"] <= 1e-12 and r["formula_vs_solver"] <= 1e-12


def test_three_dimensional_limit():
    p = small_3d()
    h = solve_maxwell_homogenized(p)
    assert max(h.residuals.values()) <= 1e-10
    chk = limit_checks(p, h)
    assert max(chk.values()) <= 1e-12
    r = memory_formula_residual(p, h)
    assert r["residual"] <= 1e-12 and r["chi2_identity"] <= 1e-12
    # chi2 from the solver equals -chi_mu^i q0^i under zero pre-history
    lu, lq = p.layouts()
    cm = solve_memory_correctors(mu0=p.cell_coefficients()[2])["mu"]
    assert np.abs(h.chi2).max() > 1e-3
    for k in (5, 10, 19):
        q0 = lq.to_box(h.q0[k][:, 0])
        expect = -np.einsum("icn,ib->bcn", cm, q0)
        got = np.moveaxis(lq.to_box(h.chi2[k]), 0, 1)
        assert np.abs(got - expect).max() <= 1e-10


def test_three_dimensional_report():
    rows, extra = maxwell_corrector_report(small_3d(), [1, 2])
    assert list(rows[0]) == REPORT_COLUMNS
    assert rows[1]["corr_err_u"] < rows[0]["corr_err_u"]
    assert all(d["bound_ok"] and d["causal"] for d in extra["details"])


def test_mixed_potential_mask_rejected():
    g = GridSpec(2, 8)
    with pytest.raises(NotImplementedError):
        potential_basis(edge_layout(g), TorusGrid(2, 4), [0, 1])


def test_non_ergodic_rejected():
    t = TorusGrid(2, 4, ((1, 0), (0, 0)))
    eye = CoefficientField.constant(t, np.eye(3))
    p = MaxwellProblem(eye, None, eye, f_tm, None, UnfoldConfig(8, 2), WeightedTimeGrid(1.0, 5, 1.0))
    with pytest.raises(NotImplementedError):
        solve_maxwell_homogenized(p)


def test_tm_report_is_monotone(tm_limit):
    p, h = tm_limit
    p = tm(n_x=64, m=4)
    rows, extra = maxwell_corrector_report(p, [2, 4, 8])
    comb = [d["combined"] for d in extra["details"]]
    assert comb[0] > comb[1] > comb[2]
    assert all(r["wall_ms"] == 0 for r in rows)
