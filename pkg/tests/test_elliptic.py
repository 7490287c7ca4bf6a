import numpy as np
import pytest
import scipy.sparse.linalg as spla

from twoscale.cell import CoefficientField
from twoscale.elliptic import (
    REPORT_COLUMNS,
    EllipticProblem,
    convergence_report,
    pairing_dictionary,
    solve_eps_problem,
    solve_factorized,
    solve_two_scale_system,
)
from twoscale.mesh import GridSpec, TorusGrid, build_grad_x, flux_layout, node_layout, product_norm
from twoscale.unfold import UnfoldConfig


def one(x):
    return np.ones(len(x))


def smooth(n_y):
    return CoefficientField.from_function(TorusGrid(1, n_y), lambda y: 2 + np.sin(2 * np.pi * y[:, 0]))


def poisson(grid, f):
    G = build_grad_x(grid)
    return spla.spsolve((G.T @ G).tocsc(), f)


def test_identity_coefficient_is_plain_poisson():
    t = TorusGrid(2, 4)
    a = CoefficientField.constant(t, np.eye(2))
    for m in (1, 2):
        p = EllipticProblem(a, one, UnfoldConfig(16, m))
        s = solve_eps_problem(p)
        ref = poisson(p.grid, p.rhs())
        assert np.abs(s["u"] - ref[:, None]).max() <= 1e-12


def test_one_dimensional_flux_is_affine():
    p = EllipticProblem(smooth(16), one, UnfoldConfig(256, 4))
    s = solve_eps_problem(p)
    op = s["unfold"]
    lf = flux_layout(p.grid)
    a = op.oscillating(p.a.values[:, 0, 0], lf)
    flux = a * s["grad"]
    x = lf.positions[:, 0]
    # flux' = -f = -1 inside the box: flux + x is constant along every fibre
    inner = slice(1, -1)
    resid = (flux + x[:, None])[inner]
    assert np.ptp(resid, axis=0).max() <= 1e-8 * np.abs(flux).max()


def test_zero_data_zero_solution():
    p = EllipticProblem(smooth(8), lambda x: np.zeros(len(x)), UnfoldConfig(32, 2))
    assert np.all(solve_eps_problem(p)["u"] == 0)
    lim = solve_two_scale_system(p)
    assert np.linalg.norm(lim.u) + np.linalg.norm(lim.v) <= 1e-10


def test_energy_identity_and_unfolded_coefficient():
    p = EllipticProblem(smooth(16), lambda x: 1 + x[:, 0], UnfoldConfig(128, 4))
    s = solve_eps_problem(p)
    op = s["unfold"]
    g, t = p.grid, p.torus
    lf, ln = flux_layout(g), node_layout(g)
    a = p.a.values[:, 0, 0][None, :]
    Tg = op.unfold(s["grad"], lf)
    folded = op.fold(a * Tg, lf)
    lhs = np.vdot(s["grad"], folded).real
    f = p.rhs()
    rhs = np.vdot(np.repeat(f[:, None], t.size, axis=1), s["u"]).real
    assert abs(lhs - rhs) <= 1e-9 * abs(rhs)
    assert np.vdot(s["grad"], folded) == pytest.approx(np.vdot(Tg, a * Tg), rel=1e-15)
    assert s["grad_norm"] <= s["energy_bound"]


def test_identity_limit_has_no_corrector():
    t = TorusGrid(1, 8)
    p = EllipticProblem(CoefficientField.constant(t, [[1.0]]), one, UnfoldConfig(64, 2))
    lim = solve_two_scale_system(p)
    assert np.abs(lim.v).max() <= 1e-12
    assert np.abs(lim.u - poisson(p.grid, p.rhs())).max() <= 1e-12


def test_layered_limit_closed_form():
    a = CoefficientField.layered(TorusGrid(1, 64), 1.0, 4.0)
    p = EllipticProblem(a, one, UnfoldConfig(256, 1))
    lim = solve_two_scale_system(p)
    x = node_layout(p.grid).positions[:, 0]
    assert np.abs(lim.u - (x - x**2) / (2 * 1.6)).max() <= 1e-8


def test_monolithic_matches_classical_route():
    p = EllipticProblem(smooth(32), one, UnfoldConfig(256, 8))
    lim, fac = solve_two_scale_system(p), solve_factorized(p)
    assert np.abs(lim.u - fac.u).max() <= 1e-8
    assert np.abs(lim.v - fac.v).max() <= 1e-8


def test_monolithic_matches_factorized_x_dependent():
    t = TorusGrid(1, 16)
    g = GridSpec(1, 256)
    a = CoefficientField.from_product(t, g, lambda x, y: (2 + np.sin(2 * np.pi * y[..., 0])) * (1 + x[..., 0] ** 2 / 2))
    p = EllipticProblem(a, one, UnfoldConfig(256, 4))
    lim, fac = solve_two_scale_system(p), solve_factorized(p)
    assert np.abs(lim.u - fac.u).max() <= 1e-6
    assert np.abs(lim.v - fac.v).max() <= 1e-6


def test_two_dimensional_routes_agree():
    a = CoefficientField.checkerboard(TorusGrid(2, 8), 1.0, 4.0)
    p = EllipticProblem(a, one, UnfoldConfig(32, 2))
    lim, fac = solve_two_scale_system(p), solve_factorized(p)
    assert np.abs(lim.u - fac.u).max() <= 1e-8


def test_non_ergodic_torus_rejected():
    t = TorusGrid(2, 4, ((1, 0), (0, 0)))
    a = CoefficientField.constant(t, np.eye(2))
    with pytest.raises(NotImplementedError):
        solve_two_scale_system(EllipticProblem(a, one, UnfoldConfig(8, 2)))


def test_rhs_validation():
    p = EllipticProblem(smooth(4), np.ones(3), UnfoldConfig(8, 2))
    with pytest.raises(ValueError):
        p.rhs()


def test_identity_report_is_exact():
    t = TorusGrid(1, 8)
    p = EllipticProblem(CoefficientField.constant(t, [[1.0]]), one, UnfoldConfig(128, 2))
    rows, _ = convergence_report(p, [2, 4, 8])
    for r in rows:
        assert r["e0"] <= 1e-12 and r["corrector_error"] <= 1e-12


def test_report_rates_and_columns():
    p = EllipticProblem(smooth(16), one, UnfoldConfig(512, 8))
    rows, extra = convergence_report(p, [8, 16, 32])
    assert list(rows[0]) == REPORT_COLUMNS
    e0 = [r["e0"] for r in rows]
    corr = [r["corrector_error"] for r in rows]
    assert e0[2] < e0[0] / 2
    assert corr[0] > corr[1] > corr[2]
    assert all(r["wall_ms"] == 0 for r in rows)


def test_pairing_dictionary_is_normalized():
    g, t = GridSpec(1, 16), TorusGrid(1, 8)
    tests = pairing_dictionary(g, t)
    assert len(tests) == 8
    assert all(abs(product_norm(tt, g, t) - 1) <= 1e-12 for tt in tests)


def test_threads_do_not_change_results():
    p = EllipticProblem(smooth(8), one, UnfoldConfig(64, 2))
    a, b = solve_eps_problem(p, threads=1), solve_eps_problem(p, threads=3)
    assert np.array_equal(a["u"], b["u"])
