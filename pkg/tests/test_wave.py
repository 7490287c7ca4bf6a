import numpy as np
import pytest

from twoscale.cell import CoefficientField, homogenize
from twoscale.evol import WeightedTimeGrid
from twoscale.mesh import TorusGrid, build_grad_x
from twoscale.unfold import UnfoldConfig
from twoscale.wave import (
    REPORT_COLUMNS,
    WaveProblem,
    scalar_field,
    second_order_residual,
    solve_wave_eps,
    solve_wave_homogenized,
    wave_corrector_report,
)


def pulse(t, x):
    return 10 * np.where(t < 1, np.sin(np.pi * t) ** 2, 0.0) * np.sin(np.pi * x[..., 0])


def late(t, x):
    return np.where(t >= 0.5, np.sin(np.pi * (t - 0.5)) ** 2, 0.0) * np.sin(np.pi * x[..., 0])


def layered(n_y=16, n_x=512, m=8, n_t=100, f=pulse):
    A = CoefficientField.layered(TorusGrid(1, n_y), 1.0, 4.0)
    return WaveProblem(A, 1.0, 0.0, f, UnfoldConfig(n_x, m), WeightedTimeGrid(2.0, n_t, 1.0))


@pytest.fixture(scope="module")
def limit():
    p = layered()
    return p, solve_wave_homogenized(p)


def test_scalar_field_forms():
    p = layered(n_y=4, n_x=16, m=2, n_t=10)
    g, t = p.grid, p.torus
    assert scalar_field(2.0, g, t).shape == (g.box_size, t.size)
    v = scalar_field(lambda x, y: x[..., 0] + 0 * y[..., 0], g, t)
    assert np.allclose(v[:, 0], (np.arange(g.box_size) + 0.5) * g.h)


def test_coercivity_guard():
    A = CoefficientField.constant(TorusGrid(1, 4), [[1.0]])
    with pytest.raises(ValueError):
        WaveProblem(A, 0.0, 0.0, pulse, UnfoldConfig(16, 2), WeightedTimeGrid(1.0, 10, 1.0))


def test_zero_source_zero_solution():
    p = layered(n_y=4, n_x=32, m=2, n_t=20, f=lambda t, x: 0 * t * x[..., 0])
    s = solve_wave_eps(p)
    assert np.all(s.u == 0) and np.all(s.q == 0)
    h = solve_wave_homogenized(p)
    assert np.abs(h.w).max() == 0


def test_limit_checks(limit):
    _, h = limit
    assert h.checks["relation_residual"] <= 1e-10
    assert h.checks["ker_div_residual"] <= 1e-12


def test_homogenized_flux_relation(limit):
    # torus mean of A(grad w - chi) is the homogenized flux a_hom grad w
    p, h = limit
    ahom = homogenize(p.A)[0].matrix[0, 0]
    assert ahom == pytest.approx(1.6, abs=1e-12)
    G = build_grad_x(p.grid)
    a = p.A.values[:, 0, 0][None]
    for k in (30, 60, 90):
        flux = a * (G @ h.w[k] - h.chi[k])
        assert np.abs(flux.mean(axis=1) - ahom * (G @ h.w[k])[:, 0]).max() <= 1e-10
        assert np.abs(h.q[k] + flux).max() <= 1e-9


def test_constant_coefficient_has_no_corrector():
    A = CoefficientField.constant(TorusGrid(1, 8), [[2.0]])
    p = WaveProblem(A, 1.0, 0.5, pulse, UnfoldConfig(64, 2), WeightedTimeGrid(1.5, 30, 1.0))
    h = solve_wave_homogenized(p)
    assert np.abs(h.chi).max() <= 1e-10
    w2 = solve_wave_eps(p).w
    w4 = solve_wave_eps(p.with_m(4)).w
    assert np.abs(w2 - w4).max() <= 1e-12
    assert np.abs(w2 - h.w).max() <= 1e-10


def test_eps_solution_checks():
    p = layered(n_y=8, n_x=128, m=4, n_t=50)
    s = solve_wave_eps(p)
    assert s.checks["bound_ok"] and s.checks["causal"]
    assert s.checks["energy_slack"] >= 0
    assert s.residual <= 1e-9


def test_corrector_report_halves(limit):
    p, h = limit
    rows, extra = wave_corrector_report(p, [8, 16, 32], h)
    assert list(rows[0]) == REPORT_COLUMNS
    for key in ("err_w", "err_dtw", "err_grad_corr"):
        e = [r[key] for r in rows]
        assert e[0] > e[1] > e[2]
        assert e[2] <= e[0] / 2
    assert all(d["bound_ok"] and d["causal"] for d in extra["details"])


def test_mixed_type_and_second_order_form():
    eta = lambda x, y: np.where(x[..., 0] < 0.5, 1.0, 0.0)
    sig = lambda x, y: np.where(x[..., 0] < 0.5, 0.0, 1.0)
    A = CoefficientField.layered(TorusGrid(1, 8), 1.0, 4.0)
    trap = []
    for n_t in (50, 100, 200):
        p = WaveProblem(A, eta, sig, late, UnfoldConfig(128, 4), WeightedTimeGrid(2.0, n_t, 1.0))
        s = solve_wave_eps(p)
        onset = np.argmax(p.time.t >= 0.5)
        assert np.all(s.u[:onset] == 0)
        assert s.checks["bound_ok"] and s.checks["causal"]
        op = p.eps.operator(p.torus)
        assert second_order_residual(p, s.u, s.q, "rectangle", op=op) <= 1e-10
        trap.append(second_order_residual(p, s.u, s.q, "trapezoid", op=op))
    r = np.array(trap[:-1]) / np.array(trap[1:])
    assert np.all((r > 1.7) & (r < 2.3))


def test_non_ergodic_rejected():
    A = CoefficientField.constant(TorusGrid(2, 4, ((1, 0), (0, 0))), np.eye(2))
    p = WaveProblem(A, 1.0, 0.0, pulse, UnfoldConfig(8, 2), WeightedTimeGrid(1.0, 5, 1.0))
    with pytest.raises(NotImplementedError):
        solve_wave_homogenized(p)
