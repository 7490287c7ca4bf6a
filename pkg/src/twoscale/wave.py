"""First-order wave system with mixed hyperbolic/parabolic coefficients.

Unknowns are ``u = d_t w`` on the interior nodes and the flux ``q`` on
the flux layout:

    (d_t eta + sigma) u + div q = f,
    d_t A^{-1} q + grad u       = 0,

which is the evolutionary form with ``C = grad`` (Dirichlet) and gives
``eta d_t^2 w + sigma d_t w - div A grad w = f`` for ``w = d_t^{-1} u``.

The limit keeps ``u`` torus-constant and ``q`` divergence free on the
torus; the second equation then holds up to a torus gradient, carried by
a multiplier ``mu``. With ``chi = grad_y d_t^{-1} mu`` this is the
corrector relation ``A^{-1} q = -grad w + chi``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cell import CoefficientField, build_projection
from .evol import (
    EvolutionarySystem,
    _SplitLU,
    MaterialLaw,
    TimeSignal,
    WeightedTimeGrid,
    block_operator,
    implicit_euler,
    solution_bound,
    solve_time_domain,
    time_antiderivative,
    time_derivative,
    unfold_matrix,
    weighted_norm,
)
from .mesh import GridSpec, build_grad_x, build_grad_y, flux_layout, node_layout
from .unfold import UnfoldConfig

__all__ = [
    "WaveProblem",
    "WaveSolution",
    "scalar_field",
    "solve_wave_eps",
    "solve_wave_homogenized",
    "second_order_residual",
    "wave_corrector_report",
    "REPORT_COLUMNS",
]

REPORT_COLUMNS = ["epsilon", "err_w", "err_dtw", "err_grad_corr", "energy_slack", "wall_ms"]


def scalar_field(value, grid: GridSpec, torus) -> np.ndarray:
    """Scalar coefficient per box and torus node, shape ``(n_box, N)``.

    ``value`` is a number, an array broadcastable to that shape, or
    ``func(x, y)`` evaluated at box centres and torus cell centres.
    """
    shape = (grid.box_size, torus.size)
    if callable(value):
        x = (grid.box_multi_index + 0.5)[:, None, :] * grid.h
        y = torus.coords(0.5)[None]
        value = value(x, y)
    return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()


@dataclass
class WaveProblem:
    """Data of the oscillating wave system.

    Parameters
    ----------
    A : CoefficientField
        Hermitian flux coefficient (torus or x-dependent per box).
    eta, sigma : float, array or callable
        Scalar coefficients, see :func:`scalar_field`.
    f : callable or TimeSignal
        y-independent source on the interior nodes; ``f(t, x)`` with ``t``
        of shape ``(n_t, 1)`` and ``x`` of shape ``(1, k, d)``.
    eps : UnfoldConfig
    time : WeightedTimeGrid
    """

    A: CoefficientField
    eta: object
    sigma: object
    f: object
    eps: UnfoldConfig
    time: WeightedTimeGrid
    c: float = field(init=False)

    def __post_init__(self):
        if not self.A.hermitian:
            raise ValueError("A must be Hermitian")
        nu = self.time.nu
        eta, sig = self.eta_values(), self.sigma_values()
        # Re(z eta + sigma) over Re z = nu is nu eta + sigma for real coefficients
        c_u = float(np.min(nu * eta + sig))
        c_q = nu / self.A.Lam
        self.c = min(c_u, c_q)
        if not c_u > 0:
            raise ValueError(f"z eta + sigma is not coercive on Re z = {nu}: min {c_u:.3g}")

    @property
    def torus(self):
        return self.A.torus

    @property
    def grid(self) -> GridSpec:
        return self.eps.grid(self.torus.phys_dim)

    def eta_values(self):
        return scalar_field(self.eta, self.grid, self.torus)

    def sigma_values(self):
        return scalar_field(self.sigma, self.grid, self.torus)

    def source(self) -> np.ndarray:
        """Samples ``(n_t, n_nodes)``."""
        ln = node_layout(self.grid)
        if isinstance(self.f, TimeSignal):
            s = self.f.samples
        else:
            s = np.asarray(self.f(self.time.t[:, None], ln.positions[None]))
        s = np.broadcast_to(s, (self.time.n_t, ln.size))
        return np.array(s)

    def with_m(self, m: int) -> "WaveProblem":
        return WaveProblem(self.A, self.eta, self.sigma, self.f, UnfoldConfig(self.eps.n_x, m), self.time)

    def with_time(self, time_grid: WeightedTimeGrid) -> "WaveProblem":
        return WaveProblem(self.A, self.eta, self.sigma, self.f, self.eps, time_grid)


@dataclass
class WaveSolution:
    """Trajectories on product grids: ``u``, ``w`` (nodes x N), ``q``, ``chi`` (flux x N)."""

    u: np.ndarray
    q: np.ndarray
    w: np.ndarray
    chi: np.ndarray | None = None
    residual: float = 0.0
    checks: dict = field(default_factory=dict)


def _laws(p: WaveProblem):
    grid, t = p.grid, p.torus
    ln, lf = node_layout(grid), flux_layout(grid)
    eta, sig = p.eta_values(), p.sigma_values()
    Ainv = np.linalg.inv(p.A.on_boxes(grid.box_size))
    m0 = MaterialLaw(block_operator(ln, eta[..., None, None], t), block_operator(ln, sig[..., None, None], t))
    N0q = block_operator(lf, Ainv, t)
    m1 = MaterialLaw(N0q, sp.csr_matrix(N0q.shape))
    return m0, m1


def second_order_residual(p: WaveProblem, u: np.ndarray, q: np.ndarray, rule: str = "trapezoid",
                          op=None) -> float:
    """Relative residual of ``eta d_t^2 w + sigma d_t w - div A grad w = f``.

    ``w`` is reconstructed from ``u`` with ``rule``; the oscillating
    coefficients are those of the eps-problem when ``op`` is given. With
    the rectangle rule the residual vanishes up to round-off; with the
    trapezoidal rule it is first order in ``dt``.
    """
    grid, t, tg = p.grid, p.torus, p.time
    ln, lf = node_layout(grid), flux_layout(grid)
    m0, m1 = _laws(p)
    if op is not None:
        m0 = m0.conjugate(unfold_matrix(op, ln))
        m1 = m1.conjugate(unfold_matrix(op, lf))
    G = sp.kron(build_grad_x(grid), sp.identity(t.size), format="csr")
    # apply A blockwise by solving with the block-diagonal A^{-1}
    Ainv = _SplitLU(m1.N0.tocsc())
    W = time_antiderivative(TimeSignal(u, tg), rule)
    dW = time_derivative(W)
    ddW = time_derivative(dW)
    F = np.repeat(p.source(), t.size, axis=1)
    n_t = tg.n_t
    res = np.zeros(n_t)
    scale = 0.0
    for k in range(n_t):
        flux = Ainv.solve(G @ W.samples[k].ravel())
        r = m0.N0 @ ddW.samples[k].ravel() + m0.N1 @ dW.samples[k].ravel() + G.T @ flux - F[k]
        res[k] = np.linalg.norm(r)
        scale = max(scale, np.linalg.norm(F[k]))
    return float(np.sqrt(np.sum(tg.weights * res**2)) / max(scale, 1e-300))


def solve_wave_eps(p: WaveProblem, rule: str = "rectangle", residual_tol: float = 1e-9) -> WaveSolution:
    """Implicit Euler for the oscillating system, fibre by fibre.

    Returns ``u``, ``q`` of shape ``(n_t, size, N)`` and ``w = d_t^{-1} u``
    reconstructed with ``rule``. ``checks`` records the solution bound,
    the energy slack, causality and the largest step residual.
    """
    grid, t, tg = p.grid, p.torus, p.time
    ln, lf = node_layout(grid), flux_layout(grid)
    op = p.eps.operator(t)
    m0, m1 = _laws(p)
    system = EvolutionarySystem(m0, m1, build_grad_x(grid), unfold=(op, ln, lf))
    src = p.source()
    F = np.zeros((tg.n_t, system.size))
    F[:, : ln.size * t.size] = np.repeat(src, t.size, axis=1)
    fs = TimeSignal(F, tg)
    W, res = solve_time_domain(system, fs, residual_tol, history=True)
    u, q = system.split(W.samples)
    u = u.reshape(tg.n_t, ln.size, t.size)
    q = q.reshape(tg.n_t, lf.size, t.size)
    w = time_antiderivative(TimeSignal(u, tg), rule).samples
    weight = grid.h**grid.dim / t.size
    bound = solution_bound(system, fs, W, weight)
    checks = dict(bound)
    checks["causal"] = bool(W.causal_from >= fs.causal_from)
    checks["max_step_residual"] = float(res.max())
    return WaveSolution(u, q, w, residual=float(res.max()), checks=checks)


def solve_wave_homogenized(p: WaveProblem, rule: str = "rectangle", residual_tol: float = 1e-9) -> WaveSolution:
    """Limit system on torus-constant ``u`` and torus-divergence-free ``q``.

    Per step, with ``U0`` the embedding of node fields as torus constants
    and ``L`` the torus gradient per box (one node pinned per box):

        (1/N) U0^T[(eta/dt + sigma) U0 u_k - C^T q_k] = (1/N) U0^T[f_k + eta U0 u_{k-1}/dt]
        C U0 u_k + A^{-1} q_k / dt - L mu_k           = A^{-1} q_{k-1} / dt
        L^T q_k                                       = 0

    The corrector is ``chi = L d_t^{-1} mu`` (rectangle rule, the exact
    inverse of the backward difference), so ``A^{-1} q = -grad w + chi``
    holds at every step up to the linear-solve accuracy.
    """
    grid, t, tg = p.grid, p.torus, p.time
    if not t.ergodic:
        raise NotImplementedError("the multiplier formulation pins one torus node per box and needs an ergodic torus")
    ln, lf = node_layout(grid), flux_layout(grid)
    N = t.size
    m0, m1 = _laws(p)
    U0 = sp.kron(sp.identity(ln.size), np.ones((N, 1)), format="csr")
    C = sp.kron(build_grad_x(grid), sp.identity(N), format="csr")
    Gy = build_grad_y(t)
    L = None
    for a in range(lf.n_comp):
        S = sp.csr_matrix((np.ones(grid.box_size), (lf.lookup[a], np.arange(grid.box_size))),
                          shape=(lf.size, grid.box_size))
        part = sp.kron(S, Gy[a * N:(a + 1) * N], format="csr")
        L = part if L is None else L + part
    keep = np.flatnonzero(np.arange(grid.box_size * N) % N != 0)
    Lk = L[:, keep]
    dt = tg.dt
    Mu0 = (U0.T @ m0.N0 @ U0) / N
    Mu1 = (U0.T @ m0.N1 @ U0) / N
    CU = C @ U0
    nu_, nq, nm = ln.size, lf.size * N, keep.size
    N0 = sp.block_diag([Mu0, m1.N0, sp.csr_matrix((nm, nm))], format="csr")
    K = sp.bmat([
        [Mu0 / dt + Mu1, -(CU.T) / N, None],
        [CU, m1.N0 / dt, -Lk],
        [None, -Lk.T, sp.csr_matrix((nm, nm))],
    ], format="csr")
    F = np.zeros((tg.n_t, nu_ + nq + nm))
    F[:, :nu_] = p.source()
    Z, res = implicit_euler(N0, K, F, dt, residual_tol)
    ubar = Z[:, :nu_]
    q = Z[:, nu_:nu_ + nq].reshape(tg.n_t, lf.size, N)
    mu = np.zeros((tg.n_t, grid.box_size * N))
    mu[:, keep] = Z[:, nu_ + nq:]
    u = np.repeat(ubar[:, :, None], N, axis=2)
    w = time_antiderivative(TimeSignal(u, tg), rule).samples
    imu = time_antiderivative(TimeSignal(mu, tg), "rectangle").samples
    chi = np.stack([(L @ imu[k]).reshape(lf.size, N) for k in range(tg.n_t)])
    checks = _homogenized_checks(p, u, q, w, chi)
    checks["max_step_residual"] = float(res.max())
    return WaveSolution(u, q, w, chi, float(res.max()), checks)


def _homogenized_checks(p: WaveProblem, u, q, w, chi) -> dict:
    grid, t, tg = p.grid, p.torus, p.time
    lf = flux_layout(grid)
    Gx = build_grad_x(grid)
    Ainv = np.linalg.inv(p.A.on_boxes(grid.box_size))
    Ainv_op = block_operator(lf, Ainv, t)
    n_t = tg.n_t
    rel, ker = 0.0, 0.0
    P = build_projection("P_ker_div", t)
    scale = max(np.abs(q).max(), 1e-300)
    for k in range(n_t):
        lhs = (Ainv_op @ q[k].ravel()).reshape(lf.size, t.size)
        gw = (Gx @ w[k])
        rel = max(rel, float(np.abs(lhs + gw - chi[k]).max()))
        box = lf.to_box(q[k])  # (d, n_box, N)
        vec = np.moveaxis(box, 0, 1)  # (n_box, d, N)
        ker = max(ker, float(np.abs(P(vec) - vec).max()))
    return {"relation_residual": rel / max(1.0, scale), "ker_div_residual": ker / scale}


def wave_corrector_report(p: WaveProblem, m_list, limit: WaveSolution | None = None,
                          timing: bool = False) -> tuple[list[dict], dict]:
    """Strong errors of ``w_eps``, ``d_t w_eps`` and the corrected gradient per ``eps``.

    ``err_grad_corr = |grad w_eps + T_-eps chi - grad w|``; all norms are
    the weighted time norms of product-grid fields.
    """
    limit = solve_wave_homogenized(p) if limit is None else limit
    grid, t, tg = p.grid, p.torus, p.time
    lf = flux_layout(grid)
    Gx = build_grad_x(grid)
    weight = grid.h**grid.dim / t.size
    dtw = time_derivative(TimeSignal(limit.w, tg)).samples
    gw = np.stack([Gx @ limit.w[k] for k in range(tg.n_t)])
    rows, extra = [], []
    for m in m_list:
        q = p.with_m(m)
        t0 = time.perf_counter()
        sol = solve_wave_eps(q)
        op = q.eps.operator(t)
        dtw_eps = time_derivative(TimeSignal(sol.w, tg)).samples
        gw_eps = np.stack([Gx @ sol.w[k] for k in range(tg.n_t)])
        corr = gw_eps + op.fold(limit.chi, lf) - gw
        wall = (time.perf_counter() - t0) * 1e3 if timing else 0.0
        rows.append({
            "epsilon": 1.0 / m,
            "err_w": weighted_norm(TimeSignal(sol.w - limit.w, tg), weight),
            "err_dtw": weighted_norm(TimeSignal(dtw_eps - dtw, tg), weight),
            "err_grad_corr": weighted_norm(TimeSignal(corr, tg), weight),
            "energy_slack": sol.checks["energy_slack"],
            "wall_ms": wall,
        })
        extra.append({"epsilon": 1.0 / m, "err_u": weighted_norm(TimeSignal(sol.u - limit.u, tg), weight),
                      "bound_ok": sol.checks["bound_ok"], "causal": sol.checks["causal"],
                      "max_step_residual": sol.checks["max_step_residual"]})
    return rows, {"details": extra, "limit_checks": limit.checks}
