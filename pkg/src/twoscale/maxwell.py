"""Maxwell's equations with oscillating coefficients and their two-scale limit.

The eps-system on the staggered grid is

    (d_t eta + sigma) u - curl q = f,
    d_t mu q + curl0 u           = g,

with ``u`` the electric field on tangential-Dirichlet edges and ``q`` the
magnetic field on cells (``tm_2d``: in-plane ``E`` and scalar ``H_3``) or
faces (``full_3d_small``). ``curl0`` is the edge curl and ``curl`` its
adjoint.

In the limit both fields lie in the kernel of the torus curl, i.e. a
torus constant plus a torus gradient. The limit solver uses exactly that
basis: ``u = u0 + grad_y psi``, ``q = q0 + grad_y theta`` with one torus
node pinned per box. In the 2D reduction ``H_3`` is normal to every torus
gradient, so ``chi2 = 0`` and only ``u`` carries a corrector.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm

from .cell import CoefficientField, build_projection, solve_memory_correctors
from .evol import (
    EvolutionarySystem,
    MaterialLaw,
    TimeSignal,
    WeightedTimeGrid,
    block_operator,
    implicit_euler,
    solution_bound,
    solve_time_domain,
    weighted_inner,
    weighted_norm,
)
from .mesh import GridSpec, Layout, build_curl_x, build_grad_y, cell_layout, edge_layout, face_layout
from .unfold import UnfoldConfig

__all__ = [
    "MaxwellProblem",
    "MaxwellTwoScaleSolution",
    "solve_maxwell_eps",
    "solve_maxwell_homogenized",
    "evaluate_memory_formulas",
    "memory_formula_residual",
    "maxwell_corrector_report",
    "potential_basis",
    "limit_checks",
    "REPORT_COLUMNS",
]

REPORT_COLUMNS = ["epsilon", "corr_err_u", "corr_err_q", "pairing_max", "energy_slack", "wall_ms"]
MAX_3D_NODES = 16


@dataclass
class MaxwellProblem:
    """Data of the oscillating Maxwell system.

    Parameters
    ----------
    eta0, sigma0, mu0 : CoefficientField
        ``3 x 3`` blocks per torus node (or per box and node). In the 2D
        reduction the in-plane block of ``eta0``, ``sigma0`` and the
        ``(3, 3)`` entry of ``mu0`` are used; ``2 x 2`` input is accepted
        there as well. ``sigma0`` may be None.
    f, g : callable or TimeSignal
        y-independent sources; ``f(t, x, c)`` with ``t`` of shape
        ``(n_t, 1)``, ``x`` of shape ``(1, k, d)`` and component indices
        ``c`` of shape ``(1, k)``. None means zero.
    eps : UnfoldConfig
    time : WeightedTimeGrid
    reduction : {"tm_2d", "full_3d_small"}
    """

    eta0: CoefficientField
    sigma0: CoefficientField | None
    mu0: CoefficientField
    f: object
    g: object
    eps: UnfoldConfig
    time: WeightedTimeGrid
    reduction: str = "tm_2d"
    c: float = field(init=False)

    def __post_init__(self):
        if self.reduction not in ("tm_2d", "full_3d_small"):
            raise ValueError(f"unknown reduction {self.reduction!r}")
        d = self.dim
        if self.torus.phys_dim != d:
            raise ValueError(f"{self.reduction} needs a torus with {d} physical directions")
        if self.reduction == "full_3d_small" and self.eps.n_x > MAX_3D_NODES:
            raise ValueError(f"full_3d_small is capped at n_x = {MAX_3D_NODES}")
        if not (self.eta0.hermitian and self.mu0.hermitian):
            raise ValueError("eta0 and mu0 must be Hermitian")
        nu = self.time.nu
        eta, sig, mu = self.blocks()
        herm = nu * eta + 0.5 * (sig + np.conj(np.swapaxes(sig, -1, -2)))
        c_u = float(np.linalg.eigvalsh(herm)[..., 0].min())
        c_mu = float(np.linalg.eigvalsh(mu)[..., 0].min())
        if not c_u > 0:
            raise ValueError(f"nu*eta0 + Re sigma0 is not coercive: min eigenvalue {c_u:.3g}")
        if not c_mu > 0:
            raise ValueError(f"mu0 is not coercive: min eigenvalue {c_mu:.3g}")
        self.c = min(c_u, nu * c_mu)

    @property
    def dim(self) -> int:
        return 2 if self.reduction == "tm_2d" else 3

    @property
    def torus(self):
        return self.eta0.torus

    @property
    def grid(self) -> GridSpec:
        return self.eps.grid(self.dim)

    def layouts(self) -> tuple[Layout, Layout]:
        g = self.grid
        return edge_layout(g), (cell_layout(g) if self.dim == 2 else face_layout(g))

    def _restrict(self, a: CoefficientField | None, part: str) -> np.ndarray:
        nb = self.grid.box_size
        n = self.dim if part == "u" else (1 if self.dim == 2 else 3)
        if a is None:
            return np.zeros((nb, self.torus.size, n, n))
        v = a.on_boxes(nb)
        if v.shape[-1] == n:
            return v
        if v.shape[-1] != 3:
            raise ValueError(f"coefficient blocks must be {n} x {n} or 3 x 3")
        return v[..., :2, :2] if part == "u" else v[..., 2:, 2:]

    def blocks(self):
        """``eta``, ``sigma`` (u-space) and ``mu`` (q-space) per box and node."""
        return self._restrict(self.eta0, "u"), self._restrict(self.sigma0, "u"), self._restrict(self.mu0, "q")

    def cell_coefficients(self):
        """x-independent coefficients restricted to the reduction (None if absent or x-dependent).

        In the 2D reduction ``mu`` is None: ``H_3`` is normal to every torus
        gradient, so it has no corrector.
        """
        def pick(a, part):
            if a is None or a.x_dependent:
                return None
            v = self._restrict(a, part)[0]
            return CoefficientField(v, self.torus, require_elliptic=False)
        mu = pick(self.mu0, "q") if self.dim == 3 else None
        return pick(self.eta0, "u"), pick(self.sigma0, "u"), mu

    def sources(self) -> tuple[np.ndarray, np.ndarray]:
        lu, lq = self.layouts()
        out = []
        for data, lay in ((self.f, lu), (self.g, lq)):
            if data is None:
                out.append(np.zeros((self.time.n_t, lay.size)))
            elif isinstance(data, TimeSignal):
                out.append(np.asarray(data.samples).reshape(self.time.n_t, lay.size))
            else:
                s = data(self.time.t[:, None], lay.positions[None], lay.comp[None])
                out.append(np.array(np.broadcast_to(s, (self.time.n_t, lay.size))))
        return out[0], out[1]

    def with_m(self, m: int) -> "MaxwellProblem":
        return MaxwellProblem(self.eta0, self.sigma0, self.mu0, self.f, self.g,
                              UnfoldConfig(self.eps.n_x, m), self.time, self.reduction)

    def with_time(self, tg: WeightedTimeGrid) -> "MaxwellProblem":
        return MaxwellProblem(self.eta0, self.sigma0, self.mu0, self.f, self.g, self.eps, tg, self.reduction)


@dataclass
class MaxwellTwoScaleSolution:
    """Limit trajectories on product grids, shape ``(n_t, layout.size, N)``.

    ``u0``, ``q0`` are torus constants; ``chi1``, ``chi2`` torus gradients.
    """

    u0: np.ndarray
    chi1: np.ndarray
    q0: np.ndarray
    chi2: np.ndarray
    residuals: dict = field(default_factory=dict)


def _laws(p: MaxwellProblem):
    lu, lq = p.layouts()
    t = p.torus
    eta, sig, mu = p.blocks()
    m0 = MaterialLaw(block_operator(lu, eta, t), block_operator(lu, sig, t))
    N0q = block_operator(lq, mu, t)
    return m0, MaterialLaw(N0q, sp.csr_matrix(N0q.shape))


def solve_maxwell_eps(p: MaxwellProblem, residual_tol: float = 1e-9) -> dict:
    """Implicit Euler for the oscillating system (fibre-wise sparse LU).

    Returns ``u``, ``q`` of shape ``(n_t, size, N)`` and the checks of
    :func:`twoscale.evol.solution_bound`, causality and step residuals.
    """
    grid, t, tg = p.grid, p.torus, p.time
    lu, lq = p.layouts()
    op = p.eps.operator(t)
    m0, m1 = _laws(p)
    system = EvolutionarySystem(m0, m1, build_curl_x(grid), unfold=(op, lu, lq))
    fu, fq = p.sources()
    N = t.size
    F = np.concatenate([np.repeat(fu, N, axis=1), np.repeat(fq, N, axis=1)], axis=1)
    fs = TimeSignal(F, tg)
    W, res = solve_time_domain(system, fs, residual_tol, history=True)
    u, q = system.split(W.samples)
    weight = grid.h**grid.dim / N
    checks = solution_bound(system, fs, W, weight)
    checks["causal"] = bool(W.causal_from >= fs.causal_from)
    checks["max_step_residual"] = float(res.max())
    return {
        "u": u.reshape(tg.n_t, lu.size, N),
        "q": q.reshape(tg.n_t, lq.size, N),
        "checks": checks,
        "unfold": op,
    }


def potential_basis(layout: Layout, torus, pot_comps) -> sp.csr_matrix:
    """Columns ``grad_y psi`` on ``layout x torus`` for ``psi`` pinned at node 0 per box.

    ``pot_comps[a]`` is the torus direction feeding component ``a`` (None
    if that component never carries a torus gradient). Boxes where every
    such component is dead carry no potential.

    Raises
    ------
    NotImplementedError
        If a box has some potential components live and others dead; the
        masked potential space then has no nodal basis of this form.
    """
    grid = layout.grid
    N = torus.size
    Gy = build_grad_y(torus)
    comps = [a for a in range(layout.n_comp) if pot_comps[a] is not None
             and np.any(torus.V[:, pot_comps[a]])]
    if not comps:
        return sp.csr_matrix((layout.size * N, 0))
    live = np.stack([layout.lookup[a] >= 0 for a in comps])
    mixed = live.any(axis=0) & ~live.all(axis=0)
    if mixed.any():
        raise NotImplementedError(
            "the torus gradient mixes live and dead components on boundary boxes; "
            "use a torus whose frequencies only feed components live on the same boxes")
    boxes = np.flatnonzero(live.all(axis=0))
    out = None
    for a in comps:
        i = pot_comps[a]
        S = sp.csr_matrix((np.ones(boxes.size), (layout.lookup[a][boxes], np.arange(boxes.size))),
                          shape=(layout.size, boxes.size))
        part = sp.kron(S, Gy[i * N:(i + 1) * N], format="csr")
        out = part if out is None else out + part
    keep = np.flatnonzero(np.arange(boxes.size * N) % N != 0)
    return out[:, keep].tocsr()


def _constants(layout: Layout, N: int) -> sp.csr_matrix:
    return sp.kron(sp.identity(layout.size), np.ones((N, 1)), format="csr")


def solve_maxwell_homogenized(p: MaxwellProblem, residual_tol: float = 1e-9) -> MaxwellTwoScaleSolution:
    """Galerkin time stepping of the limit system in ``(u0, chi1, q0, chi2)``.

    The four block equations (averaged and potential parts of both field
    equations) are the Galerkin equations in the basis
    ``[constants, potentials]``; residuals of each are recorded.
    """
    grid, t, tg = p.grid, p.torus, p.time
    if not t.ergodic:
        raise NotImplementedError("the limit solver needs an ergodic torus (invariants = constants)")
    lu, lq = p.layouts()
    N = t.size
    m0, m1 = _laws(p)
    C = sp.kron(build_curl_x(grid), sp.identity(N), format="csr")
    Pu = potential_basis(lu, t, list(range(lu.n_comp)))
    Pq = potential_basis(lq, t, list(range(lq.n_comp))) if p.dim == 3 else sp.csr_matrix((lq.size * N, 0))
    Bu = sp.hstack([_constants(lu, N), Pu], format="csr")
    Bq = sp.hstack([_constants(lq, N), Pq], format="csr")
    dt = tg.dt
    Mu0 = (Bu.T @ m0.N0 @ Bu) / N
    Mu1 = (Bu.T @ m0.N1 @ Bu) / N
    Mq0 = (Bq.T @ m1.N0 @ Bq) / N
    Cr = (Bq.T @ C @ Bu) / N
    N0 = sp.block_diag([Mu0, Mq0], format="csr")
    K = sp.bmat([[Mu0 / dt + Mu1, -Cr.T], [Cr, Mq0 / dt]], format="csr")
    fu, fq = p.sources()
    Fu = np.repeat(fu, N, axis=1)
    Fq = np.repeat(fq, N, axis=1)
    F = np.concatenate([(Bu.T @ Fu.T).T, (Bq.T @ Fq.T).T], axis=1) / N
    Z, res = implicit_euler(N0, K, F, dt, residual_tol)
    nu_ = Bu.shape[1]
    n0u, n0q = lu.size, lq.size

    def expand(cols, basis):
        return np.stack([(basis @ c).reshape(-1, N) for c in cols])

    zu, zq = Z[:, :nu_], Z[:, nu_:]
    u0 = np.repeat(zu[:, :n0u, None], N, axis=2)
    q0 = np.repeat(zq[:, :n0q, None], N, axis=2)
    chi1 = expand(zu[:, n0u:], Pu) if Pu.shape[1] else np.zeros_like(u0)
    chi2 = expand(zq[:, n0q:], Pq) if Pq.shape[1] else np.zeros_like(q0)
    sol = MaxwellTwoScaleSolution(u0, chi1, q0, chi2)
    sol.residuals = _limit_residuals(p, sol, m0, m1, C, Fu, Fq, Pu, Pq)
    sol.residuals["max_step_residual"] = float(res.max())
    return sol


def _limit_residuals(p, sol, m0, m1, C, Fu, Fq, Pu, Pq) -> dict:
    tg, t = p.time, p.torus
    N = t.size
    n_t = tg.n_t
    U = (sol.u0 + sol.chi1).reshape(n_t, -1)
    Q = (sol.q0 + sol.chi2).reshape(n_t, -1)
    dU = np.diff(np.concatenate([np.zeros_like(U[:1]), U]), axis=0) / tg.dt
    dQ = np.diff(np.concatenate([np.zeros_like(Q[:1]), Q]), axis=0) / tg.dt
    ru = (m0.N0 @ dU.T + m0.N1 @ U.T - C.T @ Q.T).T - Fu
    rq = (m1.N0 @ dQ.T + C @ U.T).T - Fq
    scale = max(np.linalg.norm(Fu), np.linalg.norm(Fq), 1e-300)
    mean_u = ru.reshape(n_t, -1, N).mean(axis=2)
    mean_q = rq.reshape(n_t, -1, N).mean(axis=2)
    return {
        "averaged_u": float(np.linalg.norm(mean_u) / scale * np.sqrt(N)),
        "corrector_u": float(np.linalg.norm(ru @ Pu) / scale / np.sqrt(N)) if Pu.shape[1] else 0.0,
        "averaged_q": float(np.linalg.norm(mean_q) / scale * np.sqrt(N)),
        "corrector_q": float(np.linalg.norm(rq @ Pq) / scale / np.sqrt(N)) if Pq.shape[1] else 0.0,
    }


def _box_vectors(layout: Layout, v: np.ndarray) -> np.ndarray:
    """``(size, N)`` live values -> ``(n_box, n_comp, N)`` with zeros at dead entries."""
    return np.moveaxis(layout.to_box(v), 0, 1)


def limit_checks(p: MaxwellProblem, sol: MaxwellTwoScaleSolution) -> dict:
    """Kernel membership and the conservation identities of the limit solution.

    ``ker_curl``: largest ``|(1 - P_ker_curl)(u0 + chi1)|`` over time.
    ``pot_curl``: largest ``|P_pot curl0 (u0 + chi1)|`` (3D only; in the
    2D reduction the curl is normal to every torus gradient).
    ``chi2_conservation``: largest change in time of ``P_pot mu0 (q0 + chi2)``.
    """
    grid, t = p.grid, p.torus
    lu, lq = p.layouts()
    Pk = build_projection("P_ker_curl", t)
    Pp = build_projection("P_pot", t)
    curl = build_curl_x(grid)
    _, _, mu = p.blocks()
    ker, pot, cons = 0.0, 0.0, 0.0
    first = None
    scale = max(np.abs(sol.u0).max(), np.abs(sol.q0).max(), 1e-300)
    for k in range(p.time.n_t):
        uk = sol.u0[k] + sol.chi1[k]
        vec = _box_vectors(lu, uk)
        ker = max(ker, float(np.abs(Pk(vec) - vec).max()))
        if p.dim == 3:
            cv = _box_vectors(lq, curl @ uk)
            pot = max(pot, float(np.abs(Pp(cv)).max()))
            qk = _box_vectors(lq, sol.q0[k] + sol.chi2[k])
            flux = np.einsum("bkij,bjk->bik", mu, qk)
            X = Pp(flux)
            first = X if first is None else first
            cons = max(cons, float(np.abs(X - first).max()))
    return {"ker_curl": ker / scale, "pot_curl": pot / scale, "chi2_conservation": cons / scale}


def _correctors_dirs(chi: np.ndarray | None, n: int, N: int) -> np.ndarray:
    return np.zeros((n, n, N)) if chi is None else chi


def evaluate_memory_formulas(correctors: dict, eta0: CoefficientField, sigma0: CoefficientField | None,
                             u0: np.ndarray, q0: np.ndarray, tg: WeightedTimeGrid,
                             u0_init=None, chi1_init=None, q0_init=None, chi2_init=None):
    """Closed-form correctors from the averaged fields.

    ``u0`` has shape ``(n_t, n, n_box)`` (component-major per box) and
    ``q0`` shape ``(n_t, n_q, n_box)``. With ``A = eta0^{-1} sigma0`` per
    torus node,

        chi1(t) = -chi_eta^i u0^i(t) + exp(-A t)(chi_eta^i u0^i(0) + chi1(0))
                  + int_0^t exp(-A (t - s)) A (chi_eta^i - chi_sigma^i) u0^i(s) ds,
        chi2(t) = -chi_mu^i q0^i(t) + chi_mu^i q0^i(0) + chi2(0).

    The initial values default to zero (causal data with zero
    pre-history). The convolution uses the trapezoidal rule with per-node
    matrix exponentials. Returns ``chi1`` of shape ``(n_t, n_box, n, N)``
    and ``chi2`` of shape ``(n_t, n_box, n_q, N)``.
    """
    if eta0.x_dependent or (sigma0 is not None and sigma0.x_dependent):
        raise ValueError("memory formulas need x-independent coefficients")
    n, N = eta0.n, eta0.torus.size
    n_t, _, n_box = u0.shape
    if np.min(np.abs(np.linalg.det(eta0.values))) < 1e-14:
        raise ValueError("eta0 is singular on some torus node")
    eta_inv = np.linalg.inv(eta0.values)
    ch_eta = _correctors_dirs(correctors.get("eta"), n, N)
    ch_sig = _correctors_dirs(correctors.get("sigma"), n, N)
    # X[t, box, comp, node] = sum_i chi^i[comp, node] u0^i[t, box]
    X = np.einsum("icn,tib->tbcn", ch_eta, u0)
    u_init = np.zeros((n, n_box)) if u0_init is None else np.asarray(u0_init)
    c_init = np.zeros((n_box, n, N)) if chi1_init is None else np.asarray(chi1_init)
    start = np.einsum("icn,ib->bcn", ch_eta, u_init) + c_init
    chi1 = -X
    if sigma0 is None or not np.any(sigma0.values):
        chi1 = chi1 + start[None]
    else:
        A = eta_inv @ sigma0.values  # (N, n, n)
        E = expm(-A * tg.dt)
        src = np.einsum("nij,tbjn->tbin", A, np.einsum("icn,tib->tbcn", ch_eta - ch_sig, u0))
        conv = np.zeros_like(src[0])
        homog = start.astype(src.dtype)
        out = np.empty_like(src)
        prev_src = np.zeros_like(src[0])
        for k in range(n_t):
            # exp(-A t_k) start, and trapezoid from t_0 = 0
            if k > 0:
                homog = np.einsum("nij,bjn->bin", E, homog)
                conv = np.einsum("nij,bjn->bin", E, conv + 0.5 * tg.dt * prev_src) + 0.5 * tg.dt * src[k]
            out[k] = homog + conv
            prev_src = src[k]
        chi1 = chi1 + out
    ch_mu = correctors.get("mu")
    nq = q0.shape[1]
    if ch_mu is None:
        chi2 = np.zeros((n_t, n_box, nq, N))
    else:
        q_init = np.zeros((nq, n_box)) if q0_init is None else np.asarray(q0_init)
        c2 = np.zeros((n_box, nq, N)) if chi2_init is None else np.asarray(chi2_init)
        chi2 = (-np.einsum("icn,tib->tbcn", ch_mu, q0)
                + (np.einsum("icn,ib->bcn", ch_mu, q_init) + c2)[None])
    return chi1, chi2


def memory_formula_residual(p: MaxwellProblem, sol: MaxwellTwoScaleSolution, correctors: dict | None = None) -> dict:
    """Substitute the closed-form correctors into the discrete corrector equations.

    Returns the weighted residual of
    ``P_pot[eta0 d_t (u0 + chi1) + sigma0 (u0 + chi1)]`` relative to the
    weighted norm of ``P_pot[eta0 d_t u0 + sigma0 u0]``, the largest
    deviation of ``chi2 + chi_mu q0`` from its initial value, the largest
    gap between formula and solver correctors and the largest part of the
    formula corrector outside the torus gradients (both relative).

    When ``eta0^{-1} sigma0`` varies on the torus the formula only fixes
    the projected equation: its value then has a non-gradient part and
    differs from the solver corrector by that much. For torus-constant
    ``eta0^{-1} sigma0`` both agree to round-off.
    """
    eta_c, sig_c, mu_c = p.cell_coefficients()
    if eta_c is None:
        raise ValueError("memory formulas need x-independent eta0")
    if correctors is None:
        correctors = solve_memory_correctors(eta_c, sig_c, mu_c)
    grid, t, tg = p.grid, p.torus, p.time
    lu, lq = p.layouts()
    N, n_t = t.size, tg.n_t
    u0_box = np.stack([lu.to_box(sol.u0[k][:, 0]) for k in range(n_t)])  # (n_t, n, n_box)
    q0_box = np.stack([lq.to_box(sol.q0[k][:, 0]) for k in range(n_t)])
    chi1, chi2 = evaluate_memory_formulas(correctors, eta_c, sig_c, u0_box, q0_box, tg)
    eta, sig, _ = p.blocks()
    Pp = build_projection("P_pot", t)
    X = np.moveaxis(u0_box, 1, 2)[..., None] + chi1  # (n_t, n_box, n, N)
    U0 = np.broadcast_to(np.moveaxis(u0_box, 1, 2)[..., None], X.shape)
    mask = np.stack([m.ravel() for m in lu.masks], axis=1)[None, :, :, None]  # live components

    def corrector_eq(Y):
        dY = np.diff(np.concatenate([np.zeros_like(Y[:1]), Y]), axis=0) / tg.dt
        r = np.einsum("bnij,tbjn->tbin", eta, dY) + np.einsum("bnij,tbjn->tbin", sig, Y)
        return np.stack([Pp(r[k] * mask[0]) for k in range(n_t)])

    r = corrector_eq(X)
    ref = corrector_eq(U0)
    w = tg.weights[:, None, None, None]
    num = np.sqrt(np.sum(w * np.abs(r) ** 2))
    den = max(np.sqrt(np.sum(w * np.abs(ref) ** 2)), 1e-300)
    ch_mu = correctors.get("mu")
    if ch_mu is not None:
        base = chi2 + np.einsum("icn,tib->tbcn", ch_mu, q0_box)
        cons = float(np.abs(base - base[0]).max())
    else:
        cons = 0.0
    solver = np.stack([np.moveaxis(lu.to_box(sol.chi1[k]), 0, 1) for k in range(n_t)])
    ref_u = max(float(np.abs(solver).max()), float(np.abs(u0_box).max()), 1e-300)
    off = np.stack([chi1[k] - Pp(chi1[k]) for k in range(n_t)]) * mask
    return {
        "residual": float(num / den),
        "chi2_identity": cons,
        "formula_vs_solver": float(np.abs(chi1 * mask - solver).max() / ref_u),
        "non_potential": float(np.abs(off).max() / ref_u),
    }


def _dictionary(layout: Layout, torus, weight: float) -> list[np.ndarray]:
    x = layout.positions
    y = torus.coords(0.0)[:, 0]
    ys = [np.ones_like(y), np.cos(2 * np.pi * y), np.sin(2 * np.pi * y), np.cos(4 * np.pi * y)]
    out = []
    for px in (1, 2):
        tx = np.prod(np.sin(np.pi * px * x), axis=1)
        for ty in ys:
            tt = np.outer(tx, ty)
            out.append(tt / (np.linalg.norm(tt) * np.sqrt(weight)))
    return out


def maxwell_corrector_report(p: MaxwellProblem, m_list, limit: MaxwellTwoScaleSolution | None = None,
                             timing: bool = False) -> tuple[list[dict], dict]:
    """Corrector errors ``|u_eps - T_-eps chi1 - u0|_nu`` and ``|q_eps - T_-eps chi2 - q0|_nu`` per ``eps``.

    ``pairing_max`` is the largest weighted pairing of
    ``T_eps u_eps - (u0 + chi1)`` with a fixed dictionary of eight
    unit-norm tensors; ``energy_slack`` comes from the eps-solve.
    """
    limit = solve_maxwell_homogenized(p) if limit is None else limit
    grid, t, tg = p.grid, p.torus, p.time
    lu, lq = p.layouts()
    N = t.size
    weight = grid.h**grid.dim / N
    tests = _dictionary(lu, t, weight)
    rows, extra = [], []
    for m in m_list:
        q = p.with_m(m)
        t0 = time.perf_counter()
        sol = solve_maxwell_eps(q)
        op = sol["unfold"]
        eu = sol["u"] - op.fold(limit.chi1, lu) - limit.u0
        eq = sol["q"] - op.fold(limit.chi2, lq) - limit.q0
        du = op.unfold(sol["u"], lu) - (limit.u0 + limit.chi1)
        pair = max(abs(weighted_inner(TimeSignal(du, tg), TimeSignal(np.broadcast_to(tt, du.shape), tg), weight))
                   for tt in tests)
        wall = (time.perf_counter() - t0) * 1e3 if timing else 0.0
        cu = weighted_norm(TimeSignal(eu, tg), weight)
        cq = weighted_norm(TimeSignal(eq, tg), weight)
        rows.append({
            "epsilon": 1.0 / m,
            "corr_err_u": cu,
            "corr_err_q": cq,
            "pairing_max": float(pair),
            "energy_slack": sol["checks"]["energy_slack"],
            "wall_ms": wall,
        })
        extra.append({"epsilon": 1.0 / m, "combined": float(np.hypot(cu, cq)),
                      "bound_ok": sol["checks"]["bound_ok"], "causal": sol["checks"]["causal"],
                      "max_step_residual": sol["checks"]["max_step_residual"]})
    return rows, {"details": extra, "limit_residuals": limit.residuals}
