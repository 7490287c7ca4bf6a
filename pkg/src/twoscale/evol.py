"""Evolutionary equations ``(M(d_t) + A) w = F`` on exponentially weighted time grids.

Material laws are affine, ``M(z) = z N0 + N1``, with sparse ``N0``, ``N1``.
The skew block is

    A (u, q) = (-C^H q, C u)

for a sparse ``C`` from the u-space to the q-space; Maxwell and the wave
system both take this form with ``C`` the Dirichlet curl or gradient.

Time is discretised on ``t_k = k dt`` (``k = 0 .. n_t - 1``) with the
backward difference and zero pre-history, so implicit Euler is exactly
causal. The weighted norm is ``sum_k dt exp(-2 nu t_k) |f_k|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .io import write_csv
from .mesh import Layout, TorusGrid
from .unfold import UnfoldOperator

__all__ = [
    "WeightedTimeGrid",
    "TimeSignal",
    "MaterialLaw",
    "EvolutionarySystem",
    "SolverFailure",
    "block_operator",
    "unfold_matrix",
    "time_derivative",
    "weighted_norm",
    "weighted_inner",
    "fourier_laplace",
    "inverse_fourier_laplace",
    "frequency_norm",
    "solve_frequency",
    "solve_time_domain",
    "implicit_euler",
    "apply_time_mollifier",
    "time_antiderivative",
    "solution_bound",
    "frequency_sweep",
    "write_signal_csv",
]


class SolverFailure(RuntimeError):
    """A linear solve inside the time stepper failed or lost accuracy."""


@dataclass(frozen=True)
class WeightedTimeGrid:
    """Uniform grid ``t_k = k dt`` on ``[0, T)`` with weight ``exp(-nu t)``."""

    T: float
    n_t: int
    nu: float = 1.0

    def __post_init__(self):
        if self.n_t < 1 or self.T <= 0:
            raise ValueError("need T > 0 and n_t >= 1")
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.dt * self.nu >= 0.5:
            raise ValueError(f"dt*nu = {self.dt * self.nu:.3g} violates the resolution guard dt*nu < 0.5")

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_t) * self.dt

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights ``dt exp(-2 nu t_k)``."""
        return self.dt * np.exp(-2 * self.nu * self.t)

    def refined(self, factor: int = 2) -> "WeightedTimeGrid":
        return WeightedTimeGrid(self.T, self.n_t * factor, self.nu)

    def tail_bound(self, t_support: float) -> float:
        """``exp(-2 nu (T - t_support))``, the weight left beyond the window."""
        return float(np.exp(-2 * self.nu * (self.T - t_support)))


@dataclass
class TimeSignal:
    """Samples ``f(t_k)`` of a causal signal; leading axis is time."""

    samples: np.ndarray
    grid: WeightedTimeGrid

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.shape[0] != self.grid.n_t:
            raise ValueError(f"signal has {self.samples.shape[0]} samples, grid has {self.grid.n_t}")

    @property
    def causal_from(self) -> int:
        """First time index with a nonzero sample (``n_t`` for the zero signal)."""
        flat = self.samples.reshape(self.grid.n_t, -1)
        nz = np.flatnonzero(np.any(flat != 0, axis=1))
        return int(nz[0]) if nz.size else self.grid.n_t

    @property
    def space_shape(self) -> tuple:
        return self.samples.shape[1:]

    @classmethod
    def separable(cls, grid: WeightedTimeGrid, space: np.ndarray, profile) -> "TimeSignal":
        """``f(t, x) = profile(t) space(x)``."""
        g = np.asarray(profile(grid.t))
        space = np.asarray(space)
        return cls(g.reshape((-1,) + (1,) * space.ndim) * space[None], grid)

    def __add__(self, other):
        return TimeSignal(self.samples + other.samples, self.grid)

    def __sub__(self, other):
        return TimeSignal(self.samples - other.samples, self.grid)


def weighted_inner(f: TimeSignal, g: TimeSignal, space_weight: float = 1.0) -> complex:
    a = f.samples.reshape(f.grid.n_t, -1)
    b = g.samples.reshape(g.grid.n_t, -1)
    per = np.einsum("ki,ki->k", np.conj(b), a)
    return complex(space_weight * np.sum(f.grid.weights * per))


def weighted_norm(f: TimeSignal, space_weight: float = 1.0) -> float:
    """``(sum_k dt exp(-2 nu t_k) w |f_k|^2)^(1/2)``."""
    a = f.samples.reshape(f.grid.n_t, -1)
    per = np.sum(np.abs(a) ** 2, axis=1)
    return float(np.sqrt(space_weight * np.sum(f.grid.weights * per)))


def time_derivative(f: TimeSignal) -> TimeSignal:
    """Backward difference ``(f_k - f_{k-1}) / dt`` with ``f_{-1} = 0``.

    Examples
    --------
    >>> g = WeightedTimeGrid(1.0, 4)
    >>> time_derivative(TimeSignal(np.ones(4), g)).samples
    array([4., 0., 0., 0.])
    """
    s = f.samples
    prev = np.concatenate([np.zeros_like(s[:1]), s[:-1]])
    return TimeSignal((s - prev) / f.grid.dt, f.grid)


def time_antiderivative(f: TimeSignal, rule: str = "rectangle") -> TimeSignal:
    """Causal inverse of the time derivative.

    ``rule="rectangle"`` is the exact inverse of :func:`time_derivative`
    (``dt`` times the cumulative sum); ``rule="trapezoid"`` is cumulative
    trapezoidal quadrature from ``f_{-1} = 0``.
    """
    s = f.samples
    if rule == "rectangle":
        return TimeSignal(np.cumsum(s, axis=0) * f.grid.dt, f.grid)
    if rule == "trapezoid":
        prev = np.concatenate([np.zeros_like(s[:1]), s[:-1]])
        return TimeSignal(np.cumsum(0.5 * (s + prev), axis=0) * f.grid.dt, f.grid)
    raise ValueError(f"unknown rule {rule!r}")


def fourier_laplace(f: TimeSignal) -> tuple[np.ndarray, np.ndarray]:
    """Discrete transform ``g_m = dt sum_k exp(-nu t_k) f_k exp(-2 pi i m k / n_t)``.

    Returns ``(z, g)`` with ``z_m = nu + i xi_m`` the frequency points.
    ``frequency_norm(g)`` equals ``weighted_norm(f)`` by Parseval.
    """
    grid = f.grid
    damp = np.exp(-grid.nu * grid.t).reshape((-1,) + (1,) * (f.samples.ndim - 1))
    g = grid.dt * np.fft.fft(damp * f.samples, axis=0)
    xi = 2 * np.pi * np.fft.fftfreq(grid.n_t, grid.dt)
    return grid.nu + 1j * xi, g


def inverse_fourier_laplace(g: np.ndarray, grid: WeightedTimeGrid) -> TimeSignal:
    damp = np.exp(grid.nu * grid.t).reshape((-1,) + (1,) * (g.ndim - 1))
    return TimeSignal(damp * np.fft.ifft(g, axis=0) / grid.dt, grid)


def frequency_norm(g: np.ndarray, grid: WeightedTimeGrid, space_weight: float = 1.0) -> float:
    """``((1 / (n_t dt)) sum_m |g_m|^2)^(1/2)``."""
    return float(np.sqrt(space_weight * np.sum(np.abs(g) ** 2) / (grid.n_t * grid.dt)))


def _components(A: sp.spmatrix):
    """Index sets of the decoupled diagonal blocks of ``A``."""
    pattern = (abs(A) + abs(A).T).tocsr()
    n, labels = connected_components(pattern, directed=False)
    if n == 1 or n > 256:
        return [np.arange(A.shape[0])]
    order = np.argsort(labels, kind="stable")
    cuts = np.cumsum(np.bincount(labels, minlength=n))[:-1]
    return np.split(order, cuts)


class _SplitLU:
    """Sparse LU applied separately on every decoupled block."""

    def __init__(self, A: sp.spmatrix):
        A = sp.csc_matrix(A)
        self.shape = A.shape
        self.dtype = A.dtype
        self.parts = []
        for idx in _components(A):
            sub = A[idx][:, idx].tocsc()
            try:
                self.parts.append((idx, spla.splu(sub)))
            except RuntimeError as exc:
                raise SolverFailure(f"sparse factorisation failed: {exc}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        dtype = np.result_type(self.dtype, b.dtype)
        out = np.zeros(b.shape, dtype=dtype)
        for idx, lu in self.parts:
            rhs = b[idx]
            if np.iscomplexobj(rhs) and not np.iscomplexobj(self.dtype):
                out[idx] = lu.solve(rhs.real) + 1j * lu.solve(rhs.imag)
            else:
                out[idx] = lu.solve(rhs.astype(dtype, copy=False))
        return out


def _hermitian_min_eig(M: sp.spmatrix) -> float:
    """Smallest eigenvalue of the Hermitian part, block by decoupled block."""
    H = sp.csr_matrix((M + M.conj().T) * 0.5)
    n, labels = connected_components(abs(H), directed=False)
    order = np.argsort(labels, kind="stable")
    sizes = np.bincount(labels, minlength=n)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    worst = np.inf
    for s in np.unique(sizes):
        comps = np.flatnonzero(sizes == s)
        idx = order[starts[comps][:, None] + np.arange(s)[None, :]]
        if s > 4000:
            for row in idx:
                sub = H[row][:, row]
                val = spla.eigsh(sub, k=1, which="SA", return_eigenvectors=False)[0]
                worst = min(worst, float(val))
            continue
        blocks = np.empty((len(comps), s, s), dtype=H.dtype)
        for p in range(s):
            for q in range(s):
                blocks[:, p, q] = np.asarray(H[idx[:, p], idx[:, q]]).ravel()
        worst = min(worst, float(np.linalg.eigvalsh(blocks)[:, 0].min()))
    return worst


@dataclass
class MaterialLaw:
    """Affine material law ``M(z) = z N0 + N1``.

    Parameters
    ----------
    N0, N1 : sparse matrix or array
        Square operators on one space.
    nu0 : float
        Abscissa beyond which the law is coercive.
    """

    N0: sp.spmatrix
    N1: sp.spmatrix
    nu0: float = 0.0

    def __post_init__(self):
        self.N0 = sp.csr_matrix(self.N0)
        self.N1 = sp.csr_matrix(self.N1)
        if self.N0.shape != self.N1.shape or self.N0.shape[0] != self.N0.shape[1]:
            raise ValueError("N0 and N1 must be square and of equal shape")

    @property
    def size(self) -> int:
        return self.N0.shape[0]

    @classmethod
    def diagonal(cls, n0, n1, nu0: float = 0.0) -> "MaterialLaw":
        return cls(sp.diags(np.asarray(n0)), sp.diags(np.asarray(n1)), nu0)

    def at(self, z: complex) -> sp.csr_matrix:
        return (z * self.N0 + self.N1).tocsr()

    def sample_points(self, nu: float, n: int = 8) -> np.ndarray:
        """``n`` points on ``Re z = nu`` (0 and a symmetric log-spaced fan)."""
        xi = np.concatenate([[0.0], np.geomspace(1.0, 1e3, (n - 1) // 2 + 1)])
        xi = np.concatenate([xi, -xi[1:]])[:n]
        return nu + 1j * xi

    def coercivity(self, nu: float, n: int = 8) -> float:
        """Smallest eigenvalue of ``Re M(z)`` over ``n`` points on ``Re z = nu``."""
        if nu <= self.nu0:
            raise ValueError(f"nu must exceed nu0: nu = {nu}, nu0 = {self.nu0}")
        return min(_hermitian_min_eig(self.at(z)) for z in self.sample_points(nu, n))

    def conjugate(self, P: sp.spmatrix) -> "MaterialLaw":
        """``P^T M P`` (with ``P`` a permutation this is ``T_-eps M T_eps``)."""
        return MaterialLaw((P.T @ self.N0 @ P).tocsr(), (P.T @ self.N1 @ P).tocsr(), self.nu0)


def block_operator(layout: Layout, blocks: np.ndarray, torus: TorusGrid | None = None) -> sp.csr_matrix:
    """Pointwise operator from per-box component blocks.

    ``blocks`` has shape ``(n_box, n_c, n_c)``, or ``(n_box, N, n_c, n_c)``
    together with ``torus``; entry ``[j, (k,) a, b]`` couples component
    ``b`` to component ``a`` at box ``j``. Dead entries are dropped, so the
    result acts on live DOFs (ordered ``i * N + k`` on product spaces).
    """
    blocks = np.asarray(blocks)
    N = 1 if torus is None else torus.size
    nc = layout.n_comp
    if torus is None:
        blocks = blocks[:, None]
    if blocks.shape != (layout.grid.box_size, N, nc, nc):
        raise ValueError(f"blocks of shape {blocks.shape} do not match layout {layout} and torus size {N}")
    rows, cols, vals = [], [], []
    k = np.arange(N)
    for a in range(nc):
        for b in range(nc):
            ia, ib = layout.lookup[a], layout.lookup[b]
            ok = (ia >= 0) & (ib >= 0)
            box = np.flatnonzero(ok)
            v = blocks[box, :, a, b]
            nz = v != 0
            r = (ia[box][:, None] * N + k[None, :])[nz]
            c = (ib[box][:, None] * N + k[None, :])[nz]
            rows.append(r)
            cols.append(c)
            vals.append(v[nz])
    n = layout.size * N
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def unfold_matrix(op: UnfoldOperator, layout: Layout) -> sp.csr_matrix:
    """Permutation matrix of ``T_eps`` on ``layout x torus`` (flattened ``i * N + k``)."""
    N = op.torus.size
    src = op.apply(np.arange(layout.size * N).reshape(layout.size, N), layout).ravel()
    n = src.size
    return sp.csr_matrix((np.ones(n), (np.arange(n), src)), shape=(n, n))


@dataclass
class EvolutionarySystem:
    """Block system ``diag(M0(d_t), M1(d_t)) + A`` with ``A (u, q) = (-C^H q, C u)``.

    With ``unfold = (op, u_layout, q_layout)`` the laws act on product
    spaces and are conjugated to ``T_-eps M T_eps``; ``C`` is then an
    x-operator and acts on every torus node.
    """

    m0: MaterialLaw
    m1: MaterialLaw
    C: sp.spmatrix
    unfold: tuple | None = None
    _laws: tuple = field(init=False, repr=False)
    _C: sp.spmatrix = field(init=False, repr=False)

    def __post_init__(self):
        self.C = sp.csr_matrix(self.C)
        m0, m1, C = self.m0, self.m1, self.C
        if self.unfold is not None:
            op, lu, lq = self.unfold
            N = op.torus.size
            C = sp.kron(C, sp.identity(N), format="csr")
            m0 = m0.conjugate(unfold_matrix(op, lu))
            m1 = m1.conjugate(unfold_matrix(op, lq))
        if C.shape != (m1.size, m0.size):
            raise ValueError(f"C has shape {C.shape}, expected {(m1.size, m0.size)}")
        self._laws = (m0, m1)
        self._C = C

    @property
    def n_u(self) -> int:
        return self._laws[0].size

    @property
    def size(self) -> int:
        return self._laws[0].size + self._laws[1].size

    @property
    def nu0(self) -> float:
        return max(self.m0.nu0, self.m1.nu0)

    def skew(self) -> sp.csr_matrix:
        C = self._C
        return sp.bmat([[None, -C.conj().T], [C, None]], format="csr")

    def operator(self, z: complex) -> sp.csr_matrix:
        m0, m1 = self._laws
        return (sp.block_diag([m0.at(z), m1.at(z)]) + self.skew()).tocsr()

    def N0(self) -> sp.csr_matrix:
        return sp.block_diag([self._laws[0].N0, self._laws[1].N0], format="csr")

    def N1(self) -> sp.csr_matrix:
        return sp.block_diag([self._laws[0].N1, self._laws[1].N1], format="csr")

    def coercivity(self, nu: float, n: int = 8) -> float:
        return min(self._laws[0].coercivity(nu, n), self._laws[1].coercivity(nu, n))

    def split(self, w: np.ndarray):
        return w[..., : self.n_u], w[..., self.n_u:]


def solve_frequency(system: EvolutionarySystem, z: complex, rhs: np.ndarray, nu: float | None = None) -> np.ndarray:
    """Solve ``(M(z) + A) w = rhs`` and certify ``|w| <= |rhs| / c``.

    ``c`` is the coercivity constant on the line ``Re z``.
    """
    nu = z.real if nu is None else nu
    if z.real < nu or nu <= system.nu0:
        raise ValueError(f"need Re z >= nu > nu0, got z = {z}, nu = {nu}, nu0 = {system.nu0}")
    c = system.coercivity(nu)
    if not c > 0:
        raise ValueError(f"material law is not coercive at Re z = {nu}: c = {c:.3g}")
    rhs = np.asarray(rhs, dtype=complex)
    w = _SplitLU(system.operator(z).astype(complex)).solve(rhs)
    bound = np.linalg.norm(rhs) / c
    if np.linalg.norm(w) > bound * (1 + 1e-8):
        raise SolverFailure(f"resolvent bound violated: |w| = {np.linalg.norm(w):.6g} > {bound:.6g}")
    return w


def implicit_euler(N0: sp.spmatrix, K: sp.spmatrix, F: np.ndarray, dt: float,
                   residual_tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``K w_k = F_k + N0 w_{k-1} / dt`` for ``k = 0, 1, ...`` with ``w_{-1} = 0``.

    One sparse LU is computed on first use. Steps whose right-hand side
    vanishes are skipped, so leading zeros of ``F`` are reproduced exactly.
    Returns the solution rows and the per-step relative residuals.
    """
    n_t = F.shape[0]
    dtype = np.result_type(K.dtype, F.dtype)
    W = np.zeros((n_t, K.shape[0]), dtype=dtype)
    res = np.zeros(n_t)
    lu = None
    prev = np.zeros(K.shape[0], dtype=dtype)
    for k in range(n_t):
        b = F[k] + N0 @ prev / dt
        if not np.any(b):
            prev = W[k]
            continue
        if lu is None:
            lu = _SplitLU(K)
        W[k] = lu.solve(b)
        r = np.linalg.norm(K @ W[k] - b) / np.linalg.norm(b)
        res[k] = r
        if not np.isfinite(r) or r > residual_tol:
            raise SolverFailure(f"step {k}: relative residual {r:.3e} exceeds {residual_tol:.1e}")
        prev = W[k]
    return W, res


def solve_time_domain(system: EvolutionarySystem, f: TimeSignal, residual_tol: float = 1e-9,
                      history: bool = False):
    """Implicit Euler for ``(N0 d_t + N1 + A) w = f`` with zero pre-history.

    Each step solves ``(N0 / dt + N1 + A) w_k = f_k + N0 w_{k-1} / dt``.
    The stepping never looks ahead, so ``w`` vanishes wherever ``f`` has
    vanished so far.

    Returns the solution signal (and the per-step relative residuals when
    ``history``).
    """
    grid = f.grid
    F = f.samples.reshape(grid.n_t, -1)
    if F.shape[1] != system.size:
        raise ValueError(f"data has {F.shape[1]} unknowns per step, system has {system.size}")
    N0 = system.N0()
    K = (N0 / grid.dt + system.N1() + system.skew()).tocsr()
    W, res = implicit_euler(N0, K, F, grid.dt, residual_tol)
    out = TimeSignal(W, grid)
    return (out, res) if history else out


def solution_bound(system: EvolutionarySystem, f: TimeSignal, w: TimeSignal, space_weight: float = 1.0) -> dict:
    """Check ``|w|_nu <= (1/c)(1 + 5 dt nu) |f|_nu`` and the energy estimate.

    ``energy_slack = (1 + 5 dt nu) Re<f, w>_nu - c |w|_nu^2`` is nonnegative
    whenever the discrete coercivity estimate holds.
    """
    grid = f.grid
    c = system.coercivity(grid.nu)
    slack = 1 + 5 * grid.dt * grid.nu
    nf = weighted_norm(f, space_weight)
    nw = weighted_norm(w, space_weight)
    pair = weighted_inner(f, w, space_weight).real
    return {
        "c": c,
        "norm_f": nf,
        "norm_w": nw,
        "bound": slack * nf / c,
        "bound_ok": bool(nw <= slack * nf / c),
        "energy_slack": slack * pair - c * nw**2,
    }


def apply_time_mollifier(f: TimeSignal, delta: float) -> TimeSignal:
    """Causal solution of ``(1 + delta d_t) g = f`` on the grid."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    dt = f.grid.dt
    a, b = dt / (dt + delta), delta / (dt + delta)
    s = f.samples
    out = np.zeros_like(s, dtype=np.result_type(s.dtype, float))
    prev = np.zeros_like(out[0])
    for k in range(s.shape[0]):
        prev = a * s[k] + b * prev
        out[k] = prev
    return TimeSignal(out, f.grid)


def frequency_sweep(system: EvolutionarySystem, rhs: np.ndarray, zs) -> list[dict]:
    """Rows ``(re_z, im_z, solution_norm, bound)`` for a list of frequencies."""
    rows = []
    for z in zs:
        w = solve_frequency(system, complex(z), rhs)
        c = system.coercivity(complex(z).real)
        rows.append({"re_z": complex(z).real, "im_z": complex(z).imag,
                     "solution_norm": float(np.linalg.norm(w)), "bound": 1.0 / c})
    return rows


def write_signal_csv(path, f: TimeSignal, names: list[str] | None = None) -> None:
    """Write ``t`` followed by one column per space component (real parts)."""
    flat = f.samples.reshape(f.grid.n_t, -1)
    names = names or [f"c{i}" for i in range(flat.shape[1])]
    cols = ["t"] + names
    rows = [dict(zip(cols, [t] + list(np.real(row)))) for t, row in zip(f.grid.t, flat)]
    write_csv(path, cols, rows)
