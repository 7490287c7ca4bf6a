"""Cell problems, torus projections, homogenized tensors and periodization.

Coefficients are matrix fields on the torus, one ``n x n`` block per node
(``n`` = number of physical directions), optionally with a leading axis
over x-rows. The collocated scheme pairs the block at node ``k`` with the
forward differences starting at ``k``; the cell operator

    phi -> -div_y a grad_y phi = G^T a G phi

is then symmetric for Hermitian ``a`` and its discrete homogenized tensor
is the flux average ``mean(a (e_i + G phi_i))``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy import stats

from .io import read_field, write_field
from .mesh import TorusGrid, build_grad_y

__all__ = [
    "CellSolverError",
    "CoefficientField",
    "Corrector",
    "HomogenizedTensor",
    "ProbabilityModel",
    "Projection",
    "solve_cell_problem",
    "solve_potential",
    "homogenized_tensor",
    "homogenize",
    "solve_memory_correctors",
    "build_projection",
    "sample_periodized_field",
    "monte_carlo_ahom",
    "save_field",
    "load_field",
]


class CellSolverError(RuntimeError):
    """Krylov solver did not reach the tolerance; carries the residual history."""

    def __init__(self, msg, history=()):
        super().__init__(msg)
        self.history = list(history)


def _ellipticity(values: np.ndarray) -> tuple[float, float]:
    herm = 0.5 * (values + np.conj(np.swapaxes(values, -1, -2)))
    lam = float(np.min(np.linalg.eigvalsh(herm)))
    Lam = float(np.max(np.linalg.norm(values, ord=2, axis=(-2, -1))))
    return lam, Lam


@dataclass
class CoefficientField:
    """Matrix-valued coefficient on the torus (optionally per x-row).

    Parameters
    ----------
    values : ndarray
        Shape ``(N, n, n)`` or ``(rows, N, n, n)`` with ``N = torus.size``.
    torus : TorusGrid
    require_elliptic : bool
        Reject fields whose Hermitian part is not positive definite.
    """

    values: np.ndarray
    torus: TorusGrid
    require_elliptic: bool = True
    lam: float = field(init=False)
    Lam: float = field(init=False)
    hermitian: bool = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 1:
            v = v[:, None, None]
        if v.ndim not in (3, 4) or v.shape[-1] != v.shape[-2] or v.shape[-3] != self.torus.size:
            raise ValueError(f"coefficient shape {v.shape} does not match torus of size {self.torus.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("coefficient has non-finite entries")
        self.values = v
        self.lam, self.Lam = _ellipticity(v)
        self.hermitian = bool(np.allclose(v, np.conj(np.swapaxes(v, -1, -2)), rtol=0, atol=1e-14 * max(self.Lam, 1)))
        if self.require_elliptic and not self.lam > 0:
            raise ValueError(f"coefficient is not elliptic: min eigenvalue of Hermitian part {self.lam:.3g}")

    @property
    def n(self) -> int:
        return self.values.shape[-1]

    @property
    def x_dependent(self) -> bool:
        return self.values.ndim == 4

    def row(self, r: int) -> "CoefficientField":
        return CoefficientField(self.values[r], self.torus, self.require_elliptic)

    def on_boxes(self, n_box: int) -> np.ndarray:
        """Values broadcast to ``(n_box, N, n, n)``."""
        v = self.values
        if v.ndim == 3:
            return np.broadcast_to(v, (n_box,) + v.shape)
        if v.shape[0] != n_box:
            raise ValueError(f"coefficient has {v.shape[0]} x-rows, grid has {n_box} boxes")
        return v

    @classmethod
    def constant(cls, torus: TorusGrid, matrix, **kw) -> "CoefficientField":
        m = np.atleast_2d(np.asarray(matrix))
        return cls(np.broadcast_to(m, (torus.size,) + m.shape).copy(), torus, **kw)

    @classmethod
    def from_function(cls, torus: TorusGrid, func, n: int | None = None, offset: float = 0.5, **kw):
        """Sample ``func(y)`` at ``(k + offset) h``.

        ``func`` returns a scalar (times identity, size ``n``) or an
        ``n x n`` matrix per node. The default offset places samples at
        cell centres, which makes piecewise-constant layerings exact.
        """
        n = torus.phys_dim if n is None else n
        vals = np.asarray(func(torus.coords(offset)))
        if vals.shape == (torus.size,):
            vals = vals[:, None, None] * np.eye(n)
        return cls(vals, torus, **kw)

    @classmethod
    def from_product(cls, torus: TorusGrid, grid, func, n: int | None = None, offset: float = 0.5, **kw):
        """x-dependent field ``func(x, y)`` with one row per box of ``grid``.

        ``x`` (box centres) broadcasts as ``(n_box, 1, d)`` and ``y`` as
        ``(1, N, D)``; scalar output is multiplied by the identity.
        """
        n = torus.phys_dim if n is None else n
        x = (grid.box_multi_index + 0.5)[:, None, :] * grid.h
        y = torus.coords(offset)[None]
        vals = np.asarray(func(x, y))
        if vals.ndim == 2:
            vals = vals[..., None, None] * np.eye(n)
        vals = np.broadcast_to(vals, (grid.box_size, torus.size, n, n)).copy()
        return cls(vals, torus, **kw)

    @classmethod
    def layered(cls, torus: TorusGrid, alpha, beta, axis: int = 0, n: int | None = None, **kw):
        """``alpha`` on ``y_axis < 1/2`` and ``beta`` elsewhere (scalar times identity)."""
        return cls.from_function(torus, lambda y: np.where(y[:, axis] < 0.5, alpha, beta), n=n, **kw)

    @classmethod
    def checkerboard(cls, torus: TorusGrid, alpha, beta, **kw):
        """Two-phase checkerboard with four cells on the 2-torus."""
        def f(y):
            par = np.floor(2 * y[:, 0]) + np.floor(2 * y[:, 1])
            return np.where(par % 2 == 0, alpha, beta)
        return cls.from_function(torus, f, **kw)


@dataclass
class Corrector:
    """Solution of one cell problem.

    ``potential`` is mean free and ``gradient = grad_y potential`` with
    shape ``(d, N)``.
    """

    direction: int
    potential: np.ndarray
    gradient: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    history: list = field(default_factory=list)


@dataclass
class HomogenizedTensor:
    matrix: np.ndarray
    source: str = "periodic_cell"
    ci_halfwidth: np.ndarray | None = None
    energy: np.ndarray | None = None
    samples: np.ndarray | None = None

    def __post_init__(self):
        if self.ci_halfwidth is None:
            self.ci_halfwidth = np.zeros_like(np.real(self.matrix))


def _apply(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Node-wise ``a v`` for ``a`` of shape ``(N, n, n)`` and ``v`` of shape ``(n, N)``."""
    return np.einsum("kij,jk->ik", a, v)


def _kernel_project(torus: TorusGrid, phi: np.ndarray) -> np.ndarray:
    """Remove the invariant part (the mean in the ergodic case)."""
    if torus.ergodic:
        return phi - phi.mean()
    hat = np.fft.fftn(phi.reshape(torus.shape))
    hat[torus.kernel_modes] = 0
    out = np.fft.ifftn(hat).ravel()
    return out if np.iscomplexobj(phi) else out.real


class _CellOperator:
    def __init__(self, a: CoefficientField):
        self.t = a.torus
        self.a = a.values
        self.G = build_grad_y(self.t)
        self.d = self.t.phys_dim
        if a.n != self.d:
            raise ValueError(f"coefficient is {a.n}x{a.n} but the torus has {self.d} directions")
        N = self.t.size
        self.N = N
        lap = np.sum(np.abs(self.t.symbols) ** 2, axis=0)
        scale = float(np.real(np.mean(np.trace(self.a, axis1=1, axis2=2)))) / self.d
        inv = np.zeros_like(lap)
        mask = ~self.t.kernel_modes
        inv[mask] = 1.0 / (lap[mask] * scale)
        self.inv = inv
        self.dtype = np.result_type(self.a.dtype, float)

    def grad(self, phi):
        return (self.G @ phi).reshape(self.d, self.N)

    def div_t(self, v):
        # G^T v, i.e. -div_y v
        return self.G.T @ v.reshape(-1)

    def matvec(self, phi):
        phi = _kernel_project(self.t, phi)
        return _kernel_project(self.t, self.div_t(_apply(self.a, self.grad(phi))))

    def precond(self, r):
        hat = np.fft.fftn(np.asarray(r).reshape(self.t.shape)) * self.inv
        out = np.fft.ifftn(hat).ravel()
        return out if np.iscomplexobj(r) or np.iscomplexobj(self.a) else out.real

    def linop(self, f):
        return spla.LinearOperator((self.N, self.N), matvec=f, dtype=self.dtype)


def solve_potential(a: CoefficientField, flux: np.ndarray, tol: float = 1e-10, maxiter: int | None = None):
    """Solve ``G^T a G psi = G^T flux`` for a mean-free ``psi``.

    Returns ``(psi, iterations, relative residual, history)``.
    Conjugate gradients is used for Hermitian ``a``; GMRES otherwise.
    """
    op = _CellOperator(a)
    b = _kernel_project(op.t, op.div_t(flux))
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(op.N, dtype=op.dtype), 0, 0.0, []
    maxiter = 50 * op.N if maxiter is None else maxiter
    hist = []

    def cb(xk):
        r = b - op.matvec(xk)
        hist.append(float(np.linalg.norm(r) / bnorm))

    A, M = op.linop(op.matvec), op.linop(op.precond)
    if a.hermitian:
        x, info = spla.cg(A, b, rtol=tol, atol=0.0, M=M, maxiter=maxiter, callback=cb)
    else:
        x, info = spla.gmres(A, b, rtol=tol, atol=0.0, M=M, maxiter=maxiter, restart=50,
                             callback=cb, callback_type="x")
    x = _kernel_project(op.t, x)
    res = float(np.linalg.norm(b - op.matvec(x)) / bnorm)
    if info != 0 or res > 10 * tol:
        raise CellSolverError(f"cell solve stagnated at relative residual {res:.3e} (info={info})", hist)
    return x, len(hist), res, hist


def solve_cell_problem(a: CoefficientField, i: int, tol: float = 1e-10, maxiter: int | None = None) -> Corrector:
    """Zero-mean ``phi_i`` with ``-div_y a (e_i + grad_y phi_i) = 0``.

    Examples
    --------
    >>> t = TorusGrid(1, 8)
    >>> c = solve_cell_problem(CoefficientField.constant(t, [[2.0]]), 0)
    >>> float(abs(c.potential).max())
    0.0
    """
    if a.x_dependent:
        raise ValueError("pass one x-row at a time (CoefficientField.row)")
    e = np.zeros((a.n, a.torus.size), dtype=np.result_type(a.values.dtype, float))
    e[i] = 1.0
    psi, it, res, hist = solve_potential(a, -_apply(a.values, e), tol, maxiter)
    G = build_grad_y(a.torus)
    return Corrector(i, psi, (G @ psi).reshape(a.n, -1), it, res, hist)


def homogenized_tensor(a: CoefficientField, correctors: list[Corrector], check: bool = True) -> HomogenizedTensor:
    """Flux average ``a_hom e_i = mean a (e_i + grad_y phi_i)``.

    For Hermitian ``a`` the energy form is also evaluated and compared.
    """
    n = a.n
    dirs = sorted(c.direction for c in correctors)
    if dirs != list(range(n)):
        raise ValueError(f"need correctors for all directions 0..{n - 1}, got {dirs}")
    by = {c.direction: c for c in correctors}
    fields = []
    for i in range(n):
        e = np.zeros((n, a.torus.size), dtype=np.result_type(a.values.dtype, by[i].gradient.dtype))
        e[i] = 1.0
        fields.append(e + by[i].gradient)
    flux = np.stack([_apply(a.values, f).mean(axis=1) for f in fields], axis=1)
    energy = None
    if a.hermitian:
        energy = np.array([[np.mean(np.sum(np.conj(fields[j]) * _apply(a.values, fields[i]), axis=0))
                            for i in range(n)] for j in range(n)])
        if check:
            gap = np.max(np.abs(energy - flux))
            if gap > 1e-6 * max(1.0, np.max(np.abs(flux))):
                raise CellSolverError(f"flux and energy forms disagree by {gap:.3e}")
        if not np.iscomplexobj(a.values):
            flux, energy = flux.real, energy.real
    return HomogenizedTensor(flux, "periodic_cell", energy=energy)


def homogenize(a: CoefficientField, tol: float = 1e-10):
    """Correctors and tensor in one call; returns ``(tensor, correctors)``."""
    cors = [solve_cell_problem(a, i, tol) for i in range(a.n)]
    return homogenized_tensor(a, cors), cors


def solve_memory_correctors(eta0: CoefficientField | None = None, sigma0: CoefficientField | None = None,
                            mu0: CoefficientField | None = None, tol: float = 1e-10) -> dict:
    """Potentials ``chi^i = grad_y psi_i`` with ``P_pot c (e_i - chi^i) = 0``.

    Returns a dict with keys ``"eta"``, ``"sigma"``, ``"mu"``; each value is
    an array of shape ``(n, n, N)`` (direction, component, node) or None.
    A ``sigma0`` that vanishes identically gives None: it only enters the
    memory formula multiplied by ``eta0^{-1} sigma0 = 0``.
    """
    out = {}
    for key, c in (("eta", eta0), ("sigma", sigma0), ("mu", mu0)):
        if c is None or not np.any(c.values):
            out[key] = None
            continue
        if not c.lam > 0:
            raise ValueError(f"{key} coefficient is not coercive (min Hermitian eigenvalue {c.lam:.3g})")
        G = build_grad_y(c.torus)
        chis = []
        for i in range(c.n):
            e = np.zeros((c.n, c.torus.size), dtype=np.result_type(c.values.dtype, float))
            e[i] = 1.0
            psi, *_ = solve_potential(c, _apply(c.values, e), tol)
            chis.append((G @ psi).reshape(c.n, -1))
        out[key] = np.array(chis)
    return out


@dataclass
class Projection:
    """Orthogonal projection on torus fields, applied via the FFT.

    ``apply`` accepts arrays ``(..., N)`` for scalar kinds and
    ``(..., d, N)`` for vector kinds.
    """

    kind: str
    torus: TorusGrid

    _KINDS = ("P_inv", "P_pot", "P_ker_div", "P_ker_curl")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown projection {self.kind!r}; choose from {self._KINDS}")
        if self.kind == "P_ker_curl" and self.torus.phys_dim not in (2, 3):
            raise ValueError("P_ker_curl needs 2 or 3 physical directions")

    def __call__(self, v):
        return self.apply(v)

    def apply(self, v: np.ndarray) -> np.ndarray:
        t = self.torus
        v = np.asarray(v)
        real = not np.iscomplexobj(v)
        axes = tuple(range(v.ndim - 1, v.ndim - 1 + t.dim))
        hat = np.fft.fftn(v.reshape(v.shape[:-1] + t.shape), axes=axes)
        ker = t.kernel_modes
        if self.kind == "P_inv":
            hat = hat * ker
        else:
            g = t.symbols
            nrm = np.sum(np.abs(g) ** 2, axis=0)
            safe = np.where(ker, 1.0, nrm)
            coef = np.sum(np.conj(g) * hat, axis=-1 - t.dim) / safe
            pot = g * np.expand_dims(coef, -1 - t.dim) * ~ker
            if self.kind == "P_pot":
                hat = pot
            elif self.kind == "P_ker_div":
                hat = hat - pot
            else:
                hat = pot + hat * ker
        out = np.fft.ifftn(hat, axes=axes).reshape(v.shape)
        return out.real if real else out


def build_projection(kind: str, torus: TorusGrid) -> Projection:
    """``P_inv``, ``P_pot``, ``P_ker_div`` or ``P_ker_curl`` on ``torus``.

    ``P_pot`` projects onto the range of the torus gradient by solving the
    cell Laplacian exactly in Fourier space; ``P_ker_div`` is its
    complement and ``P_ker_curl = P_inv + P_pot``.
    """
    return Projection(kind, torus)


@dataclass(frozen=True)
class ProbabilityModel:
    """Random or quasi-periodic coefficient model.

    ``kind="checkerboard"``: i.i.d. two-phase cells on an ``L^dim`` torus,
    each cell resolved by ``nodes_per_cell`` nodes per axis.
    ``kind="quasi_periodic"``: deterministic field ``func`` on a torus with
    frequency matrix ``V``.
    """

    kind: str = "checkerboard"
    L: int = 32
    alpha: float = 1.0
    beta: float = 4.0
    p: float = 0.5
    seed: int = 0
    dim: int = 2
    nodes_per_cell: int = 4
    V: tuple | None = None
    n_y: int = 16
    func: object = None

    @property
    def torus(self) -> TorusGrid:
        if self.kind == "checkerboard":
            return TorusGrid(self.dim, self.L * self.nodes_per_cell)
        V = self.V if self.V is not None else np.eye(self.dim, dtype=int)
        return TorusGrid(len(V), self.n_y, V)


def _cells(model: ProbabilityModel, sample_index: int) -> np.ndarray:
    bitgen = np.random.Philox(key=int(model.seed), counter=[0, 0, 0, int(sample_index)])
    u = np.random.Generator(bitgen).random(model.L**model.dim)
    return np.where(u < model.p, model.alpha, model.beta).reshape((model.L,) * model.dim)


def sample_periodized_field(model: ProbabilityModel, sample_index: int = 0) -> CoefficientField:
    """One realisation on the periodization torus.

    Cell ``c`` of sample ``s`` takes ``alpha`` iff the ``c``-th uniform of the
    Philox stream keyed by ``seed`` with counter ``s`` is below ``p``.
    """
    t = model.torus
    if model.kind == "quasi_periodic":
        if model.func is None:
            raise ValueError("quasi-periodic model needs func")
        return CoefficientField.from_function(t, model.func)
    if model.kind != "checkerboard":
        raise ValueError(f"unknown model kind {model.kind!r}")
    cells = _cells(model, sample_index)
    r = model.nodes_per_cell
    vox = cells
    for ax in range(model.dim):
        vox = np.repeat(vox, r, axis=ax)
    return CoefficientField(vox.ravel()[:, None, None] * np.eye(model.dim), t)


def monte_carlo_ahom(model: ProbabilityModel, n_samples: int, workers: int = 1, tol: float = 1e-10) -> HomogenizedTensor:
    """Sample mean of periodized tensors with Student-t 95% half-widths."""
    if n_samples < 2:
        raise ValueError("need at least two samples")

    def one(s):
        return homogenize(sample_periodized_field(model, s), tol)[0].matrix

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            mats = list(ex.map(one, range(n_samples)))
    else:
        mats = [one(s) for s in range(n_samples)]
    mats = np.array(mats)
    mean = mats.mean(axis=0)
    sd = mats.std(axis=0, ddof=1)
    half = stats.t.ppf(0.975, n_samples - 1) * sd / np.sqrt(n_samples)
    return HomogenizedTensor(mean, "monte_carlo", half, samples=mats)


def save_field(path, a: CoefficientField) -> None:
    """Write ``a`` in the binary field format."""
    t = a.torus
    write_field(path, a.values, {
        "dims": t.dim, "n_y": t.n_y, "components": a.n, "lambda": a.lam, "Lambda": a.Lam,
        "freq": ";".join(",".join(str(v) for v in row) for row in t.freq),
    })


def load_field(path) -> CoefficientField:
    values, head = read_field(path)
    freq = None
    if "freq" in head:
        freq = [[int(v) for v in row.split(",")] for row in head["freq"].split(";")]
    t = TorusGrid(head["dims"], head["n_y"], freq)
    return CoefficientField(values, t)
