"""Grids on the unit box and on tori, with forward-difference operators.

Fields on the box ``Q = (0, 1)^d`` are stored on the index set
``{0, ..., n_x - 1}^d``. Each component carries a stagger offset (0 or 1/2
per axis) that fixes its physical position, and a mask of *live* entries.
Operators are sparse matrices acting on the live entries only, so a
Dirichlet gradient is injective and every adjoint is an exact transpose.

Torus fields are flat arrays over the ``n_y^D`` nodes of a ``D``-torus.
Directional differences follow the columns of an integer frequency matrix
``V`` (``D x d``). The periodic cell is the case ``V = I``; other choices
give quasi-periodic shifts ``omega -> omega + V x``.

Product fields (box x torus) are arrays of shape ``(layout.size, n_y^D)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "GridSpec",
    "TorusGrid",
    "Layout",
    "node_layout",
    "edge_layout",
    "flux_layout",
    "cell_layout",
    "face_layout",
    "build_grad_x",
    "build_div_x",
    "build_curl_x",
    "build_grad_y",
    "build_div_y",
    "build_curl_y",
    "project_mean_free",
    "product_inner",
    "product_norm",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on the unit box with ``n_x`` cells per axis."""

    dim: int
    n_x: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n_x < 2:
            raise ValueError(f"n_x must be at least 2, got {self.n_x}")

    @property
    def h(self) -> float:
        return 1.0 / self.n_x

    @property
    def box_shape(self) -> tuple[int, ...]:
        return (self.n_x,) * self.dim

    @property
    def box_size(self) -> int:
        return self.n_x**self.dim

    @cached_property
    def box_multi_index(self) -> np.ndarray:
        """All box indices in C order, shape ``(n_x^d, d)``."""
        grids = np.meshgrid(*[np.arange(self.n_x)] * self.dim, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


class Layout:
    """Live entries of a (possibly staggered) field on the box index set.

    Parameters
    ----------
    grid : GridSpec
    masks : sequence of bool arrays
        One array of shape ``grid.box_shape`` per component.
    stagger : array_like, shape (n_comp, d)
        Offset of each component in units of ``h``.
    name : str
    """

    def __init__(self, grid: GridSpec, masks, stagger, name: str = ""):
        self.grid = grid
        self.masks = tuple(np.asarray(m, dtype=bool) for m in masks)
        self.stagger = np.asarray(stagger, dtype=float).reshape(len(self.masks), grid.dim)
        self.name = name
        comp, box = [], []
        for c, m in enumerate(self.masks):
            idx = np.flatnonzero(m.ravel())
            comp.append(np.full(idx.size, c))
            box.append(idx)
        self.comp = np.concatenate(comp)
        self.box = np.concatenate(box)
        self.size = self.box.size
        # live position of (component, box index), -1 where dead
        self.lookup = np.full((self.n_comp, grid.box_size), -1, dtype=np.int64)
        self.lookup[self.comp, self.box] = np.arange(self.size)

    @property
    def n_comp(self) -> int:
        return len(self.masks)

    @property
    def multi_index(self) -> np.ndarray:
        return self.grid.box_multi_index[self.box]

    @property
    def positions(self) -> np.ndarray:
        """Physical coordinates of the live entries, shape ``(size, d)``."""
        return (self.multi_index + self.stagger[self.comp]) * self.grid.h

    @property
    def fully_live(self) -> bool:
        return all(m.all() for m in self.masks)

    def to_box(self, v: np.ndarray) -> np.ndarray:
        """Scatter live values (leading axis) into ``(n_comp, n_box, ...)`` with zeros."""
        v = np.asarray(v)
        out = np.zeros((self.n_comp, self.grid.box_size) + v.shape[1:], dtype=v.dtype)
        out[self.comp, self.box] = v
        return out

    def from_box(self, arr: np.ndarray) -> np.ndarray:
        """Gather live values from a ``(n_comp, n_box, ...)`` array."""
        return np.asarray(arr)[self.comp, self.box]

    def sample(self, func) -> np.ndarray:
        """Evaluate ``func(x, c)`` at every live entry.

        ``x`` has shape ``(k, d)`` and ``c`` holds component indices.
        """
        return np.asarray(func(self.positions, self.comp), dtype=float).reshape(self.size)

    def __repr__(self):
        return f"Layout({self.name!r}, n_comp={self.n_comp}, size={self.size})"


def _interior(grid: GridSpec, axis: int) -> np.ndarray:
    """Mask of box indices whose coordinate on ``axis`` is not 0."""
    return (grid.box_multi_index[:, axis] >= 1).reshape(grid.box_shape)


def node_layout(grid: GridSpec) -> Layout:
    """Scalar unknowns on interior nodes (Dirichlet data eliminated)."""
    m = np.ones(grid.box_shape, dtype=bool)
    for a in range(grid.dim):
        m &= _interior(grid, a)
    return Layout(grid, [m], np.zeros((1, grid.dim)), "nodes")


def edge_layout(grid: GridSpec) -> Layout:
    """Edge vectors with vanishing tangential trace (component ``a`` along axis ``a``)."""
    masks, stag = [], np.zeros((grid.dim, grid.dim))
    for a in range(grid.dim):
        m = np.ones(grid.box_shape, dtype=bool)
        for b in range(grid.dim):
            if b != a:
                m &= _interior(grid, b)
        masks.append(m)
        stag[a, a] = 0.5
    return Layout(grid, masks, stag, "edges")


def flux_layout(grid: GridSpec) -> Layout:
    """Edge vectors without boundary condition (all box entries live).

    This is the natural space for fluxes ``q`` in ``dom(div)``: entries on
    boundary edges are legitimate unknowns that a Dirichlet gradient never
    reaches.
    """
    stag = 0.5 * np.eye(grid.dim)
    return Layout(grid, [np.ones(grid.box_shape, dtype=bool)] * grid.dim, stag, "flux")


def cell_layout(grid: GridSpec, n_comp: int = 1) -> Layout:
    """Cell-centred unknowns (the scalar magnetic field of the 2D reduction)."""
    stag = np.full((n_comp, grid.dim), 0.5)
    return Layout(grid, [np.ones(grid.box_shape, dtype=bool)] * n_comp, stag, "cells")


def face_layout(grid: GridSpec) -> Layout:
    """Face vectors in 3D, component ``a`` normal to axis ``a``."""
    if grid.dim != 3:
        raise ValueError("face layout requires dim = 3")
    stag = 0.5 * (1.0 - np.eye(3))
    return Layout(grid, [np.ones(grid.box_shape, dtype=bool)] * 3, stag, "faces")


def _difference(lin: Layout, cin: int, lout: Layout, cout: int, axis: int):
    """COO triplets of ``out_c(j) = (in_c(j + e_axis) - in_c(j)) / h``.

    Dead or out-of-range input entries are read as zero.
    """
    grid = lout.grid
    rows = np.flatnonzero(lout.comp == cout)
    j = grid.box_multi_index[lout.box[rows]]
    strides = np.array([grid.n_x ** (grid.dim - 1 - a) for a in range(grid.dim)])
    ri, ci, vi = [], [], []
    for shift, sign in ((1, 1.0), (0, -1.0)):
        jj = j.copy()
        jj[:, axis] += shift
        ok = jj[:, axis] < grid.n_x
        col = np.full(rows.size, -1, dtype=np.int64)
        col[ok] = lin.lookup[cin, jj[ok] @ strides]
        ok &= col >= 0
        ri.append(rows[ok])
        ci.append(col[ok])
        vi.append(np.full(ok.sum(), sign / grid.h))
    return np.concatenate(ri), np.concatenate(ci), np.concatenate(vi)


def _assemble(parts, shape) -> sp.csr_matrix:
    r = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, int)
    c = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, int)
    v = np.concatenate([p[2] for p in parts]) if parts else np.zeros(0)
    return sp.csr_matrix((v, (r, c)), shape=shape)


def build_grad_x(grid: GridSpec, target: str = "flux") -> sp.csr_matrix:
    """Forward-difference gradient on interior nodes with Dirichlet data.

    Parameters
    ----------
    grid : GridSpec
    target : {"flux", "edges"}
        Output layout. ``"flux"`` keeps the boundary edges (zero rows there);
        ``"edges"`` drops them, which is what the discrete curl expects.

    Returns
    -------
    scipy.sparse.csr_matrix
        Shape ``(out.size, nodes.size)``. Its negative transpose is the
        discrete divergence.

    Examples
    --------
    >>> g = GridSpec(1, 4)
    >>> G = build_grad_x(g)
    >>> G @ np.ones(3)
    array([ 4.,  0.,  0., -4.])
    """
    lin = node_layout(grid)
    lout = flux_layout(grid) if target == "flux" else edge_layout(grid)
    parts = [_difference(lin, 0, lout, a, a) for a in range(grid.dim)]
    return _assemble(parts, (lout.size, lin.size))


def build_div_x(grid: GridSpec, target: str = "flux") -> sp.csr_matrix:
    """Divergence ``-grad_x^T`` (no boundary condition on the flux)."""
    return (-build_grad_x(grid, target).T).tocsr()


def build_curl_x(grid: GridSpec) -> sp.csr_matrix:
    """Curl with vanishing tangential trace, from edges to cells or faces.

    In 2D this maps the in-plane edge field to the cell scalar
    ``D_1 E_2 - D_2 E_1``; the transpose is the adjoint curl, which on a
    scalar is the rotated gradient. In 3D it is the Yee edge-to-face curl.
    """
    if grid.dim == 1:
        raise ValueError("curl needs dim 2 or 3")
    lin = edge_layout(grid)
    if grid.dim == 2:
        lout = cell_layout(grid)
        a, b = _difference(lin, 1, lout, 0, 0), _difference(lin, 0, lout, 0, 1)
        parts = [a, (b[0], b[1], -b[2])]
    else:
        lout = face_layout(grid)
        parts = []
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            p = _difference(lin, c, lout, a, b)
            q = _difference(lin, b, lout, a, c)
            parts += [p, (q[0], q[1], -q[2])]
    return _assemble(parts, (lout.size, lin.size))


def _as_freq(freq, dim):
    if freq is None:
        return tuple(tuple(int(i == j) for j in range(dim)) for i in range(dim))
    arr = np.asarray(freq, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[0] != dim:
        raise ValueError(f"frequency matrix must have {dim} rows, got shape {arr.shape}")
    return tuple(tuple(int(v) for v in row) for row in arr)


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the ``dim``-torus with ``n_y`` nodes per axis.

    Parameters
    ----------
    dim : int
        Torus dimension ``D``.
    n_y : int
        Nodes per axis.
    freq : array_like of int, shape (D, d), optional
        Frequency matrix ``V``. Column ``i`` is the index step that one
        physical unit step along ``x_i`` induces. Defaults to the identity.
    """

    dim: int
    n_y: int
    freq: tuple | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("torus dimension must be positive")
        if self.n_y < 2:
            raise ValueError(f"n_y must be at least 2, got {self.n_y}")
        object.__setattr__(self, "freq", _as_freq(self.freq, self.dim))

    @property
    def V(self) -> np.ndarray:
        return np.array(self.freq, dtype=np.int64).reshape(self.dim, -1)

    @property
    def phys_dim(self) -> int:
        return self.V.shape[1]

    @property
    def h(self) -> float:
        return 1.0 / self.n_y

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_y,) * self.dim

    @property
    def size(self) -> int:
        return self.n_y**self.dim

    @cached_property
    def multi_index(self) -> np.ndarray:
        grids = np.meshgrid(*[np.arange(self.n_y)] * self.dim, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def coords(self, offset: float = 0.0) -> np.ndarray:
        """Node coordinates in ``[0, 1)^D``, shape ``(size, D)``."""
        return (self.multi_index + offset) * self.h

    def flat(self, multi: np.ndarray) -> np.ndarray:
        """Flat index of (possibly out-of-range) multi-indices, taken modulo ``n_y``."""
        m = np.mod(multi, self.n_y)
        strides = np.array([self.n_y ** (self.dim - 1 - a) for a in range(self.dim)])
        return m @ strides

    def shifted(self, step) -> np.ndarray:
        """Flat index of ``k + step`` for every node ``k``."""
        return self.flat(self.multi_index + np.asarray(step, dtype=np.int64))

    @cached_property
    def symbols(self) -> np.ndarray:
        """Fourier symbols of the directional differences, shape ``(d, *shape)``.

        With ``phi_hat = fftn(phi)``, the difference along column ``i`` of
        ``V`` acts as multiplication by ``symbols[i]``.
        """
        xi = np.meshgrid(*[np.fft.fftfreq(self.n_y) * self.n_y] * self.dim, indexing="ij")
        out = []
        for i in range(self.phys_dim):
            phase = sum(self.V[a, i] * xi[a] for a in range(self.dim))
            out.append((np.exp(2j * np.pi * phase / self.n_y) - 1.0) / self.h)
        return np.array(out)

    @cached_property
    def kernel_modes(self) -> np.ndarray:
        """Boolean mask of Fourier modes annihilated by every difference."""
        return np.all(np.abs(self.symbols) < 1e-9 / self.h, axis=0)

    @property
    def ergodic(self) -> bool:
        """True iff only constants are invariant under the index shifts."""
        return int(self.kernel_modes.sum()) == 1


def build_grad_y(torus: TorusGrid) -> sp.csr_matrix:
    """Periodic forward-difference gradient, shape ``(d * N, N)``.

    Component ``i`` is ``(phi(k + V e_i) - phi(k)) / h_y``. With ``V = I``
    this is the usual periodic gradient whose kernel is the constants.
    """
    n = torus.size
    blocks = []
    for i in range(torus.phys_dim):
        cols = torus.shifted(torus.V[:, i])
        S = sp.csr_matrix((np.ones(n), (np.arange(n), cols)), shape=(n, n))
        blocks.append((S - sp.identity(n, format="csr")) / torus.h)
    return sp.vstack(blocks, format="csr")


def build_div_y(torus: TorusGrid) -> sp.csr_matrix:
    return (-build_grad_y(torus).T).tocsr()


def build_curl_y(torus: TorusGrid) -> sp.csr_matrix:
    """Torus curl built from the directional differences.

    For ``d = 2`` it maps vectors to the scalar ``D_1 v_2 - D_2 v_1``; for
    ``d = 3`` it maps vectors to vectors. ``curl_y @ grad_y = 0`` exactly
    because the differences commute.
    """
    d = torus.phys_dim
    n = torus.size
    G = build_grad_y(torus)
    D = [G[i * n:(i + 1) * n] for i in range(d)]
    Z = sp.csr_matrix((n, n))
    if d == 2:
        return sp.hstack([-D[1], D[0]], format="csr")
    if d == 3:
        rows = []
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            blk = [Z, Z, Z]
            blk[c] = D[b]
            blk[b] = -D[c]
            rows.append(blk)
        return sp.bmat(rows, format="csr")
    raise ValueError("curl needs 2 or 3 physical directions")


def project_mean_free(f: np.ndarray) -> np.ndarray:
    """Subtract the torus mean (last axis) from every row."""
    f = np.asarray(f)
    return f - f.mean(axis=-1, keepdims=True)


def product_inner(u: np.ndarray, v: np.ndarray, grid: GridSpec, torus: TorusGrid) -> complex:
    """Discrete ``L^2(Q) x L^2(torus)`` inner product, linear in ``u``."""
    w = grid.h**grid.dim / torus.size
    return w * np.vdot(v, u)


def product_norm(u: np.ndarray, grid: GridSpec, torus: TorusGrid | None = None) -> float:
    """Norm with weight ``h^d / n_y^D``; a plain box field if ``torus`` is None."""
    n_y = 1 if torus is None else torus.size
    return float(np.sqrt(grid.h**grid.dim / n_y * np.sum(np.abs(u) ** 2)))
