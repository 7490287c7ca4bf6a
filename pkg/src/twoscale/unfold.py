"""Exact permutation realisation of the unfolding operators.

For ``eps = 1/m`` and ``n_x`` a multiple of ``m * n_y`` the box index ``j``
is assigned the torus offset ``s(j) = V floor(j m n_y / n_x)``, the torus
cell containing ``{x_j / eps}``. Unfolding reads

    (T_eps u)(x_j, y_k)  = u(x_j, y_{k - s(j)}),
    (T_-eps u)(x_j, y_k) = u(x_j, y_{k + s(j)}),

so both are permutations of every torus row and the structural identities
(unitarity, inverse, commuting with the torus mean, fixing y-constant
functions) hold exactly. The derivative commutation identity holds up to a
one-node torus shift; :func:`check_commutation_identity` measures both the
plain residual and the exact shifted variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import (
    GridSpec,
    Layout,
    TorusGrid,
    build_curl_x,
    build_grad_x,
    cell_layout,
    edge_layout,
    face_layout,
    flux_layout,
    node_layout,
    product_inner,
    product_norm,
)

__all__ = [
    "IncommensurateError",
    "UnfoldConfig",
    "UnfoldOperator",
    "sample_product",
    "box_shift_index",
    "apply_torus_rows",
    "torus_mean",
    "check_unfolding_axioms",
    "check_commutation_identity",
    "commutation_sweep",
    "two_scale_pairing",
]


class IncommensurateError(ValueError):
    """Raised when ``n_x`` is not a multiple of ``m * n_y``."""


@dataclass(frozen=True)
class UnfoldConfig:
    """Scale ``eps = 1/m`` on a box grid with ``n_x`` cells per axis."""

    n_x: int
    m: int

    @property
    def epsilon(self) -> float:
        return 1.0 / self.m

    def grid(self, dim: int) -> GridSpec:
        return GridSpec(dim, self.n_x)

    def operator(self, torus: TorusGrid) -> "UnfoldOperator":
        return UnfoldOperator(self.grid(torus.phys_dim), torus, self.m)

    def check(self, n_y: int) -> str | None:
        """Commensurability diagnostic, or None when ``m n_y`` divides ``n_x``."""
        if self.n_x % (self.m * n_y):
            return (f"eps = 1/{self.m}: n_x = {self.n_x} is not divisible by "
                    f"m*n_y = {self.m}*{n_y} = {self.m * n_y}")
        return None


def box_shift_index(op: "UnfoldOperator") -> np.ndarray:
    """Flat torus index of ``k + s(j)`` for every box ``j`` and node ``k``, shape ``(n_box, N)``."""
    t = op.torus
    j = op.grid.box_multi_index
    s = np.mod(((j * op.m * t.n_y) // op.grid.n_x) @ t.V.T, t.n_y)
    return t.flat(t.multi_index[None, :, :] + s[:, None, :])


def sample_product(layout: Layout, torus: TorusGrid, func, y_offset: float = 0.0) -> np.ndarray:
    """Sample ``func(x, y, c)`` on ``layout x torus``.

    ``x`` broadcasts as ``(size, 1, d)``, ``y`` as ``(1, N, D)`` and ``c`` as
    ``(size, 1)``. Returns an array of shape ``(layout.size, torus.size)``.
    """
    x = layout.positions[:, None, :]
    y = torus.coords(y_offset)[None, :, :]
    c = layout.comp[:, None]
    out = np.asarray(func(x, y, c))
    return np.broadcast_to(out, (layout.size, torus.size)).copy()


def torus_mean(u: np.ndarray) -> np.ndarray:
    """Row means over the torus, summed in sorted order.

    Sorting first makes the result independent of how each row is
    permuted, so it commutes bitwise with unfolding.
    """
    u = np.asarray(u)
    if np.iscomplexobj(u):
        return torus_mean(u.real) + 1j * torus_mean(u.imag)
    # contiguous copy: the reduction order of sum depends on memory layout
    return np.ascontiguousarray(np.sort(u, axis=-1)).sum(axis=-1) / u.shape[-1]


def apply_torus_rows(u: np.ndarray, layout: Layout, op) -> np.ndarray:
    """Apply a torus operator that mixes components at a shared box index.

    ``op`` maps an array ``(n_comp_in, n_box, N)`` to ``(n_comp_out, n_box, N)``.
    """
    return op(layout.to_box(u))


class UnfoldOperator:
    """Unfolding ``T_eps`` for ``eps = 1/m`` on a commensurate grid pair.

    Parameters
    ----------
    grid : GridSpec
    torus : TorusGrid
        Its frequency matrix must have ``grid.dim`` columns.
    m : int
        Inverse scale, ``eps = 1/m``.
    """

    def __init__(self, grid: GridSpec, torus: TorusGrid, m: int):
        if m < 1 or int(m) != m:
            raise ValueError(f"m must be a positive integer, got {m}")
        if torus.phys_dim != grid.dim:
            raise ValueError(
                f"frequency matrix has {torus.phys_dim} columns but the grid has dim {grid.dim}"
            )
        if grid.n_x % (m * torus.n_y):
            raise IncommensurateError(
                f"n_x = {grid.n_x} is not divisible by m*n_y = {m}*{torus.n_y} = {m * torus.n_y}; "
                f"need n_x = 0 mod (m*n_y)"
            )
        self.grid = grid
        self.torus = torus
        self.m = int(m)
        self._cache: dict = {}

    @property
    def epsilon(self) -> float:
        return 1.0 / self.m

    @property
    def cells_per_node(self) -> int:
        """Number of x-cells per torus node along an axis (``k`` in ``n_x = k m n_y``)."""
        return self.grid.n_x // (self.m * self.torus.n_y)

    def shift_table(self, layout: Layout) -> np.ndarray:
        """Torus offsets ``s(j)`` for the live entries, shape ``(size, D)``."""
        j = layout.multi_index
        t = (j * self.m * self.torus.n_y) // self.grid.n_x
        return np.mod(t @ self.torus.V.T, self.torus.n_y)

    def _groups(self, layout: Layout):
        key = id(layout)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is layout:
            return hit[1]
        s = self.torus.flat(self.shift_table(layout))
        uniq, inv = np.unique(s, return_inverse=True)
        groups = []
        for g, flat in enumerate(uniq):
            rows = np.flatnonzero(inv == g)
            step = self.torus.multi_index[flat]
            groups.append((rows, self.torus.shifted(-step), self.torus.shifted(step)))
        self._cache[key] = (layout, groups)
        return groups

    def apply(self, u: np.ndarray, layout: Layout, inverse: bool = False) -> np.ndarray:
        """Return ``T_eps u`` (or ``T_-eps u`` when ``inverse``).

        ``u`` has shape ``(layout.size, N)`` or ``(..., layout.size, N)``.
        """
        u = np.asarray(u)
        out = np.empty_like(u)
        for rows, fwd, back in self._groups(layout):
            perm = back if inverse else fwd
            out[..., rows, :] = u[..., rows, :][..., perm]
        return out

    def unfold(self, u, layout):
        return self.apply(u, layout, inverse=False)

    def fold(self, u, layout):
        return self.apply(u, layout, inverse=True)

    def oscillating(self, coeff: np.ndarray, layout: Layout) -> np.ndarray:
        """Coefficient seen by the eps-problem: ``a(x_j, y_k + s(j))``.

        ``coeff`` has shape ``(N, ...)`` (torus only) or ``(size, N, ...)``.
        The result has shape ``(size, N, ...)``.
        """
        coeff = np.asarray(coeff)
        if coeff.shape[0] != layout.size or coeff.ndim < 2 or coeff.shape[1] != self.torus.size:
            coeff = np.broadcast_to(coeff, (layout.size,) + coeff.shape)
        out = np.empty(coeff.shape, dtype=coeff.dtype)
        for rows, fwd, back in self._groups(layout):
            out[rows] = coeff[rows][:, back]
        return out


def check_unfolding_axioms(op: UnfoldOperator, u: np.ndarray, layout: Layout) -> dict:
    """Evaluate the four structural identities on ``u``.

    Returns a dict of residuals; all of them are exactly zero for a
    permutation realisation.
    """
    g, t = op.grid, op.torus
    Tu = op.apply(u, layout)
    back = op.apply(Tu, layout, inverse=True)
    n0 = product_norm(u, g, t) ** 2
    n1 = product_norm(Tu, g, t) ** 2
    mean_u = torus_mean(u)[:, None] * np.ones((1, t.size))
    P_Tu = torus_mean(Tu)[:, None] * np.ones((1, t.size))
    T_Pu = op.apply(mean_u, layout)
    return {
        "unitarity": abs(n1 - n0) / max(n0, 1e-300),
        "inverse": float(np.max(np.abs(back - u))) if u.size else 0.0,
        "inverse_bitwise": bool(np.array_equal(back, u)),
        "projection_commutation": float(np.max(np.abs(P_Tu - T_Pu))) if u.size else 0.0,
        "fixed_point": float(np.max(np.abs(op.apply(mean_u, layout) - mean_u))) if u.size else 0.0,
    }


def _lift_torus_grad(phi: np.ndarray, lin: Layout, lout: Layout, torus: TorusGrid) -> np.ndarray:
    """``(C_s phi)(a, j) = D^a_y phi(j)`` on ``lout``; dead input entries read as 0."""
    box = lin.to_box(phi)[0]
    out = np.zeros((lout.n_comp,) + box.shape, dtype=box.dtype)
    for a in range(lout.n_comp):
        step = torus.shifted(torus.V[:, a])
        out[a] = (box[:, step] - box) / torus.h
    return lout.from_box(out)


def _torus_curl_rows(phi: np.ndarray, lin: Layout, lout: Layout, torus: TorusGrid) -> np.ndarray:
    box = lin.to_box(phi)
    d = torus.phys_dim

    def D(a, v):
        return (v[:, torus.shifted(torus.V[:, a])] - v) / torus.h

    if d == 2:
        out = (D(0, box[1]) - D(1, box[0]))[None]
    else:
        out = np.stack([D((a + 1) % 3, box[(a + 2) % 3]) - D((a + 2) % 3, box[(a + 1) % 3])
                        for a in range(3)])
    return lout.from_box(out)


def _torus_shift_rows(v: np.ndarray, layout: Layout, torus: TorusGrid) -> np.ndarray:
    """Shift component ``a`` by ``+V e_a`` on the torus."""
    out = np.empty_like(v)
    for a in range(layout.n_comp):
        rows = layout.comp == a
        out[rows] = v[rows][:, torus.shifted(torus.V[:, a])]
    return out


def check_commutation_identity(op: UnfoldOperator, phi, curl_phi=None) -> dict:
    """Residuals of ``eps C_d T_-eps phi = eps T_-eps C_d phi + C_s T_-eps phi``.

    Parameters
    ----------
    op : UnfoldOperator
    phi : callable or ndarray
        Scalar product field on interior nodes, or ``func(x, y, c)``.
    curl_phi : callable or ndarray, optional
        Edge field for the curl version (dim 2 or 3).

    Returns
    -------
    dict
        ``grad`` is the plain residual norm, ``grad_shifted`` the residual of
        the exact variant in which ``T_-eps C_d phi`` is read one torus node
        further along each direction, ``h`` the grid spacing; likewise for
        ``curl`` when requested.
    """
    g, t, eps = op.grid, op.torus, op.epsilon
    ln, lf = node_layout(g), flux_layout(g)
    if callable(phi):
        phi = sample_product(ln, t, phi)
    G = build_grad_x(g)
    Tphi = op.fold(phi, ln)
    lhs = eps * (G @ Tphi)
    Gphi = G @ phi
    cs = _lift_torus_grad(Tphi, ln, lf, t)
    plain = lhs - eps * op.fold(Gphi, lf) - cs
    exact = lhs - eps * op.fold(_torus_shift_rows(Gphi, lf, t), lf) - cs
    rep = {
        "h": g.h,
        "grad": product_norm(plain, g, t),
        "grad_shifted": product_norm(exact, g, t),
    }
    if curl_phi is not None and g.dim >= 2:
        le = edge_layout(g)
        C = build_curl_x(g)
        lo = _curl_out_layout(g)
        if callable(curl_phi):
            curl_phi = sample_product(le, t, curl_phi)
        Tc = op.fold(curl_phi, le)
        lhs = eps * (C @ Tc)
        rhs = eps * op.fold(C @ curl_phi, lo) + _torus_curl_rows(Tc, le, lo, t)
        rep["curl"] = product_norm(lhs - rhs, g, t)
    return rep


def _curl_out_layout(grid: GridSpec) -> Layout:
    return cell_layout(grid) if grid.dim == 2 else face_layout(grid)


def commutation_sweep(m: int, n_y_list, dim: int = 1, phi=None) -> list[dict]:
    """Commutation residual along the diagonal refinement ``n_x = m n_y``.

    The default test function is ``sin(2 pi x_1) cos(2 pi y_1)`` times
    ``sin(2 pi x_b)`` in the remaining directions.
    """
    if phi is None:
        def phi(x, y, c):
            out = np.sin(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * y[..., 0])
            for b in range(1, x.shape[-1]):
                out = out * np.sin(2 * np.pi * x[..., b])
            return out
    rows = []
    for n_y in n_y_list:
        g = GridSpec(dim, m * n_y)
        t = TorusGrid(dim, n_y)
        rows.append(check_commutation_identity(UnfoldOperator(g, t, m), phi))
    return rows


def two_scale_pairing(op: UnfoldOperator, u_eps: np.ndarray, layout: Layout,
                      test_x: np.ndarray, test_y: np.ndarray) -> complex:
    """Discrete pairing ``<T_eps u_eps, test_x (x) test_y>``."""
    test_x = np.asarray(test_x)
    test_y = np.asarray(test_y)
    if test_x.shape != (layout.size,) or test_y.shape != (op.torus.size,):
        raise ValueError("test functions do not match the grids")
    Tu = op.unfold(u_eps, layout)
    return product_inner(Tu, np.outer(test_x, test_y), op.grid, op.torus)
