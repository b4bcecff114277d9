"""Discrete differential geometry of surfaces sampled on a rectangular parameter grid.

Arrays follow one layout throughout the package: a scalar field is ``(nu, nv)``,
a vector field along ``f`` is ``(nu, nv, 3)``, a tangent (chart) vector field is
``(nu, nv, 2)`` and a two-tensor is ``(nu, nv, 2, 2)``. Axis 0 is ``u``, axis 1 is ``v``.

The Laplace-Beltrami operator is assembled from a quadratic form that evaluates
one-sided gradients at each of the four corners of every grid cell. On a flat
chart it reduces to the usual five-point stencil; on a curved one it stays
exactly symmetric in the lumped-mass inner product and positive semidefinite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

DIRICHLET = "dirichlet_zero"
PERIODIC = "periodic"
BOUNDARIES = (DIRICHLET, PERIODIC)


class DegenerateImmersionError(ValueError):
    """The induced metric is (numerically) singular somewhere on the grid."""

    def __init__(self, message, nodes=None, t=None):
        super().__init__(message)
        self.nodes = nodes
        self.t = t


@dataclass(frozen=True)
class ParamGrid:
    """Tensor grid on a rectangle of the (u, v) chart.

    Dirichlet grids include both end points of each axis. Periodic grids
    identify the two ends, so the last node sits one spacing before the
    upper extent.
    """

    nu: int
    nv: int
    boundary: str = DIRICHLET
    u_range: tuple[float, float] = (0.0, np.pi)
    v_range: tuple[float, float] = (0.0, np.pi)

    def __post_init__(self):
        if self.nu < 3 or self.nv < 3:
            raise ValueError(f"grid needs at least 3 nodes per axis, got {self.nu}x{self.nv}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary policy {self.boundary!r}")
        if not (self.u_range[1] > self.u_range[0] and self.v_range[1] > self.v_range[0]):
            raise ValueError("grid extents must be increasing")

    @classmethod
    def periodic(cls, nu, nv, u_range=(0.0, 2 * np.pi), v_range=(0.0, 2 * np.pi)):
        return cls(nu, nv, PERIODIC, tuple(u_range), tuple(v_range))

    @property
    def is_periodic(self) -> bool:
        return self.boundary == PERIODIC

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nu, self.nv)

    @property
    def size(self) -> int:
        return self.nu * self.nv

    @property
    def hu(self) -> float:
        span = self.u_range[1] - self.u_range[0]
        return span / self.nu if self.is_periodic else span / (self.nu - 1)

    @property
    def hv(self) -> float:
        span = self.v_range[1] - self.v_range[0]
        return span / self.nv if self.is_periodic else span / (self.nv - 1)

    @property
    def u(self) -> np.ndarray:
        return self.u_range[0] + self.hu * np.arange(self.nu)

    @property
    def v(self) -> np.ndarray:
        return self.v_range[0] + self.hv * np.arange(self.nv)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.u, self.v, indexing="ij")

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights: trapezoidal (Dirichlet) or rectangle rule (periodic)."""
        wu = np.full(self.nu, self.hu)
        wv = np.full(self.nv, self.hv)
        if not self.is_periodic:
            wu[[0, -1]] *= 0.5
            wv[[0, -1]] *= 0.5
        return np.outer(wu, wv)

    @cached_property
    def interior(self) -> np.ndarray:
        """Mask of nodes carrying free velocity/momentum values."""
        mask = np.ones(self.shape, dtype=bool)
        if not self.is_periodic:
            mask[[0, -1], :] = False
            mask[:, [0, -1]] = False
        return mask

    @cached_property
    def corner_gradient(self) -> tuple[sp.csr_matrix, sp.csr_matrix, np.ndarray]:
        """One-sided gradients at the four corners of every cell.

        Returns ``(Du, Dv, corner_node)``: sparse maps from nodal values to the
        u- and v-differences at each (cell, corner) pair, and the flat index of
        the node sitting at that corner. Each pair carries weight ``hu*hv/4``.
        """
        nu, nv = self.shape
        if self.is_periodic:
            ci, cj = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
        else:
            ci, cj = np.meshgrid(np.arange(nu - 1), np.arange(nv - 1), indexing="ij")
        ci, cj = ci.ravel(), cj.ravel()

        def idx(i, j):
            return (i % nu) * nv + (j % nv)

        rows_u, cols_u, vals_u = [], [], []
        rows_v, cols_v, vals_v = [], [], []
        corner_node = []
        ncell = ci.size
        for q, (a, b) in enumerate(((0, 0), (1, 0), (0, 1), (1, 1))):
            r = q * ncell + np.arange(ncell)
            corner_node.append(idx(ci + a, cj + b))
            rows_u += [r, r]
            cols_u += [idx(ci + 1, cj + b), idx(ci, cj + b)]
            vals_u += [np.full(ncell, 1 / self.hu), np.full(ncell, -1 / self.hu)]
            rows_v += [r, r]
            cols_v += [idx(ci + a, cj + 1), idx(ci + a, cj)]
            vals_v += [np.full(ncell, 1 / self.hv), np.full(ncell, -1 / self.hv)]
        n_rows = 4 * ncell
        Du = sp.csr_matrix(
            (np.concatenate(vals_u), (np.concatenate(rows_u), np.concatenate(cols_u))),
            shape=(n_rows, self.size),
        )
        Dv = sp.csr_matrix(
            (np.concatenate(vals_v), (np.concatenate(rows_v), np.concatenate(cols_v))),
            shape=(n_rows, self.size),
        )
        return Du, Dv, np.concatenate(corner_node)


# -- finite differences -------------------------------------------------------


_GHOST = {
    5: (5.0, -10.0, 10.0, -5.0, 1.0),
    4: (4.0, -6.0, 4.0, -1.0),
    3: (3.0, -3.0, 1.0),
}


def _pad_ghost(F: np.ndarray) -> np.ndarray:
    """Extend axis 0 by one polynomially extrapolated ghost node at each end.

    Quartic extrapolation keeps derivative errors smooth to O(h^4) at the edge,
    so fields differentiated twice (Laplacians of normals) stay O(h^2) there.
    """
    c = _GHOST[min(F.shape[0], 5)]
    lo = sum(ci * F[i] for i, ci in enumerate(c))
    hi = sum(ci * F[-1 - i] for i, ci in enumerate(c))
    return np.concatenate([lo[None], F, hi[None]], axis=0)


def d1(F: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    """Second-order first derivative along a grid axis (0 or 1).

    Non-periodic edges use central differences against extrapolated ghost
    nodes, which keeps the truncation error smooth up to the boundary.
    """
    if periodic:
        return (np.roll(F, -1, axis=axis) - np.roll(F, 1, axis=axis)) / (2 * h)
    G = _pad_ghost(np.moveaxis(F, axis, 0))
    return np.moveaxis((G[2:] - G[:-2]) / (2 * h), 0, axis)


def d2(F: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    """Second-order second derivative along a grid axis (compact stencil)."""
    if periodic:
        return (np.roll(F, -1, axis=axis) - 2 * F + np.roll(F, 1, axis=axis)) / h**2
    G = _pad_ghost(np.moveaxis(F, axis, 0))
    return np.moveaxis((G[2:] - 2 * G[1:-1] + G[:-2]) / h**2, 0, axis)


def gradient(grid: ParamGrid, F: np.ndarray) -> np.ndarray:
    """Chart gradient of a nodal field; a new axis of length 2 is inserted after the grid axes."""
    per = grid.is_periodic
    return np.stack([d1(F, 0, grid.hu, per), d1(F, 1, grid.hv, per)], axis=2)


# -- immersion and derived geometry ------------------------------------------


@dataclass(frozen=True)
class Immersion:
    grid: ParamGrid
    f: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        if f.shape != (*self.grid.shape, 3):
            raise ValueError(f"immersion array has shape {f.shape}, expected {(*self.grid.shape, 3)}")
        object.__setattr__(self, "f", f)


def _inv2(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    inv = np.empty_like(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv[..., 0, 0] = m[..., 1, 1] / det
        inv[..., 1, 1] = m[..., 0, 0] / det
        inv[..., 0, 1] = -m[..., 0, 1] / det
        inv[..., 1, 0] = -m[..., 1, 0] / det
    return inv, det


def pullback_metric(imm: Immersion) -> np.ndarray:
    """Induced metric ``g_ij = <d_i f, d_j f>`` at every node, shape ``(nu, nv, 2, 2)``."""
    grid = imm.grid
    T = gradient(grid, imm.f)  # (nu, nv, 2, 3)
    g = np.einsum("...ic,...jc->...ij", T, T)
    _check_nondegenerate(np.linalg.det(g))
    return g


def _check_nondegenerate(det: np.ndarray, rel: float = 1e-12) -> None:
    if not np.all(np.isfinite(det)):
        raise DegenerateImmersionError("non-finite metric determinant")
    scale = np.median(np.abs(det))
    bad = det <= rel * scale if scale > 0 else np.ones_like(det, dtype=bool)
    if np.any(bad):
        nodes = np.argwhere(bad)
        raise DegenerateImmersionError(
            f"induced metric degenerate at {len(nodes)} node(s), first at {tuple(nodes[0])}", nodes=nodes
        )


@dataclass(frozen=True, eq=False)
class GeometryCache:
    """All derived geometry of one immersion. Immutable once built."""

    grid: ParamGrid
    f: np.ndarray
    tangents: np.ndarray  # (nu, nv, 2, 3): d_u f, d_v f
    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det: np.ndarray
    christoffel: np.ndarray  # (nu, nv, 2, 2, 2): [k, i, j] -> Gamma^k_ij
    S: np.ndarray  # (nu, nv, 2, 2, 3)
    nu_normal: np.ndarray  # (nu, nv, 3)
    s: np.ndarray  # (nu, nv, 2, 2)
    L: np.ndarray  # (nu, nv, 2, 2), L^i_j
    trL: np.ndarray
    _operators: dict = field(default_factory=dict, repr=False)

    @property
    def mass(self) -> np.ndarray:
        """Lumped mass: quadrature weight times volume density, per node."""
        return self._mass

    @cached_property
    def _mass(self) -> np.ndarray:
        return self.grid.weights * self.sqrt_det

    @cached_property
    def volume(self) -> float:
        return float(self.mass.sum())

    @cached_property
    def fingerprint(self) -> int:
        return hash(self.f.tobytes())

    @cached_property
    def _corner_tensor(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``w/4 * sqrt(det g) * g^{-1}`` evaluated at each cell corner."""
        Du, Dv, cn = self.grid.corner_gradient
        K = (self.sqrt_det[..., None, None] * self.g_inv).reshape(-1, 2, 2)[cn]
        wq = 0.25 * self.grid.hu * self.grid.hv
        return wq * K[:, 0, 0], wq * K[:, 0, 1], wq * K[:, 1, 1]

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Symmetric positive semidefinite matrix of the Dirichlet form ``int |grad phi|^2 vol``."""
        Du, Dv, _ = self.grid.corner_gradient
        k11, k12, k22 = self._corner_tensor
        St = (
            Du.T @ sp.diags(k11) @ Du
            + Du.T @ sp.diags(k12) @ Dv
            + Dv.T @ sp.diags(k12) @ Du
            + Dv.T @ sp.diags(k22) @ Dv
        )
        St = St.tocsr()
        return ((St + St.T) * 0.5).tocsr()

    def codifferential(self, omega: np.ndarray) -> np.ndarray:
        """Discrete ``nabla^* omega = -Tr^g(nabla omega)`` of a nodal one-form ``(nu, nv, 2)``.

        Realized as the exact adjoint of the corner gradient in the weighted
        products, so that ``codifferential(grad phi)`` pairs with ``psi`` the same
        way ``phi`` pairs with the Laplacian of ``psi``.
        """
        Du, Dv, cn = self.grid.corner_gradient
        k11, k12, k22 = self._corner_tensor
        wu = omega[..., 0].ravel()[cn]
        wv = omega[..., 1].ravel()[cn]
        out = Du.T @ (k11 * wu + k12 * wv) + Dv.T @ (k12 * wu + k22 * wv)
        return out.reshape(self.grid.shape) / self.mass


def build_geometry(f, grid: ParamGrid | None = None) -> GeometryCache:
    """Compute the metric, Christoffel symbols, second fundamental form and normal of ``f``.

    ``f`` may be an :class:`Immersion` or a raw ``(nu, nv, 3)`` array together with ``grid``.
    The normal is ``d_u f x d_v f`` normalized; with this orientation the outward
    normal of a sphere chart ``(theta, phi)`` gives ``Tr L = -2/r``.
    """
    if isinstance(f, Immersion):
        grid, F = f.grid, f.f
    else:
        F = Immersion(grid, f).f
    per = grid.is_periodic
    hu, hv = grid.hu, grid.hv

    fu, fv = d1(F, 0, hu, per), d1(F, 1, hv, per)
    fuu, fvv = d2(F, 0, hu, per), d2(F, 1, hv, per)
    fuv = 0.5 * (d1(fu, 1, hv, per) + d1(fv, 0, hu, per))

    T = np.stack([fu, fv], axis=2)
    g = np.einsum("...ic,...jc->...ij", T, T)
    g_inv, det = _inv2(g)
    _check_nondegenerate(det)
    sqrt_det = np.sqrt(det)

    H = np.empty((*grid.shape, 2, 2, 3))
    H[..., 0, 0, :], H[..., 1, 1, :] = fuu, fvv
    H[..., 0, 1, :] = H[..., 1, 0, :] = fuv
    # flat ambient: Gamma_{l,ij} = <d_ij f, d_l f>
    gamma_low = np.einsum("...ijc,...lc->...lij", H, T)
    christoffel = np.einsum("...kl,...lij->...kij", g_inv, gamma_low)
    S = H - np.einsum("...kij,...kc->...ijc", christoffel, T)

    N = np.cross(fu, fv)
    nu_normal = N / np.linalg.norm(N, axis=-1, keepdims=True)
    s = np.einsum("...ijc,...c->...ij", S, nu_normal)
    L = np.einsum("...ik,...kj->...ij", g_inv, s)
    trL = L[..., 0, 0] + L[..., 1, 1]

    return GeometryCache(
        grid=grid, f=F, tangents=T, g=g, g_inv=g_inv, sqrt_det=sqrt_det,
        christoffel=christoffel, S=S, nu_normal=nu_normal, s=s, L=L, trL=trL,
    )


def christoffel_koszul(cache: GeometryCache) -> np.ndarray:
    """Christoffel symbols from finite differences of ``g`` via the Koszul formula.

    Independent of the route used in :func:`build_geometry`; both agree to O(h^2).
    """
    grid = cache.grid
    dg = gradient(grid, cache.g)  # (nu, nv, 2[a], 2, 2) after moveaxis below
    dg = np.moveaxis(dg, 2, -1)  # (..., i, j, a) = d_a g_ij
    low = 0.5 * (
        np.einsum("...jli->...lij", dg) + np.einsum("...ilj->...lij", dg) - np.einsum("...ijl->...lij", dg)
    )
    return np.einsum("...kl,...lij->...kij", cache.g_inv, low)


def laplace_beltrami(cache: GeometryCache, h: np.ndarray) -> np.ndarray:
    """Bochner Laplacian of a scalar or ambient vector field, componentwise.

    Positive sign convention: ``Delta phi = -(1/sqrt det g) d_i(sqrt det g g^ij d_j phi)``.
    Every node uses its full (natural-boundary) stencil, so constants map to zero
    and the operator is symmetric for arbitrary fields.
    """
    h = np.asarray(h, dtype=float)
    flat = h.reshape(cache.grid.size, -1)
    out = (cache.stiffness @ flat) / cache.mass.reshape(-1, 1)
    return out.reshape(h.shape)


def split_tangent_normal(cache: GeometryCache, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decompose ``h = Tf.h_top + h_perp`` with ``h_perp`` orthogonal to the tangent plane."""
    proj = np.einsum("...kc,...c->...k", cache.tangents, h)
    h_top = np.einsum("...ij,...j->...i", cache.g_inv, proj)
    h_perp = h - tangent_push(cache, h_top)
    return h_top, h_perp


def tangent_push(cache: GeometryCache, X: np.ndarray) -> np.ndarray:
    """``Tf.X``: push a chart vector field forward to an ambient field."""
    return np.einsum("...k,...kc->...c", X, cache.tangents)


def h0_inner(cache: GeometryCache, h: np.ndarray, k: np.ndarray) -> float:
    """``int <h, k> vol(g)`` with the grid quadrature."""
    h, k = np.asarray(h), np.asarray(k)
    pointwise = np.einsum("...c,...c->...", h, k) if h.ndim == 3 else h * k
    return float(np.sum(pointwise * cache.mass))
