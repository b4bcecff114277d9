"""The elliptic operator ``P = 1 + A Delta^p`` on vector fields along an immersion.

Everything is assembled in the lumped-mass basis: with ``W`` the diagonal mass
and ``K`` the stiffness matrix (``W Delta = K``), the matrix ``W P`` is

    W + A K (W^-1 K)^(p-1)

restricted to the free nodes, which is symmetric positive definite by
construction. On Dirichlet grids velocities vanish on the boundary; ``P`` acts
as the identity there and ``Delta`` is masked to interior nodes between powers.
``free_boundary=True`` switches to the natural-boundary Laplacian on every
node, for paths that move the boundary (scalings, translations).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import GeometryCache, split_tangent_normal, tangent_push

log = logging.getLogger(__name__)

DIRECT_SOLVE_MAX_NODES = 250_000


class LinearSolveError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class OperatorParams:
    A: float = 1.0
    p: int = 1

    def __post_init__(self):
        if not self.A >= 0:
            raise ValueError(f"A must be non-negative, got {self.A}")
        if int(self.p) != self.p or self.p < 1:
            raise ValueError(f"p must be an integer >= 1, got {self.p}")


class SobolevOperator:
    """``P`` assembled at one immersion; cached on its :class:`GeometryCache`.

    Use :func:`assemble` rather than constructing directly.
    """

    def __init__(self, cache: GeometryCache, params: OperatorParams, free_boundary=False, tol=1e-10):
        self.cache = cache
        self.params = params
        self.tol = tol
        self.fingerprint = cache.fingerprint
        grid = cache.grid
        if grid.is_periodic or free_boundary:
            self.free = np.ones(grid.shape, dtype=bool)
        else:
            self.free = grid.interior.copy()
        self._idx = np.flatnonzero(self.free.ravel())
        self.n_free = self._idx.size

        K = cache.stiffness[self._idx][:, self._idx].tocsr()
        w = cache.mass.ravel()[self._idx]
        self._K = K
        self._w = w
        WP = sp.diags(w)
        if params.A > 0:
            term = K
            for _ in range(params.p - 1):
                term = K @ sp.diags(1.0 / w) @ term
            WP = WP + params.A * term
        WP = WP.tocsc()
        self.matrix = ((WP + WP.T) * 0.5).tocsc()
        self._factor = None
        self._top_factor = None

    # -- scalar-component operator on free nodes

    def _lap_free(self, x: np.ndarray) -> np.ndarray:
        return (self._K @ x) / self._w[:, None]

    def _apply_free(self, x: np.ndarray) -> np.ndarray:
        y = x
        for _ in range(self.params.p):
            y = self._lap_free(y)
        return x + self.params.A * y

    def _split(self, h: np.ndarray) -> np.ndarray:
        flat = h.reshape(self.cache.grid.size, -1)
        return flat[self._idx]

    def _merge(self, h: np.ndarray, x: np.ndarray) -> np.ndarray:
        out = np.array(h, dtype=float, copy=True).reshape(self.cache.grid.size, -1)
        out[self._idx] = x
        return out.reshape(h.shape)

    def laplacian_power(self, h: np.ndarray, k: int) -> np.ndarray:
        """``Delta^k h`` with the same boundary treatment as ``P`` (zero on fixed nodes)."""
        h = np.asarray(h, dtype=float)
        x = self._split(h)
        for _ in range(k):
            x = self._lap_free(x)
        out = np.zeros_like(h).reshape(self.cache.grid.size, -1)
        out[self._idx] = x
        return out.reshape(h.shape)

    def apply(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        return self._merge(h, self._apply_free(self._split(h)))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        b = self._split(rhs) * self._w[:, None]
        if self.n_free <= DIRECT_SOLVE_MAX_NODES:
            if self._factor is None:
                self._factor = spla.splu(self.matrix)
            x = self._factor.solve(b)
        else:
            x = np.column_stack([self._cg(self.matrix, b[:, c]) for c in range(b.shape[1])])
        self._check_residual(self._apply_free(x), self._split(rhs))
        return self._merge(rhs, x)

    def _cg(self, A, b):
        M = sp.diags(1.0 / A.diagonal())
        x, info = spla.cg(A, b, rtol=self.tol, atol=0.0, maxiter=10 * A.shape[0], M=M)
        if info != 0:
            res = np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300)
            raise LinearSolveError(f"conjugate gradient did not converge (info={info})", residual=res)
        return x

    def _check_residual(self, Px, rhs):
        scale = np.linalg.norm(rhs)
        if scale == 0:
            return
        res = np.linalg.norm(Px - rhs) / scale
        # direct factorizations reach ~cond*eps; only flag real failures
        if not np.isfinite(res) or res > max(1e3 * self.tol, 1e-6):
            raise LinearSolveError(f"P solve residual {res:.3e} exceeds tolerance", residual=res)

    def inner(self, h: np.ndarray, k: np.ndarray) -> float:
        Ph = self.apply(h)
        return float(np.sum(np.einsum("...c,...c->...", Ph, k) * self.cache.mass))

    # -- tangential operator and horizontal projection

    def _tangent_matrix(self) -> sp.csr_matrix:
        """Sparse ``Tf`` from free chart vectors (k-major) to free ambient vectors (c-major)."""
        T = self.cache.tangents.reshape(-1, 2, 3)[self._idx]  # (nf, k, c)
        n = self.n_free
        rows, cols, vals = [], [], []
        ar = np.arange(n)
        for c in range(3):
            for k in range(2):
                rows.append(c * n + ar)
                cols.append(k * n + ar)
                vals.append(T[:, k, c])
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(3 * n, 2 * n)
        )

    @property
    def top_matrix(self) -> sp.csc_matrix:
        """``Tf^T (I_3 x WP) Tf``: the weighted matrix of ``P^T`` on free chart vectors."""
        if not hasattr(self, "_top_matrix"):
            T = self._tangent_matrix()
            M = T.T @ sp.kron(sp.identity(3), self.matrix) @ T
            M = M.tocsc()
            self._top_matrix = ((M + M.T) * 0.5).tocsc()
        return self._top_matrix

    def apply_top(self, X: np.ndarray) -> np.ndarray:
        """``P^T X = (P(Tf.X))^T``."""
        top, _ = split_tangent_normal(self.cache, self.apply(tangent_push(self.cache, X)))
        return top

    def solve_top(self, Y: np.ndarray) -> np.ndarray:
        """Solve ``P^T X = Y`` for chart vector fields; ``X`` vanishes on fixed nodes."""
        ambient = tangent_push(self.cache, Y)
        rhs = self._vec_weighted(ambient)
        return self._solve_top_rhs(rhs)

    def _vec_weighted(self, h: np.ndarray) -> np.ndarray:
        """``Tf^T W h`` on free nodes, with ``h`` an ambient field."""
        x = self._split(h) * self._w[:, None]  # (nf, 3)
        T = self.cache.tangents.reshape(-1, 2, 3)[self._idx]
        return np.einsum("nkc,nc->kn", T, x).ravel()

    def _solve_top_rhs(self, rhs: np.ndarray) -> np.ndarray:
        if self._top_factor is None:
            self._top_factor = spla.splu(self.top_matrix)
        x = self._top_factor.solve(rhs)
        res = np.linalg.norm(self.top_matrix @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
        if not np.isfinite(res) or res > max(1e3 * self.tol, 1e-6):
            raise LinearSolveError(f"P^T solve residual {res:.3e} exceeds tolerance", residual=res)
        X = np.zeros((self.cache.grid.size, 2))
        X[self._idx] = x.reshape(2, -1).T
        return X.reshape(*self.cache.grid.shape, 2)

    def horizontal_projection(self, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Split ``h = Tf.h_ver + h_hor`` with ``(P h_hor)^T = 0`` on free nodes."""
        h = np.asarray(h, dtype=float)
        Ph = self.apply(h)
        h_ver = self._solve_top_rhs(self._vec_weighted(Ph))
        h_hor = h - tangent_push(self.cache, h_ver)
        return h_hor, h_ver


def assemble(cache: GeometryCache, params: OperatorParams, free_boundary=False, tol=1e-10) -> SobolevOperator:
    key = (params, bool(free_boundary), tol)
    op = cache._operators.get(key)
    if op is None:
        op = SobolevOperator(cache, params, free_boundary=free_boundary, tol=tol)
        cache._operators[key] = op
    return op


def apply_P(cache, params, h, **kw):
    return assemble(cache, params, **kw).apply(h)


def solve_P(cache, params, rhs, **kw):
    return assemble(cache, params, **kw).solve(rhs)


def gp_inner(cache, params, h, k, **kw) -> float:
    """``G^P(h, k) = int <P h, k> vol(g)``."""
    return assemble(cache, params, **kw).inner(h, k)


def apply_P_top(cache, params, X, **kw):
    return assemble(cache, params, **kw).apply_top(X)


def horizontal_projection(cache, params, h, **kw):
    return assemble(cache, params, **kw).horizontal_projection(h)
