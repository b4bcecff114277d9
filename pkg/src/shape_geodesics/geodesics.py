"""Time integration of geodesics of ``G^P`` for surfaces in R^3.

Two formulations are supported:

* horizontal (shape-space) geodesics of hypersurfaces, with state ``(f, b)``
  where ``b = a sqrt(det g)`` and ``P f_t = a nu``;
* general geodesics of immersions, with state ``(f, p)`` where ``p`` is the
  vector momentum density ``(P f_t) sqrt(det g)``.

Both are advanced by explicit Runge-Kutta; each stage costs one sparse
factorization of ``P`` at the current immersion.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .geometry import (
    DegenerateImmersionError,
    GeometryCache,
    ParamGrid,
    build_geometry,
    gradient,
    split_tangent_normal,
    tangent_push,
)
from .operator import OperatorParams, assemble

log = logging.getLogger(__name__)

INTEGRATORS = ("rk4", "explicit_euler")


@dataclass(frozen=True)
class SolverConfig:
    params: OperatorParams = field(default_factory=OperatorParams)
    dt: float = 0.05
    t_final: float = 5.0
    integrator: str = "rk4"
    tol_lin: float = 1e-10
    stride: int = 1
    rhs: str = "auto"  # "p1", "general" or "auto" (p1 formula when p == 1)
    cfl_check: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_final >= 0:
            raise ValueError(f"t_final must be non-negative, got {self.t_final}")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.rhs not in ("auto", "p1", "general"):
            raise ValueError(f"unknown rhs formulation {self.rhs!r}")


@dataclass(frozen=True)
class Frame:
    """One output sample of a path: position, velocity and momentum variable."""

    t: float
    f: np.ndarray
    f_t: np.ndarray
    momentum: np.ndarray | None = None


@dataclass
class Trajectory:
    grid: ParamGrid
    params: OperatorParams
    frames: list[Frame] = field(default_factory=list)
    kind: str = "horizontal"
    free_boundary: bool = False

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def times(self) -> np.ndarray:
        return np.array([fr.t for fr in self.frames])

    @classmethod
    def from_positions(cls, grid, params, times, positions, free_boundary=False):
        """Wrap an arbitrary sampled path; velocities by second-order finite differences in time."""
        times = np.asarray(times, dtype=float)
        positions = np.asarray(positions, dtype=float)
        if len(times) < 2:
            vel = np.zeros_like(positions)
        else:
            vel = np.gradient(positions, times, axis=0, edge_order=2 if len(times) > 2 else 1)
        frames = [Frame(float(t), positions[k], vel[k]) for k, t in enumerate(times)]
        return cls(grid, params, frames, kind="path", free_boundary=free_boundary)


# -- velocity and right-hand sides -------------------------------------------


def velocity_from_scalar_momentum(cache: GeometryCache, params: OperatorParams, b: np.ndarray, tol=1e-10):
    """Solve ``P f_t = (b / sqrt det g) nu``."""
    a = b / cache.sqrt_det
    rhs = a[..., None] * cache.nu_normal
    rhs[~cache.grid.interior] = 0.0
    return assemble(cache, params, tol=tol).solve(rhs)


def velocity_from_vector_momentum(cache: GeometryCache, params: OperatorParams, pvec: np.ndarray, tol=1e-10):
    rhs = pvec / cache.sqrt_det[..., None]
    rhs[~cache.grid.interior] = 0.0
    return assemble(cache, params, tol=tol).solve(rhs)


def _dot(a, b):
    return np.einsum("...c,...c->...", a, b)


def _gram(grad_a, grad_b):
    """``<d_k a, d_l b>`` for ambient fields given their chart gradients ``(..., 2, 3)``."""
    return np.einsum("...kc,...lc->...kl", grad_a, grad_b)


def scalar_momentum_rhs_p1(cache: GeometryCache, params: OperatorParams, f_t: np.ndarray) -> np.ndarray:
    """``d_t b`` for ``P = 1 + A Delta`` in the form where second derivatives of ``f_t`` cancel."""
    A = params.A
    G = gradient(cache.grid, f_t)
    B = _gram(G, G)
    ginv = cache.g_inv
    pair_sB = np.einsum("...ab,...bc,...cd,...da->...", ginv, cache.s, ginv, B)
    grad_sq = np.einsum("...ab,...ba->...", ginv, B)
    out = (A * pair_sB - 0.5 * cache.trL * (_dot(f_t, f_t) + A * grad_sq)) * cache.sqrt_det
    out[~cache.grid.interior] = 0.0
    return out


def _adjoint_sums(cache: GeometryCache, op, f_t: np.ndarray):
    """Sums over ``i`` of ``<grad Delta^(p-i-1) f_t, grad Delta^i f_t>`` and of the
    codifferential of ``<grad Delta^(p-i-1) f_t, Delta^i f_t>``."""
    p = op.params.p
    powers = [f_t] + [None] * (p - 1)
    for k in range(1, p):
        powers[k] = op.laplacian_power(f_t, k)
    grads = [gradient(cache.grid, x) for x in powers]
    Q = np.zeros((*cache.grid.shape, 2, 2))
    C = np.zeros((*cache.grid.shape, 2))
    for i in range(p):
        j = p - i - 1
        Q += _gram(grads[j], grads[i])
        C += np.einsum("...kc,...c->...k", grads[j], powers[i])
    return Q, cache.codifferential(C)


def scalar_momentum_rhs_general(cache: GeometryCache, params: OperatorParams, f_t: np.ndarray, tol=1e-10):
    """``d_t b`` for ``P = 1 + A Delta^p``, any ``p >= 1``, via the adjoint of ``nabla P``."""
    op = assemble(cache, params, tol=tol)
    A = params.A
    Q, div = _adjoint_sums(cache, op, f_t)
    ginv = cache.g_inv
    pair_sQ = np.einsum("...ab,...bc,...cd,...da->...", ginv, cache.s, ginv, Q)
    energy_density = _dot(op.apply(f_t), f_t)
    out = (A * pair_sQ + 0.5 * A * div * cache.trL - 0.5 * energy_density * cache.trL) * cache.sqrt_det
    out[~cache.grid.interior] = 0.0
    return out


def immersion_momentum_rhs(cache: GeometryCache, params: OperatorParams, f_t: np.ndarray, Pf_t: np.ndarray, tol=1e-10):
    """``d_t p`` for the full (not necessarily horizontal) geodesic equation on immersions."""
    op = assemble(cache, params, tol=tol)
    A = params.A
    Q, div = _adjoint_sums(cache, op, f_t)
    ginv = cache.g_inv
    S = cache.S
    pair_SQ = np.einsum("...ab,...bcx,...cd,...da->...x", ginv, S, ginv, Q)
    mean_curv_vec = np.einsum("...ij,...ijx->...x", ginv, S)
    omega = np.einsum("...c,...kc->...k", Pf_t, gradient(cache.grid, f_t))
    sharp = np.einsum("...kl,...l->...k", ginv, omega)
    out = (
        A * pair_SQ
        + (0.5 * A * div - 0.5 * _dot(Pf_t, f_t))[..., None] * mean_curv_vec
        - tangent_push(cache, sharp)
    ) * cache.sqrt_det[..., None]
    out[~cache.grid.interior] = 0.0
    return out


# -- time stepping -----------------------------------------------------------


def _rhs_horizontal(grid, config):
    use_p1 = config.rhs == "p1" or (config.rhs == "auto" and config.params.p == 1)

    def F(f, b):
        cache = build_geometry(f, grid)
        f_t = velocity_from_scalar_momentum(cache, config.params, b, tol=config.tol_lin)
        if use_p1:
            b_t = scalar_momentum_rhs_p1(cache, config.params, f_t)
        else:
            b_t = scalar_momentum_rhs_general(cache, config.params, f_t, tol=config.tol_lin)
        return f_t, b_t

    return F


def _rhs_immersion(grid, config):
    def F(f, pvec):
        cache = build_geometry(f, grid)
        f_t = velocity_from_vector_momentum(cache, config.params, pvec, tol=config.tol_lin)
        Pf_t = pvec / cache.sqrt_det[..., None]
        Pf_t[~grid.interior] = 0.0
        return f_t, immersion_momentum_rhs(cache, config.params, f_t, Pf_t, tol=config.tol_lin)

    return F


def estimate_rhs_spectral_radius(F, y, iters=12, eps=1e-6, seed=0) -> float:
    """Power-iteration estimate of the largest Jacobian eigenvalue modulus of ``F`` at ``y``."""
    rng = np.random.default_rng(seed)
    f0, m0 = y
    base = F(f0, m0)
    v = [rng.standard_normal(f0.shape), rng.standard_normal(m0.shape)]
    norm = np.sqrt(sum(np.sum(x * x) for x in v))
    v = [x / norm for x in v]
    scale = eps * max(1.0, np.sqrt(np.sum(f0**2) + np.sum(m0**2)))
    rho = 0.0
    for _ in range(iters):
        pert = F(f0 + scale * v[0], m0 + scale * v[1])
        Jv = [(pert[0] - base[0]) / scale, (pert[1] - base[1]) / scale]
        rho = np.sqrt(sum(np.sum(x * x) for x in Jv))
        if rho == 0:
            return 0.0
        v = [x / rho for x in Jv]
    return float(rho)


def _integrate(F, grid, f0, m0, config, kind):
    n_steps = int(np.ceil(config.t_final / config.dt - 1e-9)) if config.t_final > 0 else 0
    dt = config.t_final / n_steps if n_steps else config.dt
    traj = Trajectory(grid, config.params, kind=kind)
    f, m = np.array(f0, dtype=float), np.array(m0, dtype=float)
    t = 0.0

    if config.cfl_check and n_steps:
        try:
            rho = estimate_rhs_spectral_radius(F, (f, m))
        except DegenerateImmersionError:
            rho = 0.0
        if dt * rho > 2.5:
            warnings.warn(
                f"time step {dt:g} times estimated spectral radius {rho:.3g} exceeds the RK4 stability bound",
                RuntimeWarning,
                stacklevel=3,
            )

    try:
        for k in range(n_steps + 1):
            k1 = F(f, m)
            if k % config.stride == 0 or k == n_steps:
                traj.frames.append(Frame(t, f.copy(), k1[0], m.copy()))
            if k == n_steps:
                break
            if config.integrator == "explicit_euler":
                f = f + dt * k1[0]
                m = m + dt * k1[1]
            else:
                k2 = F(f + 0.5 * dt * k1[0], m + 0.5 * dt * k1[1])
                k3 = F(f + 0.5 * dt * k2[0], m + 0.5 * dt * k2[1])
                k4 = F(f + dt * k3[0], m + dt * k3[1])
                f = f + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
                m = m + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            t = (k + 1) * dt
    except DegenerateImmersionError as exc:
        exc.t = t
        exc.trajectory = traj
        log.error("geodesic integration aborted at t=%g: %s", t, exc)
        raise
    return traj


def integrate_horizontal_geodesic(grid: ParamGrid, f0: np.ndarray, b0: np.ndarray, config: SolverConfig) -> Trajectory:
    """Integrate the shape-space geodesic with initial immersion ``f0`` and momentum density ``b0``.

    Frames store ``momentum = b``. On Dirichlet grids ``b0`` is zeroed on the boundary ring.
    """
    b0 = np.array(b0, dtype=float)
    b0[~grid.interior] = 0.0
    return _integrate(_rhs_horizontal(grid, config), grid, f0, b0, config, "horizontal")


def integrate_immersion_geodesic(grid: ParamGrid, f0: np.ndarray, p0: np.ndarray, config: SolverConfig) -> Trajectory:
    """Integrate the geodesic on immersions with vector momentum density ``p0 = (P f_t) sqrt(det g)``."""
    p0 = np.array(p0, dtype=float)
    p0[~grid.interior] = 0.0
    return _integrate(_rhs_immersion(grid, config), grid, f0, p0, config, "immersion")


def reversed_momentum(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    last = traj.frames[-1]
    return last.f.copy(), -last.momentum


# -- horizontal lift ---------------------------------------------------------


@dataclass
class LiftResult:
    xi: np.ndarray  # (K, nu, nv, 2) reparametrizing fields in chart units per time
    phi: np.ndarray  # (K, nu, nv, 2) accumulated reparametrization (chart coordinates)
    lifted: np.ndarray  # (K, nu, nv, 3)
    clamped: bool


def _sample(grid: ParamGrid, field_: np.ndarray, coords: np.ndarray) -> tuple[np.ndarray, bool]:
    """Bilinear sample of a nodal field at chart coordinates ``(nu, nv, 2)``."""
    iu = (coords[..., 0] - grid.u_range[0]) / grid.hu
    iv = (coords[..., 1] - grid.v_range[0]) / grid.hv
    clamped = False
    if grid.is_periodic:
        mode = "grid-wrap"
    else:
        mode = "nearest"
        tol = 1e-9
        out_u = (iu < -tol) | (iu > grid.nu - 1 + tol)
        out_v = (iv < -tol) | (iv > grid.nv - 1 + tol)
        clamped = bool(np.any(out_u | out_v))
        iu = np.clip(iu, 0, grid.nu - 1)
        iv = np.clip(iv, 0, grid.nv - 1)
    pts = np.stack([iu.ravel(), iv.ravel()])
    flat = field_.reshape(*grid.shape, -1)
    out = np.stack(
        [ndimage.map_coordinates(flat[..., c], pts, order=1, mode=mode) for c in range(flat.shape[-1])], axis=-1
    )
    return out.reshape(*grid.shape, *field_.shape[2:]), clamped


def horizontal_lift(grid: ParamGrid, path: np.ndarray, dt: float, params: OperatorParams, tol=1e-10) -> LiftResult:
    """Reparametrize a sampled path of immersions so that it becomes horizontal.

    ``xi_k = -(P^T)^-1 (P d_t f)^T`` is computed on each input immersion and its
    flow is integrated with explicit Euler; the lifted path is ``f_k o phi_k``.
    """
    path = np.asarray(path, dtype=float)
    K = path.shape[0]
    vel = np.gradient(path, dt, axis=0, edge_order=2 if K > 2 else 1)
    U, V = grid.coords()
    phi = np.empty((K, *grid.shape, 2))
    phi[0] = np.stack([U, V], axis=-1)
    xi = np.empty((K, *grid.shape, 2))
    lifted = np.empty_like(path)
    clamped = False
    for k in range(K):
        cache = build_geometry(path[k], grid)
        _, h_ver = assemble(cache, params, tol=tol).horizontal_projection(vel[k])
        xi[k] = -h_ver
        lifted[k], c1 = _sample(grid, path[k], phi[k])
        clamped |= c1
        if k + 1 < K:
            xi_at, c2 = _sample(grid, xi[k], phi[k])
            clamped |= c2
            phi[k + 1] = phi[k] + dt * xi_at
    if clamped:
        log.warning("horizontal lift left the parameter domain; positions were clamped")
    return LiftResult(xi, phi, lifted, clamped)


def path_tangential_residual(grid: ParamGrid, path: np.ndarray, dt: float, params: OperatorParams) -> np.ndarray:
    """Per-sample ``H^0`` norm of ``(P d_t f)^T`` on free nodes, for a sampled path."""
    path = np.asarray(path, dtype=float)
    vel = np.gradient(path, dt, axis=0, edge_order=2 if len(path) > 2 else 1)
    out = []
    for k in range(len(path)):
        cache = build_geometry(path[k], grid)
        Pv = assemble(cache, params).apply(vel[k])
        top, _ = split_tangent_normal(cache, Pv)
        amb = tangent_push(cache, top)
        amb[~grid.interior] = 0.0
        out.append(np.sqrt(np.sum(_dot(amb, amb) * cache.mass)))
    return np.array(out)


def with_params(config: SolverConfig, **changes) -> SolverConfig:
    return replace(config, **changes)
