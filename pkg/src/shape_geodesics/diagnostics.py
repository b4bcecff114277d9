"""Conserved quantities, path functionals and inequality checks along trajectories."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .geometry import GeometryCache, build_geometry, split_tangent_normal
from .operator import OperatorParams, assemble


def _op(cache, params, free_boundary):
    return assemble(cache, params, free_boundary=free_boundary)


def energy(cache: GeometryCache, params: OperatorParams, f_t, free_boundary=False) -> float:
    return _op(cache, params, free_boundary).inner(f_t, f_t)


def linear_momentum(cache: GeometryCache, params: OperatorParams, f_t, free_boundary=False) -> np.ndarray:
    Pf = _op(cache, params, free_boundary).apply(f_t)
    return np.sum(Pf * cache.mass[..., None], axis=(0, 1))


def angular_momentum(cache: GeometryCache, params: OperatorParams, f, f_t, free_boundary=False) -> np.ndarray:
    """``int f x P f_t vol(g)``; the bivector ``f ^ P f_t`` is identified with R^3 by the right-hand rule."""
    Pf = _op(cache, params, free_boundary).apply(f_t)
    return np.sum(np.cross(f, Pf) * cache.mass[..., None], axis=(0, 1))


def reparam_momentum(cache: GeometryCache, params: OperatorParams, f_t, free_boundary=False) -> np.ndarray:
    """One-form density ``g((P f_t)^T) sqrt(det g)`` per node, shape ``(nu, nv, 2)``.

    Fixed (Dirichlet boundary) nodes are excluded by setting them to zero.
    """
    op = _op(cache, params, free_boundary)
    Pf = op.apply(f_t)
    top, _ = split_tangent_normal(cache, Pf)
    lowered = np.einsum("...kl,...l->...k", cache.g, top) * cache.sqrt_det[..., None]
    lowered[~op.free] = 0.0
    return lowered


def reparam_momentum_norm(cache: GeometryCache, params: OperatorParams, f_t, free_boundary=False) -> float:
    """``L^2`` norm of the reparametrization momentum, measured as ``|(P f_t)^T|_g`` against ``vol(g)``."""
    op = _op(cache, params, free_boundary)
    Pf = op.apply(f_t)
    top, _ = split_tangent_normal(cache, Pf)
    sq = np.einsum("...k,...kl,...l->...", top, cache.g, top)
    sq[~op.free] = 0.0
    return float(math.sqrt(np.sum(sq * cache.mass)))


def volume(cache: GeometryCache) -> float:
    return float(cache.volume)


def normal_speed_integral(cache: GeometryCache, f_t) -> float:
    """``int |f_t^perp| vol(g)``."""
    _, perp = split_tangent_normal(cache, f_t)
    return float(np.sum(np.linalg.norm(perp, axis=-1) * cache.mass))


def _trapezoid_cumulative(t, y):
    out = np.zeros_like(y, dtype=float)
    if len(t) > 1:
        out[1:] = np.cumsum(0.5 * np.diff(t) * (y[1:] + y[:-1]))
    return out


@dataclass
class DiagnosticsRecord:
    t: float
    energy: float
    linear_momentum: np.ndarray
    angular_momentum: np.ndarray
    reparam_momentum_norm: float
    volume: float
    swept_area_cumulative: float
    path_length_cumulative: float

    def row(self) -> list[float]:
        out = []
        for fld in fields(self):
            v = getattr(self, fld.name)
            out.extend(np.ravel(v).tolist() if isinstance(v, np.ndarray) else [float(v)])
        return out

    @staticmethod
    def header() -> list[str]:
        names = []
        for fld in fields(DiagnosticsRecord):
            if fld.name in ("linear_momentum", "angular_momentum"):
                names.extend(f"{fld.name}_{c}" for c in "xyz")
            else:
                names.append(fld.name)
        return names

    def as_dict(self):
        return asdict(self)


def trajectory_diagnostics(traj, params: OperatorParams | None = None, free_boundary=None) -> list[DiagnosticsRecord]:
    """One record per frame. Cumulative swept area and path length use the trapezoid rule in time."""
    params = params or traj.params
    fb = traj.free_boundary if free_boundary is None else free_boundary
    per = []
    for fr in traj.frames:
        cache = build_geometry(fr.f, traj.grid)
        E = energy(cache, params, fr.f_t, fb)
        per.append(
            (
                fr.t,
                E,
                linear_momentum(cache, params, fr.f_t, fb),
                angular_momentum(cache, params, fr.f, fr.f_t, fb),
                reparam_momentum_norm(cache, params, fr.f_t, fb),
                volume(cache),
                normal_speed_integral(cache, fr.f_t),
            )
        )
    t = np.array([x[0] for x in per])
    swept = _trapezoid_cumulative(t, np.array([x[6] for x in per]))
    length = _trapezoid_cumulative(t, np.sqrt(np.maximum([x[1] for x in per], 0.0)))
    return [
        DiagnosticsRecord(x[0], x[1], x[2], x[3], x[4], x[5], float(swept[k]), float(length[k]))
        for k, x in enumerate(per)
    ]


def swept_area(traj) -> float:
    t = traj.times
    vals = np.array([normal_speed_integral(build_geometry(fr.f, traj.grid), fr.f_t) for fr in traj.frames])
    return float(_trapezoid_cumulative(t, vals)[-1])


def path_length(traj, params: OperatorParams | None = None, free_boundary=None) -> float:
    params = params or traj.params
    fb = traj.free_boundary if free_boundary is None else free_boundary
    t = traj.times
    vals = np.array([energy(build_geometry(fr.f, traj.grid), params, fr.f_t, fb) for fr in traj.frames])
    return float(_trapezoid_cumulative(t, np.sqrt(np.maximum(vals, 0.0)))[-1])


@dataclass
class InequalityReport:
    lhs: float
    rhs: float
    slack: float
    holds: bool

    @property
    def margin(self) -> float:
        return self.rhs + self.slack - self.lhs


def area_swept_bound(traj, params: OperatorParams | None = None, C1=1.0, slack=0.0) -> InequalityReport:
    """``C1 * swept area <= max_t sqrt(Vol) * path length``.

    Both sides use the same time quadrature; the discrete inequality then
    follows node-wise from ``G^P >= H^0`` and Cauchy-Schwarz.
    """
    recs = trajectory_diagnostics(traj, params)
    lhs = C1 * recs[-1].swept_area_cumulative
    rhs = max(math.sqrt(r.volume) for r in recs) * recs[-1].path_length_cumulative
    return InequalityReport(lhs, rhs, slack, lhs <= rhs + slack)


def sqrt_vol_lipschitz_check(traj, params: OperatorParams | None = None, slack=None) -> InequalityReport:
    """``|sqrt Vol(f(T)) - sqrt Vol(f(0))| <= path length / 2`` (requires ``A >= 1, p = 1``).

    Default slack is ``h^2 + dt^2`` scaled by the path length, standing in for
    the quadrature errors of both sides.
    """
    params = params or traj.params
    if params.A < 1 or params.p != 1:
        raise ValueError("the square-root volume bound is stated for A >= 1 and p = 1")
    recs = trajectory_diagnostics(traj, params)
    lhs = abs(math.sqrt(recs[-1].volume) - math.sqrt(recs[0].volume))
    rhs = 0.5 * recs[-1].path_length_cumulative
    if slack is None:
        t = traj.times
        dt = float(np.max(np.diff(t))) if len(t) > 1 else 0.0
        h = max(traj.grid.hu, traj.grid.hv)
        slack = (h * h + dt * dt) * rhs
    return InequalityReport(lhs, rhs, slack, lhs <= rhs + slack)


def relative_drift(values) -> float:
    """``max_t |q(t) - q(0)| / |q(0)|`` for scalar or vector sequences."""
    arr = np.asarray(values, dtype=float)
    arr = arr.reshape(len(arr), -1)
    ref = np.linalg.norm(arr[0])
    if ref == 0:
        return float(np.max(np.linalg.norm(arr - arr[0], axis=1)))
    return float(np.max(np.linalg.norm(arr - arr[0], axis=1)) / ref)
