"""Closed-form and quadrature models: concentric spheres, zig-zag paths, scaling paths."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .geometry import GeometryCache, ParamGrid, build_geometry
from .operator import OperatorParams, assemble

# -- concentric spheres -------------------------------------------------------


class SphereCollapseError(ArithmeticError):
    """The radius reached zero in finite time."""

    def __init__(self, message, t, model=None):
        super().__init__(message)
        self.t = t
        self.model = model


class QuadratureError(RuntimeError):
    pass


def unit_sphere_volume(n: int) -> float:
    """Volume of the unit sphere ``S^(n-1)`` in ``R^n``."""
    return n * math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def sphere_volume(r, n=3):
    return np.asarray(r, dtype=float) ** (n - 1) * unit_sphere_volume(n)


def sphere_radius_acceleration(r, rt, params: OperatorParams, n=3):
    """``r_tt`` of a geodesic of concentric spheres."""
    A, p = params.A, params.p
    c = A * (n - 1) ** p
    return -(rt**2) / r * ((n - 1) / 2 - p * c / (r ** (2 * p) + c))


def sphere_energy(r, rt, params: OperatorParams, n=3):
    A, p = params.A, params.p
    return rt**2 * (1 + A * (n - 1) ** p / r ** (2 * p)) * sphere_volume(r, n)


def sphere_momentum_for_speed(r, rt, params: OperatorParams, n=3):
    """``a`` with ``P(r_t nu) = a nu`` on the round sphere of radius ``r``."""
    return rt * (1 + params.A * (n - 1) ** params.p / r ** (2 * params.p))


@dataclass
class SphereModel:
    n: int
    params: OperatorParams
    t: np.ndarray
    r: np.ndarray
    r_t: np.ndarray

    @property
    def energy(self) -> np.ndarray:
        return sphere_energy(self.r, self.r_t, self.params, self.n)


def sphere_geodesic_ode(r0, rdot0, params: OperatorParams, n=3, dt=1e-3, t_final=1.0) -> SphereModel:
    """RK4 integration of the radius ODE; raises :class:`SphereCollapseError` if ``r`` hits 0."""
    if not r0 > 0:
        raise ValueError("r0 must be positive")
    steps = int(np.ceil(t_final / dt - 1e-9)) if t_final > 0 else 0
    h = t_final / steps if steps else dt

    def F(y):
        return np.array([y[1], sphere_radius_acceleration(y[0], y[1], params, n)])

    ts, ys = [0.0], [np.array([float(r0), float(rdot0)])]
    y = ys[0]
    for k in range(steps):
        with np.errstate(all="ignore"):
            k1 = F(y)
            k2 = F(y + 0.5 * h * k1)
            k3 = F(y + 0.5 * h * k2)
            k4 = F(y + h * k3)
            y_new = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        bad = not np.all(np.isfinite([k1, k2, k3, k4])) or not np.all(np.isfinite(y_new))
        if bad or y_new[0] <= 0 or min(y[0] + 0.5 * h * k1[0], y[0] + 0.5 * h * k2[0], y[0] + h * k3[0]) <= 0:
            arr = np.array(ys)
            model = SphereModel(n, params, np.array(ts), arr[:, 0], arr[:, 1])
            raise SphereCollapseError(f"sphere radius collapsed to zero near t={ts[-1] + h:.6g}", ts[-1] + h, model)
        y = y_new
        ts.append((k + 1) * h)
        ys.append(y)
    arr = np.array(ys)
    return SphereModel(n, params, np.array(ts), arr[:, 0], arr[:, 1])


def _log_of_log_integrand(s, params, n):
    c = params.A * (n - 1) ** params.p
    if c == 0:
        return (n + 1) / 2 * s
    return 0.5 * np.logaddexp(0.0, math.log(c) - 2 * params.p * s) + (n + 1) / 2 * s


def _log_integrand(s, params, n):
    # sqrt((1 + c r^-2p) r^(n-1)) dr with r = e^s, dr = e^s ds; stable for very negative s
    return np.exp(_log_of_log_integrand(s, params, n))


def sphere_path_length(r0, r1, params: OperatorParams, n=3) -> float:
    """Length of the radial path between concentric spheres of radii ``r0`` and ``r1``.

    Integrated in ``s = log r`` so that radii like ``exp(-1e4)`` are representable
    through :func:`sphere_path_length_log`.
    """
    if not (r0 > 0 and r1 > 0):
        raise ValueError("radii must be positive")
    return sphere_path_length_log(math.log(r0), math.log(r1), params, n)


def sphere_path_length_log(s0, s1, params: OperatorParams, n=3) -> float:
    """:func:`sphere_path_length` with log-radii ``s0 = log r0``, ``s1 = log r1``.

    Returns ``inf`` when the integrand itself leaves the double range.
    """
    lo, hi = sorted((float(s0), float(s1)))
    if lo == hi:
        return 0.0
    # the integrand is monotone on each side of its minimum, so overflow can only happen at an end
    if max(_log_of_log_integrand(lo, params, n), _log_of_log_integrand(hi, params, n)) > 700.0:
        return math.inf
    # panels refine toward the scale where the integrand changes character
    knots = {lo, hi}
    for m in range(0, 12):
        for sgn in (-1, 1):
            x = sgn * 10.0 ** (m / 2) if m else 0.0
            if lo < x < hi:
                knots.add(x)
    knots = sorted(knots)
    total, err = 0.0, 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        val, e = integrate.quad(_log_integrand, a, b, args=(params, n), limit=200, epsabs=0.0, epsrel=1e-12)
        total += val
        err += e
    if not np.isfinite(total) or err > 1e-8 * max(abs(total), 1e-300) + 1e-13:
        raise QuadratureError(f"sphere length quadrature did not converge (estimate {total}, error {err})")
    return math.sqrt(unit_sphere_volume(n)) * total


def sphere_path_length_direct(r0, r1, params: OperatorParams, n=3) -> float:
    """The same length by quadrature directly in ``r`` (independent check for moderate radii)."""
    c = params.A * (n - 1) ** params.p
    f = lambda r: math.sqrt((1 + c / r ** (2 * params.p)) * r ** (n - 1))
    lo, hi = sorted((r0, r1))
    val, _ = integrate.quad(f, lo, hi, limit=500, epsabs=1e-13, epsrel=1e-12)
    return math.sqrt(unit_sphere_volume(n)) * val


def sphere_length_to_origin_n3_p1(r1, A=1.0) -> float:
    """Closed form of the ``n=3, p=1`` length from radius 0 to ``r1``."""
    q = math.sqrt(r1 * r1 + 2 * A)
    anti = lambda r, q: 0.5 * r * q + A * math.log(r + q)
    return math.sqrt(4 * math.pi) * (anti(r1, q) - anti(0.0, math.sqrt(2 * A)))


@dataclass
class CompletenessReport:
    n: int
    params: OperatorParams
    log_eps: np.ndarray
    lengths: np.ndarray
    verdict: str  # "complete" or "incomplete"
    threshold: float

    @property
    def growth(self) -> float:
        return float(self.lengths[-1] / self.lengths[0])


def classify_completeness(params: OperatorParams, n=3, r0=1.0, decades=(1, 2, 3, 4, 5), threshold=1e3) -> CompletenessReport:
    """Divergence test on the length from radius ``r0`` down to ``eps = exp(-10^k)``.

    The path to the origin has infinite length (geodesic completeness of the
    sphere family) when the length at the smallest ``eps`` exceeds ``threshold``
    times its value at the largest ``eps``.
    """
    log_eps = np.array([-(10.0**k) for k in decades])
    lengths = np.array([sphere_path_length_log(le, math.log(r0), params, n) for le in log_eps])
    verdict = "complete" if lengths[-1] > threshold * lengths[0] else "incomplete"
    return CompletenessReport(n, params, log_eps, lengths, verdict, threshold)


def completeness_predicted(params: OperatorParams, n=3) -> str:
    return "complete" if params.p >= (n + 1) / 2 else "incomplete"


# -- zig-zag paths for the H^0 metric ----------------------------------------


def _zigzag_cell(alpha, n):
    x = n * np.asarray(alpha, dtype=float)
    k = np.clip(np.floor(x), 0, n - 1)
    return x - k, k  # local coordinate in [0, 1] within cell k


def zigzag_phi(t, alpha, n):
    """The piecewise-linear reparametrization ``phi(t, alpha)`` and its partials.

    Returns ``(phi, phi_t, phi_alpha)``; ``t`` and ``alpha`` broadcast.
    """
    t = np.asarray(t, dtype=float)
    xl, _ = _zigzag_cell(alpha, n)
    t, xl = np.broadcast_arrays(t, xl)
    rising = xl <= 0.5
    tent = np.where(rising, 2 * xl, 2 - 2 * xl)  # 2n.alpha - 2k or 2k + 2 - 2n.alpha
    sign = np.where(rising, 1.0, -1.0)
    early = t <= 0.5
    phi = np.where(early, 2 * t * tent, 2 * t - 1 + 2 * (1 - t) * tent)
    phi_t = np.where(early, 2 * tent, 2 - 2 * tent)
    phi_a = sign * np.where(early, 4 * n * t, 4 * n * (1 - t))
    return phi, phi_t, phi_a


def _tent_moment(x, m):
    """``int_0^x d(y)^m dy`` with ``d`` the distance to the nearest integer."""
    x = np.asarray(x, dtype=float)
    whole = np.floor(x)
    r = x - whole
    half = 0.5 ** (m + 1) / (m + 1)
    part = np.where(r <= 0.5, r ** (m + 1) / (m + 1), 2 * half - (1 - r) ** (m + 1) / (m + 1))
    return whole * 2 * half + part


def _alpha_footprints(alpha):
    """Dual-cell ranges of ``alpha`` per node, assuming it varies along axis 0."""
    a = np.asarray(alpha, dtype=float)
    mid = 0.5 * (a[1:] + a[:-1])
    lo = np.concatenate([a[:1], mid], axis=0)
    hi = np.concatenate([mid, a[-1:]], axis=0)
    return np.minimum(lo, hi), np.maximum(lo, hi)


def zigzag_horizontal_length(speed_field, alpha_field, dalpha_norm_field, n_zigzag, weights, footprints=None) -> float:
    """Horizontal ``H^0`` length of the zig-zag reparametrization of a horizontal base path.

    ``speed_field`` (``|f_t|``, constant in time), ``alpha_field`` and
    ``dalpha_norm_field`` are per-node arrays, ``weights`` the ``vol(g)``
    quadrature weights. Within each node's ``alpha`` range the integrand is
    averaged exactly (``phi_alpha^2`` is constant there and ``phi_t`` is a tent
    function of ``n alpha``); the time integral is done by adaptive quadrature
    on each half of ``[0, 1]``.
    """
    n = int(n_zigzag)
    if n < 1:
        raise ValueError("n_zigzag must be >= 1")
    sig2 = np.asarray(speed_field, dtype=float) ** 2
    delta2 = np.asarray(dalpha_norm_field, dtype=float) ** 2
    w = np.asarray(weights, dtype=float)
    lo, hi = footprints if footprints is not None else _alpha_footprints(alpha_field)
    width = hi - lo
    safe = np.where(width > 0, width, 1.0)

    x = n * np.asarray(alpha_field, dtype=float)
    d_point = np.abs(x - np.round(x))

    def mean_moment(m):
        avg = (_tent_moment(n * hi, m) - _tent_moment(n * lo, m)) / (n * safe)
        return np.where(width > 0, avg, d_point**m)

    Ed, Ed2 = mean_moment(1), mean_moment(2)
    early_sq = 16 * Ed2  # mean of (4d)^2
    late_sq = 4 - 16 * Ed + 16 * Ed2  # mean of (2 - 4d)^2

    def inner(t, mean_sq, c):
        return np.sum(w * sig2 * mean_sq / np.sqrt(1 + c(t) ** 2 * delta2 * sig2))

    f1 = lambda t: math.sqrt(inner(t, early_sq, lambda s: 4 * n * s))
    f2 = lambda t: math.sqrt(inner(t, late_sq, lambda s: 4 * n * (1 - s)))
    L1, _ = integrate.quad(f1, 0.0, 0.5, limit=200, epsabs=1e-12, epsrel=1e-11)
    L2, _ = integrate.quad(f2, 0.5, 1.0, limit=200, epsabs=1e-12, epsrel=1e-11)
    return L1 + L2


@dataclass
class ZigzagPath:
    """Per-node fields of an ``H^0``-horizontal base path for the zig-zag construction."""

    speed: np.ndarray
    alpha: np.ndarray
    dalpha_norm: np.ndarray
    weights: np.ndarray

    def length(self, n_zigzag) -> float:
        return zigzag_horizontal_length(self.speed, self.alpha, self.dalpha_norm, n_zigzag, self.weights)


def default_zigzag_path(nodes=65) -> ZigzagPath:
    """Unit-speed normal translation ``f(t,u,v) = (u, v, t)`` of the flat square ``[0,pi]^2``
    with ``alpha = u / pi``."""
    grid = ParamGrid(nodes, nodes)
    U, _ = grid.coords()
    return ZigzagPath(
        speed=np.ones(grid.shape),
        alpha=U / math.pi,
        dalpha_norm=np.full(grid.shape, 1 / math.pi),
        weights=grid.weights,
    )


def default_zigzag_length_closed_form(n_zigzag) -> float:
    """Independent evaluation of the default-path length through its one-dimensional reduction.

    For constant speed and ``|d alpha|`` the inner integral is
    ``(area) mean(phi_t^2) / sqrt(1 + (4 n s)^2 / pi^2)`` with ``mean(phi_t^2) = 4/3``
    on both halves, giving ``2 pi sqrt(4/3) (pi / 4n) int_0^{2n/pi} (1 + x^2)^(-1/4) dx``.
    """
    n = n_zigzag
    val, _ = integrate.quad(lambda x: (1 + x * x) ** -0.25, 0, 2 * n / math.pi, epsabs=1e-13, epsrel=1e-12)
    return 2 * math.pi * math.sqrt(4 / 3) * math.pi / (4 * n) * val


# -- scaling paths and the Frechet counterexample ----------------------------


def _scaling_quadratic_forms(cache: GeometryCache, params: OperatorParams):
    op = assemble(cache, params, free_boundary=True)
    f0 = cache.f
    w = cache.mass
    Q0 = float(np.sum(np.einsum("...c,...c->...", f0, f0) * w))
    Qp = float(np.sum(np.einsum("...c,...c->...", op.laplacian_power(f0, params.p), f0) * w))
    return Q0, Qp


def scaling_path_length(f0, params: OperatorParams, r_floor=1e-3, grid: ParamGrid | None = None, m=2) -> float:
    """Length of the path ``r f0`` for ``r`` from 1 down to ``r_floor``.

    Uses the natural-boundary Laplacian so that the whole immersion may move.
    """
    cache = f0 if isinstance(f0, GeometryCache) else build_geometry(f0, grid)
    if not 0 < r_floor <= 1:
        raise ValueError("r_floor must lie in (0, 1]")
    Q0, Qp = _scaling_quadratic_forms(cache, params)
    A, p = params.A, params.p

    def integrand(s):  # r = e^s, dr = r ds
        r = math.exp(s)
        return math.sqrt(r**m * (Q0 + A * r ** (-2 * p) * Qp)) * r

    val, err = integrate.quad(integrand, math.log(r_floor), 0.0, limit=200, epsabs=1e-13, epsrel=1e-12)
    if not np.isfinite(val) or err > 1e-7 * max(val, 1e-300):
        raise QuadratureError(f"scaling path quadrature did not converge (estimate {val}, error {err})")
    return val


def scaling_path_length_closed_form_p1(f0, params: OperatorParams, r_floor=1e-3, grid=None) -> float:
    """``int sqrt(Q0 r^2 + A Q1) dr`` in closed form, valid for ``p = 1`` and ``m = 2``."""
    cache = f0 if isinstance(f0, GeometryCache) else build_geometry(f0, grid)
    Q0, Q1 = _scaling_quadratic_forms(cache, OperatorParams(params.A, 1))
    c = params.A * Q1 / Q0

    def anti(r):
        q = math.sqrt(r * r + c)
        return 0.5 * r * q + 0.5 * c * math.log(r + q)

    return math.sqrt(Q0) * (anti(1.0) - anti(r_floor))


@dataclass
class FrechetReport:
    distance: float  # translation length, equal to the Frechet displacement
    r_floor: float
    scaling_cost: float  # shrink plus grow
    translation_cost: float
    total_cost: float
    frechet_displacement: float


def frechet_scaling_cost(f0, params: OperatorParams, distance, r_floor=1e-3, grid=None, direction=(1.0, 0.0, 0.0)) -> FrechetReport:
    """Cost of shrinking ``f0`` to scale ``r_floor``, translating by ``distance``, and growing back."""
    cache = f0 if isinstance(f0, GeometryCache) else build_geometry(f0, grid)
    shrink = scaling_path_length(cache, params, r_floor)
    small = build_geometry(r_floor * cache.f, cache.grid)
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    vel = np.broadcast_to(distance * e, small.f.shape).copy()
    op = assemble(small, params, free_boundary=True)
    translation = math.sqrt(max(op.inner(vel, vel), 0.0))
    return FrechetReport(
        distance=float(distance),
        r_floor=float(r_floor),
        scaling_cost=2 * shrink,
        translation_cost=translation,
        total_cost=2 * shrink + translation,
        frechet_displacement=float(distance),
    )


def torus_immersion(grid: ParamGrid, R=2.0, r=0.8) -> np.ndarray:
    """Torus of revolution on a periodic ``[0, 2pi)^2`` grid, centered at the origin."""
    U, V = grid.coords()
    return np.stack([(R + r * np.cos(V)) * np.cos(U), (R + r * np.cos(V)) * np.sin(U), r * np.sin(V)], axis=-1)
