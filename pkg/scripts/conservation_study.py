"""Momentum drift on a closed surface versus a clamped square, under h- and dt-refinement.

On the periodic torus the drifts are discretization error and shrink with h;
on the Dirichlet bump the fixed boundary exerts a force, so linear and angular
momentum change by a fixed amount independent of h and dt.
"""

import numpy as np

from shape_geodesics.diagnostics import relative_drift, trajectory_diagnostics
from shape_geodesics.geodesics import SolverConfig, integrate_horizontal_geodesic
from shape_geodesics.geometry import ParamGrid


def drifts(grid, f0, b0, dt, t_final):
    tr = integrate_horizontal_geodesic(grid, f0, b0, SolverConfig(dt=dt, t_final=t_final, stride=max(1, round(0.25 / dt))))
    recs = trajectory_diagnostics(tr)
    return (
        relative_drift([r.energy for r in recs]),
        relative_drift([r.linear_momentum for r in recs]),
        relative_drift([r.angular_momentum for r in recs]),
    )


def torus_case(n, dt):
    grid = ParamGrid.periodic(n, n)
    U, V = grid.coords()
    R, r = 2.5, 1.0
    f0 = np.stack([(R + r * np.cos(V)) * np.cos(U), (R + r * np.cos(V)) * np.sin(U), r * np.sin(V)], -1)
    f0 += 0.15 * np.stack([np.cos(U + V), np.sin(2 * V), np.cos(U) * np.sin(V)], -1)
    b0 = 0.5 * (np.sin(U) + np.cos(2 * V) + 0.3 * np.sin(U + V))
    return drifts(grid, f0, b0, dt, 0.5)


def bump_case(n, dt):
    grid = ParamGrid(n, n)
    U, V = grid.coords()
    return drifts(grid, np.stack([U, V, np.zeros_like(U)], -1), np.sin(U) * np.sin(V), dt, 2.0)


def main():
    print(f"{'case':22s} {'energy':>10s} {'linear':>10s} {'angular':>10s}")
    for n in (16, 32, 64):
        print(f"{'torus n=' + str(n):22s} " + " ".join(f"{x:10.2e}" for x in torus_case(n, 0.02)))
    for n, dt in ((25, 0.05), (50, 0.05), (50, 0.025)):
        print(f"{f'bump n={n} dt={dt}':22s} " + " ".join(f"{x:10.2e}" for x in bump_case(n, dt)))


if __name__ == "__main__":
    main()
