import numpy as np
import pytest
from hypothesis import settings

from shape_geodesics.geometry import ParamGrid

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


def flat(grid):
    U, V = grid.coords()
    return np.stack([U, V, np.zeros_like(U)], axis=-1)


def sphere_patch(n, r=1.5, nv=None):
    """Outward sphere chart (theta, phi) away from the poles."""
    grid = ParamGrid(n, nv or n, u_range=(0.6, 2.4), v_range=(0.3, 2.0))
    T, P = grid.coords()
    f = r * np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)
    return grid, f


def torus(grid, R=2.0, r=0.8):
    U, V = grid.coords()
    return np.stack([(R + r * np.cos(V)) * np.cos(U), (R + r * np.cos(V)) * np.sin(U), r * np.sin(V)], axis=-1)


def smooth_periodic(rng, grid, k=2):
    """Random trigonometric polynomial of degree ``k`` on a periodic grid; the coefficients come from ``rng``."""
    U, V = grid.coords()
    out = np.zeros(grid.shape)
    for a in range(k + 1):
        for b in range(k + 1):
            c = rng.normal(size=4) / (1 + a + b) ** 2
            out += (
                c[0] * np.cos(a * U) * np.cos(b * V)
                + c[1] * np.sin(a * U) * np.cos(b * V)
                + c[2] * np.cos(a * U) * np.sin(b * V)
                + c[3] * np.sin(a * U) * np.sin(b * V)
            )
    return out


def smooth_dirichlet(rng, grid, k=3):
    """Random smooth field vanishing on the boundary of a Dirichlet grid."""
    U, V = grid.coords()
    (u0, u1), (v0, v1) = grid.u_range, grid.v_range
    x, y = (U - u0) / (u1 - u0) * np.pi, (V - v0) / (v1 - v0) * np.pi
    out = np.zeros(grid.shape)
    for a in range(1, k + 1):
        for b in range(1, k + 1):
            out += rng.normal() / (a + b) ** 2 * np.sin(a * x) * np.sin(b * y)
    return out


def perturbed_torus(rng, grid, amp=0.15):
    f = torus(grid, 2.5, 1.0)
    return f + amp * np.stack([smooth_periodic(rng, grid) for _ in range(3)], axis=-1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
