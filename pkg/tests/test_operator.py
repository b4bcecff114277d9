import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import flat, sphere_patch, torus
from shape_geodesics.geometry import ParamGrid, build_geometry, h0_inner, laplace_beltrami, split_tangent_normal, tangent_push
from shape_geodesics.operator import (
    LinearSolveError,
    OperatorParams,
    SobolevOperator,
    apply_P,
    apply_P_top,
    assemble,
    gp_inner,
    horizontal_projection,
    solve_P,
)
import shape_geodesics.operator as opmod


def bump_setup(n):
    grid = ParamGrid(n, n)
    U, V = grid.coords()
    h = np.zeros((*grid.shape, 3))
    h[..., 2] = np.sin(U) * np.sin(V)
    return grid, build_geometry(flat(grid), grid), h


def deep(grid, m=3):
    mask = np.zeros(grid.shape, dtype=bool)
    mask[m:-m, m:-m] = True
    return mask


def test_params_validated():
    with pytest.raises(ValueError):
        OperatorParams(A=-1)
    with pytest.raises(ValueError):
        OperatorParams(p=0)
    with pytest.raises(ValueError):
        OperatorParams(p=1.5)
    OperatorParams(A=0.0, p=3)


def test_identity_when_A_zero(rng):
    grid, f = sphere_patch(12)
    c = build_geometry(f, grid)
    h = rng.normal(size=f.shape)
    h[~grid.interior] = 0
    P0 = OperatorParams(0.0, 2)
    assert np.allclose(apply_P(c, P0, h), h)
    assert np.allclose(solve_P(c, P0, h), h)
    assert gp_inner(c, P0, h, h) == pytest.approx(h0_inner(c, h, h))


def test_flat_eigenfunction_apply_solve_inner():
    errs = []
    for n in (21, 41, 81):
        grid, c, h = bump_setup(n)
        prm = OperatorParams(1.0, 1)
        e1 = np.abs(apply_P(c, prm, h) - 3 * h).max()
        e2 = np.abs(solve_P(c, prm, h) - h / 3).max()
        e3 = abs(gp_inner(c, prm, h, h) - 3 * np.pi**2 / 4)
        errs.append((e1, e2, e3))
    errs = np.array(errs)
    ratios = errs[:-1] / errs[1:]
    assert np.all(ratios > 3.5)


def test_sphere_normal_speed_eigenvector():
    r, rt = 1.3, 0.7
    for p in (1, 2):
        prm = OperatorParams(1.0, p)
        errs = []
        for n in (30, 60):
            grid, f = sphere_patch(n, r)
            c = build_geometry(f, grid)
            out = assemble(c, prm, free_boundary=True).apply(rt * c.nu_normal)
            want = rt * (1 + 2**p / r ** (2 * p)) * c.nu_normal
            errs.append(np.abs(out - want)[deep(grid, 2 * p + 1)].max())
        assert errs[1] < errs[0] / 3


def test_solve_round_trip_and_cache(rng):
    grid, f = sphere_patch(20, nv=24)
    c = build_geometry(f, grid)
    for prm in (OperatorParams(1.0, 1), OperatorParams(0.5, 2), OperatorParams(2.0, 3)):
        h0 = rng.normal(size=f.shape)
        h0[~grid.interior] = 0
        back = solve_P(c, prm, apply_P(c, prm, h0))
        assert np.linalg.norm(back - h0) <= 1e-8 * np.linalg.norm(h0)
    assert assemble(c, OperatorParams()) is assemble(c, OperatorParams())
    c2 = build_geometry(f * 1.01, grid)
    assert assemble(c2, OperatorParams()) is not assemble(c, OperatorParams())
    assert assemble(c2, OperatorParams()).fingerprint != assemble(c, OperatorParams()).fingerprint


def test_iterative_solver_path_matches_direct(rng, monkeypatch):
    grid = ParamGrid.periodic(16, 16)
    c = build_geometry(torus(grid), grid)
    rhs = rng.normal(size=(*grid.shape, 3))
    direct = SobolevOperator(c, OperatorParams(1.0, 1)).solve(rhs)
    monkeypatch.setattr(opmod, "DIRECT_SOLVE_MAX_NODES", 10)
    it = SobolevOperator(c, OperatorParams(1.0, 1)).solve(rhs)
    assert np.allclose(it, direct, atol=1e-7)


def test_nonconvergence_reports_residual(rng, monkeypatch):
    grid = ParamGrid.periodic(16, 16)
    c = build_geometry(torus(grid), grid)
    monkeypatch.setattr(opmod, "DIRECT_SOLVE_MAX_NODES", 10)
    op = SobolevOperator(c, OperatorParams(50.0, 3), tol=1e-14)
    orig = opmod.spla.cg
    monkeypatch.setattr(opmod.spla, "cg", lambda *a, **k: orig(*a, **{**k, "maxiter": 2}))
    with pytest.raises(LinearSolveError) as info:
        op.solve(rng.normal(size=(*grid.shape, 3)))
    assert info.value.residual is not None and info.value.residual > 0


def test_boundary_nodes_fixed(rng):
    grid, f = sphere_patch(15)
    c = build_geometry(f, grid)
    rhs = rng.normal(size=f.shape)
    rhs[~grid.interior] = 0
    h = solve_P(c, OperatorParams(), rhs)
    assert np.all(h[~grid.interior] == 0)


def test_apply_P_top_examples(rng):
    grid = ParamGrid(10, 10)
    c = build_geometry(flat(grid), grid)
    X = rng.normal(size=(*grid.shape, 2))
    assert np.allclose(apply_P_top(c, OperatorParams(0.0), X), X)

    grid, f = sphere_patch(16, nv=19)
    c = build_geometry(f, grid)
    prm = OperatorParams(1.0, 2)
    X, Y = rng.normal(size=(2, *grid.shape, 2))

    def pair(a, b):
        return np.sum(np.einsum("...k,...kl,...l->...", a, c.g, b) * c.mass)

    lhs, rhs = pair(apply_P_top(c, prm, X), Y), pair(X, apply_P_top(c, prm, Y))
    assert abs(lhs - rhs) <= 1e-8 * abs(lhs)
    assert pair(apply_P_top(c, prm, X), X) > 0


def test_solve_top_inverts_apply_top(rng):
    grid, f = sphere_patch(14)
    c = build_geometry(f, grid)
    op = assemble(c, OperatorParams(1.0, 1))
    X = rng.normal(size=(*grid.shape, 2))
    X[~grid.interior] = 0
    back = op.solve_top(op.apply_top(X))
    assert np.abs(back - X)[grid.interior].max() < 1e-8


def test_horizontal_projection_examples(rng):
    grid = ParamGrid(12, 12)
    c = build_geometry(flat(grid), grid)
    U, V = grid.coords()
    h = np.zeros((*grid.shape, 3))
    h[..., 2] = np.sin(U) * np.sin(V)
    hor, ver = horizontal_projection(c, OperatorParams(), h)
    assert np.allclose(hor, h) and np.abs(ver).max() < 1e-12

    grid, f = sphere_patch(16, nv=18)
    c = build_geometry(f, grid)
    X = rng.normal(size=(*grid.shape, 2))
    X[~grid.interior] = 0
    hor, ver = horizontal_projection(c, OperatorParams(), tangent_push(c, X))
    assert np.abs(hor).max() < 1e-8
    assert np.allclose(ver, X, atol=1e-8)


@given(seed=st.integers(0, 2**31 - 1), p=st.integers(1, 3), A=st.floats(0.1, 5.0))
def test_horizontal_projection_properties(seed, p, A):
    rng = np.random.default_rng(seed)
    grid, f = sphere_patch(12, nv=14)
    c = build_geometry(f, grid)
    prm = OperatorParams(A, p)
    op = assemble(c, prm)
    h = rng.normal(size=f.shape)
    h[~grid.interior] = 0
    hor, ver = op.horizontal_projection(h)
    assert np.all(ver[~grid.interior] == 0)
    top, _ = split_tangent_normal(c, op.apply(hor))
    scale = np.linalg.norm(op.apply(h))
    assert np.linalg.norm(tangent_push(c, top)[grid.interior]) <= 1e-8 * scale
    X = rng.normal(size=(*grid.shape, 2))
    X[~grid.interior] = 0
    v = tangent_push(c, X)
    assert abs(op.inner(hor, v)) <= 1e-8 * np.sqrt(op.inner(hor, hor) * op.inner(v, v))
    hor2, _ = op.horizontal_projection(hor)
    assert np.linalg.norm(hor2 - hor) <= 1e-8 * np.linalg.norm(hor)


def _operator_surfaces():
    grid, f = sphere_patch(12, nv=15)
    tgrid = ParamGrid.periodic(14, 12)
    return [(grid, f), (tgrid, torus(tgrid))]


@given(seed=st.integers(0, 2**31 - 1), p=st.integers(1, 3), A=st.floats(0.0, 10.0))
def test_gp_symmetric_and_dominates_h0(seed, p, A):
    rng = np.random.default_rng(seed)
    prm = OperatorParams(A, p)
    for grid, f in _operator_surfaces():
        c = build_geometry(f, grid)
        h, k = rng.normal(size=(2, *f.shape))
        h[~grid.interior] = 0
        k[~grid.interior] = 0
        nh, nk = np.sqrt(h0_inner(c, h, h)), np.sqrt(h0_inner(c, k, k))
        assert abs(gp_inner(c, prm, h, k) - gp_inner(c, prm, k, h)) <= 1e-10 * nh * nk * max(1, A) * 10**p
        assert gp_inner(c, prm, h, h) >= h0_inner(c, h, h) * (1 - 1e-12)


@given(seed=st.integers(0, 2**31 - 1), A=st.floats(1.0, 10.0))
def test_h1_domination_for_p1(seed, A):
    rng = np.random.default_rng(seed)
    prm = OperatorParams(A, 1)
    for grid, f in _operator_surfaces():
        c = build_geometry(f, grid)
        h = rng.normal(size=f.shape)
        h[~grid.interior] = 0
        lhs = gp_inner(c, prm, h, h)
        rhs = h0_inner(c, h, h) + h0_inner(c, laplace_beltrami(c, h), h)
        assert lhs >= rhs * (1 - 1e-12)
