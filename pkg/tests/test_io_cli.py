import csv
import filecmp

import numpy as np
import pytest

from conftest import flat
from shape_geodesics.cli import main
from shape_geodesics.config import ConfigError, RunConfig, apply_overrides, config_defaults_for, parse_config
from shape_geodesics.diagnostics import trajectory_diagnostics
from shape_geodesics.geodesics import SolverConfig, Trajectory, integrate_horizontal_geodesic
from shape_geodesics.geometry import ParamGrid
from shape_geodesics.io import (
    ImageFormatError,
    expression_field,
    export_frames,
    letter_a_image,
    mesh_faces,
    momentum_from_image,
    read_diagnostics_csv,
    read_pgm,
    write_pgm,
)
from shape_geodesics.operator import OperatorParams

# -- configuration -------------------------------------------------------------


def test_minimal_config_gets_defaults():
    cfg = parse_config("# nothing but a comment\n\n")
    assert (cfg.A, cfg.p, cfg.nu, cfg.nv, cfg.dt, cfg.t_final) == (1.0, 1, 100, 100, 0.05, 5.0)
    assert cfg == RunConfig()


def test_config_values_and_comments():
    cfg = parse_config("A = 0.5  # weaker\np=2\nzigzag_counts = 2, 4\nwrite_obj = false\nboundary = periodic\nimmersion = torus\n")
    assert cfg.A == 0.5 and cfg.p == 2 and cfg.zigzag_counts == (2, 4)
    assert not cfg.write_obj and cfg.is_periodic


def test_config_reports_all_errors_with_lines():
    with pytest.raises(ConfigError) as info:
        parse_config("p = 0\nbogus = 1\ndt = fast\nA = 1\nA = 2\n")
    msgs = info.value.errors
    assert any("line 1" in m and "p" in m and "1" in m for m in msgs)
    assert any("line 2" in m and "bogus" in m for m in msgs)
    assert any("line 3" in m and "dt" in m for m in msgs)
    assert any("duplicate" in m and "line 4" in m and "line 5" in m for m in msgs)
    assert len(msgs) == 4


def test_constraint_error_names_p():
    with pytest.raises(ConfigError) as info:
        parse_config("p = 0")
    assert any("p" in m and ">= 1" in m.replace("≥", ">=") for m in info.value.errors)


def test_overrides():
    cfg = apply_overrides(config_defaults_for("bump"), ["A=2", "nu = 10"])
    assert cfg.A == 2.0 and cfg.nu == 10 and cfg.stride == 5
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["A"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["dt=-1"])


# -- images --------------------------------------------------------------------


def test_pgm_round_trip(tmp_path):
    img = np.linspace(0, 1, 12).reshape(3, 4)
    for binary in (True, False):
        p = tmp_path / f"x{binary}.pgm"
        write_pgm(p, img, binary=binary)
        assert np.allclose(read_pgm(p), img, atol=1 / 255)


def test_pgm_sixteen_bit_and_comments(tmp_path):
    p = tmp_path / "deep.pgm"
    pix = np.array([[0, 1000], [65535, 30000]], dtype=">u2")
    p.write_bytes(b"P5\n# a comment\n2 2\n65535\n" + pix.tobytes())
    assert np.allclose(read_pgm(p), pix / 65535)


def test_pgm_errors(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(ImageFormatError):
        read_pgm(bad)
    empty = tmp_path / "empty.pgm"
    empty.write_bytes(b"P5\n0 4\n255\n")
    with pytest.raises(ImageFormatError):
        read_pgm(empty)
    short = tmp_path / "short.pgm"
    short.write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(ImageFormatError):
        read_pgm(short)
    with pytest.raises(OSError):
        read_pgm(tmp_path / "missing.pgm")


def test_all_black_image_gives_zero(tmp_path):
    p = tmp_path / "black.pgm"
    write_pgm(p, np.zeros((20, 30)))
    assert np.all(momentum_from_image(p, 3.0, ParamGrid(25, 25)) == 0)


def test_single_pixel_mass_preserved(tmp_path):
    img = np.zeros((101, 101))
    img[50, 50] = 1.0
    p = tmp_path / "dot.pgm"
    write_pgm(p, img)
    a = momentum_from_image(p, 5.0, ParamGrid(101, 101))
    assert a.sum() == pytest.approx(1.0, rel=0.01)
    assert np.unravel_index(np.argmax(a), a.shape) == (50, 50)
    # Gaussian profile: value ratio one sigma out is exp(-1/2)
    assert a[55, 50] / a[50, 50] == pytest.approx(np.exp(-0.5), rel=0.02)


def test_checkerboard_averages_to_half(tmp_path):
    img = (np.indices((64, 64)).sum(0) % 2).astype(float)
    p = tmp_path / "check.pgm"
    write_pgm(p, img)
    a = momentum_from_image(p, 8.0, ParamGrid.periodic(64, 64))
    assert np.abs(a - 0.5).max() < 1e-3
    a = momentum_from_image(p, 4.0, ParamGrid(64, 64))
    assert np.all(a[0] == 0) and np.all(a[:, -1] == 0)
    assert np.abs(a[24:40, 24:40] - 0.5).max() < 1e-3


def test_letter_a_is_upright():
    img = letter_a_image(64)
    # apex at the top middle, legs spread at the bottom
    assert img[5:15, 28:36].any() and not img[5:15, :10].any()
    assert img[-12, :20].any() and img[-12, -20:].any()


def test_expression_field():
    grid = ParamGrid(9, 9)
    U, V = grid.coords()
    assert np.allclose(expression_field("sin(u)*sin(v)", grid), np.sin(U) * np.sin(V))
    assert np.allclose(expression_field("2", grid), 2.0)
    with pytest.raises(ValueError):
        expression_field("sin(w)", grid)
    with pytest.raises(ValueError):
        expression_field("sin(", grid)


# -- export --------------------------------------------------------------------


def test_mesh_counts():
    assert mesh_faces(ParamGrid(5, 7)).shape == (2 * 4 * 6, 3)
    assert mesh_faces(ParamGrid.periodic(5, 7)).shape == (2 * 5 * 7, 3)
    assert mesh_faces(ParamGrid(4, 4)).max() == 15


def test_constant_trajectory_export(tmp_path):
    grid = ParamGrid(6, 5)
    f = flat(grid)
    tr = Trajectory.from_positions(grid, OperatorParams(), [0.0, 1.0], [f, f])
    paths = export_frames(tr, tmp_path)
    objs = sorted(tmp_path.glob("frame_*.obj"))
    assert len(objs) == 2 and filecmp.cmp(objs[0], objs[1], shallow=False)
    lines = objs[0].read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == 30
    assert sum(l.startswith("f ") for l in lines) == 2 * 5 * 4
    with open(tmp_path / "diagnostics.csv") as fh:
        assert len(list(csv.reader(fh))) == 3
    assert len(paths) == 3


def test_export_round_trips_exactly(tmp_path):
    grid = ParamGrid(10, 10)
    U, V = grid.coords()
    tr = integrate_horizontal_geodesic(grid, flat(grid), np.sin(U) * np.sin(V), SolverConfig(dt=0.1, t_final=0.3))
    recs = trajectory_diagnostics(tr)
    export_frames(tr, tmp_path, records=recs)
    back = read_diagnostics_csv(tmp_path / "diagnostics.csv")
    assert np.array_equal(back["energy"], [r.energy for r in recs])
    verts = np.array([l.split()[1:] for l in (tmp_path / "frame_0003.obj").read_text().splitlines() if l.startswith("v ")], float)
    assert np.array_equal(verts, tr.frames[3].f.reshape(-1, 3))


def test_export_error_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    grid = ParamGrid(4, 4)
    tr = Trajectory.from_positions(grid, OperatorParams(), [0.0], [flat(grid)])
    with pytest.raises(OSError) as info:
        export_frames(tr, blocker / "sub")
    assert "file" in str(info.value.filename)


# -- command line --------------------------------------------------------------


def _write(path, text):
    path.write_text(text)
    return str(path)


def _small_geodesic(tmp_path, out="out", extra=""):
    return _write(
        tmp_path / "run.conf",
        f"nu = 16\nnv = 16\nt_final = 0.5\ndt = 0.05\noutput_dir = {tmp_path / out}\n{extra}",
    )


def test_cli_run_is_deterministic(tmp_path, capsys):
    assert main(["run", _small_geodesic(tmp_path, "a")]) == 0
    assert main(["run", _small_geodesic(tmp_path, "b")]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    names = sorted(p.name for p in a.iterdir() if p.suffix in (".obj", ".csv"))
    assert len(names) == 12
    for name in names:
        assert filecmp.cmp(a / name, b / name, shallow=False), name
    assert "PASS energy_drift" in capsys.readouterr().out


def test_cli_config_error_exit(tmp_path, capsys):
    assert main(["run", _write(tmp_path / "bad.conf", "p = 0\nnu = x\n")]) == 2
    err = capsys.readouterr().err
    assert "line 1" in err and "line 2" in err
    assert main(["experiment", "zigzag", "--set", "unknown=1"]) == 2


def test_cli_io_error_exit(tmp_path):
    assert main(["run", str(tmp_path / "missing.conf")]) == 4
    cfg = _small_geodesic(tmp_path, extra=f"momentum_image = {tmp_path / 'nope.pgm'}\n")
    assert main(["run", cfg]) == 4


def test_cli_numerical_failure_exit(tmp_path):
    text = f"nu = 16\nnv = 16\nA = 0.05\nmomentum_scale = 40\nt_final = 5\ndt = 0.02\noutput_dir = {tmp_path / 'out'}\n"
    assert main(["run", _write(tmp_path / "blowup.conf", text)]) == 3
    assert (tmp_path / "out" / "diagnostics.csv").exists()


def test_cli_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SHAPE_GEODESICS_THREADS", "zero")
    assert main(["run", _small_geodesic(tmp_path)]) == 2
    monkeypatch.setenv("SHAPE_GEODESICS_THREADS", "1")
    assert main(["run", _small_geodesic(tmp_path)]) == 0


def test_cli_spheres_complete_for_p2(tmp_path, capsys):
    assert main(["experiment", "spheres", "--set", "p=2", "--set", f"output_dir={tmp_path}"]) == 0
    out = capsys.readouterr().out
    assert "verdict: complete" in out
    assert (tmp_path / "sphere_lengths.csv").exists()


def test_cli_zigzag_table(tmp_path, capsys):
    assert main(["experiment", "zigzag", "--set", f"output_dir={tmp_path}"]) == 0
    with open(tmp_path / "zigzag.csv") as fh:
        rows = list(csv.reader(fh))[1:]
    L = [float(r[1]) for r in rows]
    assert [int(r[0]) for r in rows] == [4, 8, 16, 32, 64]
    assert all(b < a for a, b in zip(L, L[1:]))


def test_cli_frechet_small(tmp_path):
    args = ["experiment", "frechet-scaling", "--set", "nu=24", "--set", "nv=24", "--set", f"output_dir={tmp_path}"]
    assert main(args) == 0
    assert (tmp_path / "frechet.csv").exists()


def test_cli_rejects_unknown_experiment():
    with pytest.raises(SystemExit) as info:
        main(["experiment", "nosuch"])
    assert info.value.code == 2
