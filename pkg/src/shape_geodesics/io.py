"""Initial data ingestion (expressions, PGM images, arrays) and frame/diagnostics export."""

from __future__ import annotations

import csv
import logging
import os
from pathlib import Path

import numpy as np
import sympy
from scipy import ndimage

from .diagnostics import DiagnosticsRecord, trajectory_diagnostics
from .geometry import ParamGrid

log = logging.getLogger(__name__)


class ImageFormatError(OSError):
    """The file is not a readable PGM image."""


# -- PGM ---------------------------------------------------------------------


def _pgm_tokens(data: bytes, count: int):
    """First ``count`` header tokens and the offset just past the last one."""
    tokens, i, n = [], 0, len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        if i >= n:
            raise ImageFormatError("truncated PGM header")
        j = i
        while j < n and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
            j += 1
        tokens.append(data[i:j])
        i = j
    return tokens, i


def read_pgm(path) -> np.ndarray:
    """Read a P2 (ASCII) or P5 (binary) PGM; returns floats in ``[0, 1]``, shape ``(height, width)``."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read image {path}: {exc.strerror or exc}") from exc
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ImageFormatError(f"{path}: not a PGM image (magic {magic!r})")
    try:
        (w, h, maxval), off = _pgm_tokens(data[2:], 3)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PGM header") from exc
    if w <= 0 or h <= 0:
        raise ImageFormatError(f"{path}: zero-size image ({w}x{h})")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: invalid maxval {maxval}")
    body = data[2 + off :]
    if magic == b"P5":
        body = body[1:]  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = w * h * dtype.itemsize
        if len(body) < need:
            raise ImageFormatError(f"{path}: truncated pixel data")
        pix = np.frombuffer(body[:need], dtype=dtype).astype(float)
    else:
        try:
            pix = np.array([int(x) for x in body.split()[: w * h]], dtype=float)
        except ValueError as exc:
            raise ImageFormatError(f"{path}: malformed ASCII pixel data") from exc
        if pix.size < w * h:
            raise ImageFormatError(f"{path}: truncated pixel data")
    return np.clip(pix.reshape(h, w) / maxval, 0.0, 1.0)


def write_pgm(path, image: np.ndarray, binary=True):
    """Write an image with values in ``[0, 1]`` as an 8-bit PGM."""
    img = np.clip(np.rint(np.asarray(image, dtype=float) * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        if binary:
            fh.write(f"P5\n{w} {h}\n255\n".encode())
            fh.write(img.tobytes())
        else:
            fh.write(f"P2\n{w} {h}\n255\n".encode())
            for row in img:
                fh.write((" ".join(str(int(x)) for x in row) + "\n").encode())


def resample_to_grid(image: np.ndarray, grid: ParamGrid) -> np.ndarray:
    """Bilinear resample so that the picture is upright in the ``(u, v)`` plane.

    Image columns run along ``u``; image rows run along ``v`` from the top down.
    """
    h, w = image.shape
    su = np.linspace(0, w - 1, grid.nu)
    sv = np.linspace(h - 1, 0, grid.nv)
    cols, rows = np.meshgrid(su, sv, indexing="ij")
    return ndimage.map_coordinates(image, [rows, cols], order=1, mode="nearest")


def momentum_from_image(path, smoothing_sigma: float, grid: ParamGrid) -> np.ndarray:
    """Scalar momentum ``a0`` from a grayscale PGM: resample, normalize to ``[0, 1]``, blur, clear the boundary."""
    a = resample_to_grid(read_pgm(path), grid)
    top = a.max()
    if top > 0:
        a = a / top
    if smoothing_sigma > 0:
        mode = "wrap" if grid.is_periodic else "constant"
        a = ndimage.gaussian_filter(a, smoothing_sigma, mode=mode, cval=0.0, truncate=6.0)
    if not grid.is_periodic:
        a = a.copy()
        a[~grid.interior] = 0.0
    return a


def letter_a_image(size=128, stroke=0.09) -> np.ndarray:
    """A block capital letter A rasterized on a ``size x size`` image (white on black)."""
    y, x = np.mgrid[0:size, 0:size] / (size - 1)
    y = 1 - y  # upward

    def segment(x0, y0, x1, y1):
        d = np.array([x1 - x0, y1 - y0])
        t = np.clip(((x - x0) * d[0] + (y - y0) * d[1]) / d.dot(d), 0, 1)
        return np.hypot(x - x0 - t * d[0], y - y0 - t * d[1]) <= stroke / 2

    img = segment(0.2, 0.15, 0.5, 0.85) | segment(0.5, 0.85, 0.8, 0.15) | segment(0.33, 0.43, 0.67, 0.43)
    return img.astype(float)


# -- analytic fields -----------------------------------------------------------


def expression_field(expr: str, grid: ParamGrid) -> np.ndarray:
    """Evaluate a sympy expression in ``u`` and ``v`` on the grid nodes."""
    u, v = sympy.symbols("u v")
    try:
        parsed = sympy.sympify(expr, locals={"u": u, "v": v, "pi": sympy.pi})
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ValueError(f"cannot parse momentum expression {expr!r}") from exc
    extra = parsed.free_symbols - {u, v}
    if extra:
        raise ValueError(f"momentum expression uses unknown symbols {sorted(map(str, extra))}")
    fn = sympy.lambdify((u, v), parsed, "numpy")
    U, V = grid.coords()
    return np.broadcast_to(np.asarray(fn(U, V), dtype=float), grid.shape).copy()


def flat_square(grid: ParamGrid) -> np.ndarray:
    U, V = grid.coords()
    return np.stack([U, V, np.zeros_like(U)], axis=-1)


def load_immersion(path, grid: ParamGrid) -> np.ndarray:
    """Load an ``(nu, nv, 3)`` array saved with ``numpy.save``."""
    f = np.load(path)
    if f.shape != (*grid.shape, 3):
        raise ValueError(f"{path}: immersion shape {f.shape} does not match grid {(*grid.shape, 3)}")
    return f


# -- export --------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def mesh_faces(grid: ParamGrid) -> np.ndarray:
    """Triangles (0-based vertex indices) from splitting each grid quad; wraps on periodic grids."""
    nu, nv = grid.shape
    iu = np.arange(nu if grid.is_periodic else nu - 1)
    iv = np.arange(nv if grid.is_periodic else nv - 1)
    I, J = np.meshgrid(iu, iv, indexing="ij")
    I1, J1 = (I + 1) % nu, (J + 1) % nv
    a, b, c, d = I * nv + J, I1 * nv + J, I1 * nv + J1, I * nv + J1
    tri = np.stack([np.stack([a, b, c], -1), np.stack([a, c, d], -1)], axis=2)
    return tri.reshape(-1, 3)


def write_obj(path, grid: ParamGrid, f: np.ndarray):
    lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in f.reshape(-1, 3)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh_faces(grid)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_diagnostics_csv(path, records: list[DiagnosticsRecord]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DiagnosticsRecord.header())
        for rec in records:
            w.writerow([_fmt(x) for x in rec.row()])


def read_diagnostics_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    return {name: body[:, k] for k, name in enumerate(header)}


def export_frames(trajectory, directory, params=None, write_objs=True, write_csv=True, records=None) -> list[Path]:
    """Write ``frame_XXXX.obj`` per frame and ``diagnostics.csv``; returns the written paths."""
    directory = Path(directory)
    out = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        if write_objs:
            for k, fr in enumerate(trajectory.frames):
                p = directory / f"frame_{k:04d}.obj"
                write_obj(p, trajectory.grid, fr.f)
                out.append(p)
        if write_csv:
            recs = records if records is not None else trajectory_diagnostics(trajectory, params)
            p = directory / "diagnostics.csv"
            write_diagnostics_csv(p, recs)
            out.append(p)
    except OSError as exc:
        target = getattr(exc, "filename", None) or directory
        raise OSError(exc.errno, f"cannot write output: {exc.strerror or exc}", os.fspath(target)) from exc
    return out
