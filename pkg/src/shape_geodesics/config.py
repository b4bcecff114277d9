"""Run configuration: ``key = value`` text files with line-numbered validation errors."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .geometry import DIRICHLET, PERIODIC

EXPERIMENTS = ("geodesic", "bump", "image", "spheres", "zigzag", "frechet-scaling", "selfx")
IMMERSIONS = ("flat_square", "torus", "from_file")


class ConfigError(ValueError):
    """All problems found in a configuration, each prefixed by its line number when known."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


def _floats(text):
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(x) for x in text.replace(",", " ").split())


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt_str(text):
    return text or None


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "geodesic"
    # grid
    nu: int = 100
    nv: int = 100
    boundary: str = DIRICHLET
    # operator and integrator
    A: float = 1.0
    p: int = 1
    dt: float = 0.05
    t_final: float = 5.0
    stride: int = 1
    integrator: str = "rk4"
    tol_lin: float = 1e-10
    # initial data
    immersion: str = "flat_square"
    immersion_file: str | None = None
    torus_R: float = 2.0
    torus_r: float = 0.8
    momentum: str = "sin(u)*sin(v)"
    momentum_image: str | None = None
    smoothing_sigma: float = 2.0
    momentum_scale: float = 1.0
    # outputs
    output_dir: str = "output"
    write_obj: bool = True
    write_csv: bool = True
    # experiment parameters
    sphere_n: int = 3
    sphere_r0: float = 1.0
    sphere_rdot0: float = -1.0
    sphere_dt: float = 1e-4
    sphere_t_final: float = 1.0
    zigzag_counts: tuple = (4, 8, 16, 32, 64)
    zigzag_nodes: int = 65
    frechet_distances: tuple = (1.0, 10.0)
    r_floor: float = 1e-3
    energy_tolerance: float = 0.005

    @property
    def is_periodic(self) -> bool:
        return self.boundary == PERIODIC


_PARSERS = {
    "experiment": str,
    "nu": int,
    "nv": int,
    "boundary": str,
    "A": float,
    "p": int,
    "dt": float,
    "t_final": float,
    "stride": int,
    "integrator": str,
    "tol_lin": float,
    "immersion": str,
    "immersion_file": _opt_str,
    "torus_R": float,
    "torus_r": float,
    "momentum": str,
    "momentum_image": _opt_str,
    "smoothing_sigma": float,
    "momentum_scale": float,
    "output_dir": str,
    "write_obj": _bool,
    "write_csv": _bool,
    "sphere_n": int,
    "sphere_r0": float,
    "sphere_rdot0": float,
    "sphere_dt": float,
    "sphere_t_final": float,
    "zigzag_counts": _ints,
    "zigzag_nodes": int,
    "frechet_distances": _floats,
    "r_floor": float,
    "energy_tolerance": float,
}
assert set(_PARSERS) == {f.name for f in fields(RunConfig)}

_TYPE_NAMES = {int: "an integer", float: "a number", _bool: "a boolean", _ints: "a list of integers", _floats: "a list of numbers"}


def _constraints(cfg: RunConfig):
    """Yield ``(key, message)`` for every violated precondition."""
    if cfg.experiment not in EXPERIMENTS:
        yield "experiment", f"experiment must be one of {', '.join(EXPERIMENTS)}"
    if cfg.nu < 3:
        yield "nu", "nu must be >= 3"
    if cfg.nv < 3:
        yield "nv", "nv must be >= 3"
    if cfg.boundary not in (DIRICHLET, PERIODIC):
        yield "boundary", f"boundary must be {DIRICHLET} or {PERIODIC}"
    if not (cfg.A >= 0 and math.isfinite(cfg.A)):
        yield "A", "A must be >= 0"
    if cfg.p < 1:
        yield "p", "p must be >= 1"
    if not cfg.dt > 0:
        yield "dt", "dt must be > 0"
    if not cfg.t_final >= 0:
        yield "t_final", "t_final must be >= 0"
    if cfg.stride < 1:
        yield "stride", "stride must be >= 1"
    if cfg.integrator not in ("rk4", "explicit_euler"):
        yield "integrator", "integrator must be rk4 or explicit_euler"
    if not cfg.tol_lin > 0:
        yield "tol_lin", "tol_lin must be > 0"
    if cfg.immersion not in IMMERSIONS:
        yield "immersion", f"immersion must be one of {', '.join(IMMERSIONS)}"
    if cfg.immersion == "flat_square" and cfg.boundary != DIRICHLET:
        yield "immersion", "flat_square requires boundary = dirichlet_zero"
    if cfg.immersion == "torus" and cfg.boundary != PERIODIC:
        yield "immersion", "torus requires boundary = periodic"
    if cfg.immersion == "from_file" and not cfg.immersion_file:
        yield "immersion_file", "immersion = from_file needs immersion_file"
    if not (0 < cfg.torus_r < cfg.torus_R):
        yield "torus_r", "torus radii must satisfy 0 < torus_r < torus_R"
    if cfg.smoothing_sigma < 0:
        yield "smoothing_sigma", "smoothing_sigma must be >= 0"
    if cfg.sphere_n < 2:
        yield "sphere_n", "sphere_n must be >= 2"
    if not cfg.sphere_r0 > 0:
        yield "sphere_r0", "sphere_r0 must be > 0"
    if not cfg.sphere_dt > 0:
        yield "sphere_dt", "sphere_dt must be > 0"
    if not cfg.zigzag_counts or min(cfg.zigzag_counts) < 1:
        yield "zigzag_counts", "zigzag_counts must be positive integers"
    if cfg.zigzag_nodes < 3:
        yield "zigzag_nodes", "zigzag_nodes must be >= 3"
    if not cfg.frechet_distances or min(cfg.frechet_distances) < 0:
        yield "frechet_distances", "frechet_distances must be non-negative"
    if not 0 < cfg.r_floor <= 1:
        yield "r_floor", "r_floor must lie in (0, 1]"
    if not cfg.energy_tolerance > 0:
        yield "energy_tolerance", "energy_tolerance must be > 0"


def _apply(pairs, base: RunConfig | None = None) -> RunConfig:
    """``pairs`` are ``(lineno_or_label, key, raw_value)``; collects every error before raising."""
    errors, values, where = [], {}, {}
    for loc, key, raw in pairs:
        prefix = f"{loc}: " if loc is not None else ""
        if key not in _PARSERS:
            errors.append(f"{prefix}unknown key {key!r}")
            continue
        if key in where:
            errors.append(f"{prefix}duplicate key {key!r} (first set on {where[key]}, again on {loc})")
            continue
        where[key] = loc
        parser = _PARSERS[key]
        try:
            values[key] = parser(raw)
        except ValueError:
            errors.append(f"{prefix}{key} must be {_TYPE_NAMES.get(parser, 'valid')}, got {raw!r}")
    cfg = replace(base or RunConfig(), **values)
    for key, msg in _constraints(cfg):
        loc = where.get(key)
        errors.append(f"{loc}: {msg}" if loc is not None else msg)
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Raises :class:`ConfigError` listing all problems."""
    pairs, errors = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        pairs.append((f"line {lineno}", key, value))
    try:
        cfg = _apply(pairs, base)
    except ConfigError as exc:
        raise ConfigError(errors + exc.errors) from None
    if errors:
        raise ConfigError(errors)
    return cfg


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``key=value`` strings (command-line ``--set``) on top of ``cfg``."""
    pairs, errors = [], []
    for item in overrides:
        if "=" not in item:
            errors.append(f"--set {item!r}: expected key=value")
            continue
        key, value = (s.strip() for s in item.split("=", 1))
        pairs.append((f"--set {key}", key, value))
    if errors:
        raise ConfigError(errors)
    return _apply(pairs, cfg)


def config_defaults_for(experiment: str) -> RunConfig:
    """Defaults per experiment; ``frechet-scaling`` uses a torus, the others the flat square."""
    cfg = RunConfig(experiment=experiment, output_dir=f"output/{experiment}")
    if experiment == "bump":
        cfg = replace(cfg, stride=5)
    if experiment == "image":
        cfg = replace(cfg, nu=80, nv=80, t_final=2.0, stride=5)
    elif experiment == "selfx":
        cfg = replace(cfg, nu=60, nv=60, A=0.1, momentum_scale=4.0, t_final=1.5, stride=5)
    elif experiment == "frechet-scaling":
        cfg = replace(cfg, boundary=PERIODIC, immersion="torus", nu=64, nv=64)
    return cfg


def field_names():
    return [f.name for f in fields(RunConfig)]


__all__ = ["RunConfig", "ConfigError", "parse_config", "apply_overrides", "config_defaults_for", "EXPERIMENTS"]
