"""Command line entry point: ``shape-geodesics run <config>`` and ``shape-geodesics experiment <name>``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from .analytic import QuadratureError, SphereCollapseError
from .config import EXPERIMENTS, ConfigError, apply_overrides, config_defaults_for, parse_config
from .experiments import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, run_experiment
from .geometry import DegenerateImmersionError
from .operator import LinearSolveError

THREADS_ENV = "SHAPE_GEODESICS_THREADS"
log = logging.getLogger("shape_geodesics")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shape-geodesics", description="Geodesics of Sobolev-type metrics on surfaces.")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the pipeline described by a config file")
    run.add_argument("config", help="path to a key = value configuration file")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config entry")

    exp = sub.add_parser("experiment", help="run a named experiment with its defaults")
    exp.add_argument("name", choices=[e for e in EXPERIMENTS if e != "geodesic"])
    exp.add_argument("--config", help="optional config file applied before --set overrides")
    exp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config entry")
    return ap


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError([f"{THREADS_ENV} must be a positive integer, got {raw!r}"]) from None
    return threadpool_limits(limits=n)


def _load(args):
    if args.command == "run":
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError([f"{args.config}: not valid UTF-8"]) from exc
        cfg = parse_config(text)
        return apply_overrides(cfg, args.set)
    cfg = config_defaults_for(args.name)
    if args.config:
        cfg = parse_config(Path(args.config).read_text(encoding="utf-8"), base=cfg)
    return replace(apply_overrides(cfg, args.set), experiment=args.name)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            cfg = _load(args)
            res = run_experiment(cfg.experiment, cfg)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateImmersionError, LinearSolveError, SphereCollapseError, QuadratureError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:  # bad expressions, mismatched immersion files
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"I/O error: {exc.strerror or exc}{where}", file=sys.stderr)
        return EXIT_IO
    print(res.report())
    return res.status if res.status in (EXIT_OK, EXIT_NUMERICAL) else EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
