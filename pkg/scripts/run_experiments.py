"""Run every named experiment through the CLI and summarize exit statuses.

    python3 scripts/run_experiments.py [--quick] [--out output] [names...]

``--quick`` shrinks grids and horizons so the full set finishes in about a minute.
"""

import argparse
import sys
import time

from shape_geodesics.cli import main as cli_main

ALL = ("bump", "image", "selfx", "spheres", "zigzag", "frechet-scaling")
QUICK = {
    "bump": ["nu=40", "nv=40", "t_final=1"],
    "image": ["nu=40", "nv=40", "t_final=1"],
    "selfx": ["nu=40", "nv=40", "t_final=1"],
    "frechet-scaling": ["nu=32", "nv=32"],
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", default=list(ALL))
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--out", default="output")
    args = ap.parse_args(argv)
    summary = []
    for name in args.names:
        sets = [f"output_dir={args.out}/{name}"] + (QUICK.get(name, []) if args.quick else [])
        argv_cli = ["experiment", name]
        for s in sets:
            argv_cli += ["--set", s]
        t0 = time.perf_counter()
        code = cli_main(argv_cli)
        summary.append((name, code, time.perf_counter() - t0))
    print()
    for name, code, secs in summary:
        print(f"{name:16s} exit {code}  {secs:7.1f} s")
    return max(code for _, code, _ in summary)


if __name__ == "__main__":
    sys.exit(main())
