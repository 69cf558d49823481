"""Command-line harness: every experiment writes one CSV.

Exit codes: 0 success, 2 usage error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import os
import sys
import traceback

from . import __version__
from ._io import write_csv
from .hmatrix import BENCH_COLUMNS, benchmark, match_error
from .kernels import generate_points, get_kernel
from .lowrank import rank_study
from .octree import CENSUS_COLUMNS, VARIANTS, build_tree, census
from .parallel import NUM_WORKERS_ENV, PARALLEL_COLUMNS, parallel_bench
from .solver import solve_sweep

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
COMMANDS = ("census", "rank-study", "matvec-bench", "solve-ie", "parallel-bench")
KERNELS = ("laplace3d", "r4", "helmholtz-re")

DEFAULT_N = {
    "census": [4096],
    "rank-study": [64, 128, 256, 512, 1024, 2048],
    "matvec-bench": [4096, 8192, 16384],
    "parallel-bench": [32768],
}
DEFAULT_EPS = {"rank-study": 1e-14}


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser():
    p = argparse.ArgumentParser(
        prog="hodlr3d",
        description="Hierarchical low-rank kernel matrices: census, rank study, "
                    "matvec benchmark, integral-equation solve, parallel benchmark.",
    )
    p.add_argument("--cmd", required=True, choices=COMMANDS)
    p.add_argument("--kernel", default="laplace3d", choices=KERNELS)
    p.add_argument("--variant", default="hodlr3d", choices=VARIANTS + ("all",))
    p.add_argument("--N", type=_int_list, default=None,
                   help="point count, or comma-separated sweep")
    p.add_argument("--L", type=int, default=None,
                   help="census only: count blocks of a depth-L tree without points")
    p.add_argument("--nmax", type=int, default=216)
    p.add_argument("--eps", type=float, default=None,
                   help="ACA tolerance (default 1e-7; 1e-14 for rank-study)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--np", dest="n_p", type=_int_list, default=None,
                   help=f"worker counts (default 1,2,4,8 or ${NUM_WORKERS_ENV})")
    p.add_argument("--grid-n", type=_int_list, default=[8],
                   help="solve-ie grid sizes n (N = n^3)")
    p.add_argument("--match-error", type=float, default=None,
                   help="matvec-bench: tune eps per variant to this relative error")
    p.add_argument("--out", default="-", help="output CSV path, '-' for stdout")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _config(args):
    cfg = {k: v for k, v in vars(args).items()}
    for k, v in cfg.items():
        if isinstance(v, list):
            cfg[k] = ",".join(str(x) for x in v)
    return cfg


def _variants(args):
    return list(VARIANTS) if args.variant == "all" else [args.variant]


def run_census(args, out, cfg):
    rows = []
    columns = CENSUS_COLUMNS + ("N", "coverage", "coverage_ok")
    for v in _variants(args):
        if args.L is not None:
            c = census(args.L, v)
            for r in c.rows():
                rows.append({**r, "N": "", "coverage": "", "coverage_ok": ""})
            continue
        for n in args.N:
            pts = generate_points("uniform-random", n, args.seed).points
            c = census(build_tree(pts, args.nmax), v)
            for r in c.rows():
                rows.append({**r, "N": n, "coverage": c.coverage,
                             "coverage_ok": int(c.coverage == n * n)})
    write_csv(out, columns, rows, cfg)


def run_rank_study(args, out, cfg):
    res = rank_study(args.kernel, args.N, args.eps, args.seed)
    rows = list(res.rows())
    for c, s in res.slopes.items():
        rows.append({"kernel": res.kernel, "class": c, "N": "slope", "rank": s,
                     "epsilon": res.epsilon, "seed": res.seed})
    write_csv(out, ("kernel", "class", "N", "rank", "epsilon", "seed"), rows, cfg)


def run_matvec_bench(args, out, cfg):
    if args.match_error is not None:
        rows = []
        for n in args.N:
            pts = generate_points("uniform-random", n, args.seed).points
            rows += match_error(pts, args.kernel, _variants(args), args.match_error,
                                seed=args.seed, n_max=args.nmax)
        write_csv(out, BENCH_COLUMNS + ("matched",), rows, cfg)
        return
    benchmark(_variants(args), args.kernel, args.N, args.eps, args.seed, args.nmax,
              out=out, config=cfg)


def run_solve_ie(args, out, cfg):
    if get_kernel(args.kernel).name != "laplace3d":
        raise UsageError("solve-ie supports only --kernel laplace3d")
    solve_sweep(args.grid_n, _variants(args), args.eps, args.seed, args.nmax,
                out=out, config=cfg)


def run_parallel_bench(args, out, cfg):
    rows = []
    for v in _variants(args):
        for n in args.N:
            rows += [{**r, "variant": v} for r in parallel_bench(
                n, args.n_p, v, args.kernel, args.eps, args.seed, args.nmax)]
    write_csv(out, ("variant",) + PARALLEL_COLUMNS + ("rel_diff",), rows, cfg)


class UsageError(Exception):
    pass


RUNNERS = {
    "census": run_census,
    "rank-study": run_rank_study,
    "matvec-bench": run_matvec_bench,
    "solve-ie": run_solve_ie,
    "parallel-bench": run_parallel_bench,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.N is None:
        args.N = DEFAULT_N.get(args.cmd, [4096])
    if args.eps is None:
        args.eps = DEFAULT_EPS.get(args.cmd, 1e-7)
    if args.n_p is None:
        env = os.environ.get(NUM_WORKERS_ENV)
        args.n_p = _int_list(env) if env else [1, 2, 4, 8]
    bad = [n for n in args.N + args.n_p + args.grid_n if n < 1]
    if bad or args.nmax < 1 or args.eps <= 0 or (args.L is not None and args.L < 0):
        parser.print_usage(sys.stderr)
        print("hodlr3d: error: sizes, counts and eps must be positive", file=sys.stderr)
        return EXIT_USAGE
    cfg = _config(args)
    out = sys.stdout if args.out == "-" else args.out
    try:
        RUNNERS[args.cmd](args, out, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hodlr3d: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report any failure as exit 3
        print(f"hodlr3d: {type(exc).__name__}: {exc}", file=sys.stderr)
        if os.environ.get("HODLR3D_DEBUG"):
            traceback.print_exc()
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
