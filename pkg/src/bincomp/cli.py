"""Command-line front end.

Exit codes: 0 success, 1 usage or input error, 2 algorithmic failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from .errors import BinCompError, ParseError
from .experiments import (
    DEFAULT_ALPHAS,
    METHODS,
    SETUPS,
    SWEEP_APPROX,
    TABLE_FIELDS,
    ExperimentConfig,
    config_dict,
    gen_methylation_like,
    noise_grid,
    rank_sweep,
    run_noise_sweep,
    summarize,
    vertex_count_study,
    write_table,
)
from .factorization import (
    ApproxConfig,
    factorize_approximate,
    factorize_exact,
    factorize_three_way,
)
from .io import RunManifest, ensure_dir, read_matrix, write_json, write_matrix
from .vertices import DEFAULT_CAP, DEFAULT_TOL_BINARY, PRUNING_MODES, find_vertices_affine, find_vertices_span

log = logging.getLogger("bincomp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _rank(text):
    if text == "auto":
        return text
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"rank must be an integer or 'auto', got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("rank must be positive")
    return value


def _levels(text):
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must look like 'lo,hi', got {text!r}") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError("levels need lo < hi")
    return (lo, hi)


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return value


def _nonneg(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("expected a nonnegative integer")
    return value


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--threads", type=_positive, default=None,
                        help="worker processes (default: $BINCOMP_THREADS or all cores)")
    common.add_argument("--no-timings", action="store_true",
                        help="leave manifest timings empty")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="bincomp", description="Matrix factorization with a binary left factor.")
    parser.add_argument("--version", action="version", version=f"bincomp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fv = sub.add_parser("find-vertices", parents=[common],
                        help="binary vectors in the affine hull or span of the columns")
    fv.add_argument("input")
    fv.add_argument("--mode", choices=("affine", "span"), default="affine")
    fv.add_argument("--rank", type=_rank, default="auto")
    fv.add_argument("--tol", type=float, default=DEFAULT_TOL_BINARY)
    fv.add_argument("--pruning", choices=PRUNING_MODES, default="incremental")
    fv.add_argument("--cap", type=_positive, default=DEFAULT_CAP)

    fz = sub.add_parser("factorize", parents=[common], help="factorize D = T A")
    fz.add_argument("input")
    fz.add_argument("--mode", default="approx",
                    choices=("exact-affine", "exact-linear", "exact-simplex", "three-way", "approx"))
    fz.add_argument("--rank", type=_rank, default="auto")
    fz.add_argument("--tol", type=float, default=DEFAULT_TOL_BINARY)
    fz.add_argument("--pruning", choices=PRUNING_MODES, default="incremental")
    fz.add_argument("--restarts", type=_positive, default=1)
    fz.add_argument("--refine", choices=("none", "best-fit", "backward-elim"), default="best-fit")
    fz.add_argument("--polish-iters", type=_nonneg, default=0)
    fz.add_argument("--levels", type=_levels, default=(0.0, 1.0))
    fz.add_argument("--a-constraint", choices=("free", "simplex"), default="free")
    fz.add_argument("--seed", type=int, default=0)

    bench = sub.add_parser("bench", help="synthetic benchmarks")
    bsub = bench.add_subparsers(dest="bench_command", required=True, parser_class=_Parser)

    sw = bsub.add_parser("sweep", parents=[common], help="noise sweep over synthetic setups")
    sw.add_argument("--setups", default="T05",
                    help=f"comma-separated subset of {','.join(SETUPS)}")
    sw.add_argument("--m", type=_positive, default=1000)
    sw.add_argument("--r", type=_positive, default=10)
    sw.add_argument("--n", type=_positive, default=None, help="default 2r")
    sw.add_argument("--alphas", type=_float_list, default=list(DEFAULT_ALPHAS))
    sw.add_argument("--trials", type=_positive, default=20)
    sw.add_argument("--methods", default=",".join(METHODS))
    sw.add_argument("--seed", type=int, default=0)

    vc = bsub.add_parser("vertex-count", parents=[common], help="vertex counts of random binary T")
    vc.add_argument("--m", type=_positive, default=500)
    vc.add_argument("--r-list", type=_int_list, default=[8])
    vc.add_argument("--p-grid", type=_float_list, default=[0.1, 0.3, 0.5, 0.7, 0.9])
    vc.add_argument("--trials", type=_positive, default=20)
    vc.add_argument("--seed", type=int, default=0)
    vc.add_argument("--pruning", choices=PRUNING_MODES, default="incremental")

    rs = bsub.add_parser("rank-sweep", parents=[common], help="fit error as a function of r")
    rs.add_argument("input", nargs="?", help="data matrix (default: synthetic methylation-like data)")
    rs.add_argument("--r-min", type=_positive, default=2)
    rs.add_argument("--r-max", type=_positive, default=8)
    rs.add_argument("--levels", type=_levels, default=(0.1, 0.9))
    rs.add_argument("--a-constraint", choices=("free", "simplex"), default="simplex")
    rs.add_argument("--restarts", type=_positive, default=5)
    rs.add_argument("--refine", choices=("none", "best-fit", "backward-elim"), default="backward-elim")
    rs.add_argument("--polish-iters", type=_nonneg, default=10)
    rs.add_argument("--seed", type=int, default=0)
    return parser


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("BINCOMP_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"BINCOMP_THREADS must be a positive integer, got {env!r}") from None
        if value < 1:
            raise UsageError("BINCOMP_THREADS must be a positive integer")
        return value
    return os.cpu_count() or 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _config_echo(args):
    skip = {"out", "verbose", "no_timings", "threads"}
    return {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in skip}


def _cmd_find_vertices(args, ctx):
    D = read_matrix(args.input)
    finder = find_vertices_affine if args.mode == "affine" else find_vertices_span
    V = finder(D, args.rank, args.tol, args.pruning, args.cap)
    # one vertex per row
    ctx.write_matrix(V.vertices.T, "vertices.csv")
    ctx.metrics = {"vertex_count": len(V), "codes": V.codes.tolist(), "m": D.shape[0], "n": D.shape[1]}


def _approx_config(args, r):
    return ApproxConfig(
        r=r,
        restarts_s=args.restarts,
        refine=args.refine.replace("-", "_"),
        polish_block_iters=args.polish_iters,
        binary_levels=args.levels,
        seed=args.seed,
        a_constraint=args.a_constraint,
    )


def _cmd_factorize(args, ctx):
    D = read_matrix(args.input)
    mode = args.mode
    if mode.startswith("exact-"):
        if args.rank != "auto":
            raise UsageError("exact modes infer the rank; omit --rank")
        model = factorize_exact(D, mode[len("exact-"):], args.tol, args.pruning)
    elif mode == "three-way":
        model = factorize_three_way(D, args.rank, args.tol, args.pruning)
    else:
        if args.rank == "auto":
            raise UsageError("--mode approx needs an explicit --rank")
        model = factorize_approximate(D, _approx_config(args, args.rank))

    ctx.write_matrix(model.T, "T.csv")
    ctx.write_matrix(model.A, "A.csv")
    if model.W is not None:
        ctx.write_matrix(model.W, "W.csv")
    m, n = D.shape
    ctx.metrics = {
        "mode": mode,
        "r": model.r,
        "residual": model.residual_fro,
        "rmse": model.residual_fro / math.sqrt(m * n),
        "levels": list(model.levels),
        "a_constraint": model.a_constraint,
        "diagnostics": _jsonable(model.diagnostics),
    }


def _cmd_sweep(args, ctx):
    setups = [s for s in args.setups.split(",") if s]
    bad = set(setups) - set(SETUPS)
    if bad:
        raise UsageError(f"unknown setups {sorted(bad)}")
    methods = [s for s in args.methods.split(",") if s]
    if set(methods) - set(METHODS):
        raise UsageError(f"methods must be drawn from {','.join(METHODS)}")
    if any(a < 0 for a in args.alphas):
        raise UsageError("noise levels must be nonnegative")
    n = args.n or 2 * args.r
    configs = []
    for setup in setups:
        try:
            base = ExperimentConfig(setup, args.m, args.r, n, 0.0, 0.5, args.trials, args.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        configs.extend(noise_grid(base, args.alphas))
    rows = run_noise_sweep(configs, methods, None, SWEEP_APPROX, ctx.threads)
    ctx.write_table(rows, "table.csv", TABLE_FIELDS)
    ctx.metrics = {
        "mean_hamming": [
            {"setup": k[0], "alpha": k[1], "method": k[2], "value": v}
            for k, v in summarize(rows).items()
        ],
        "failed_rows": sum(1 for row in rows if row["status"] != "ok"),
        "findvertices_config": dict(SWEEP_APPROX),
        "base_config": config_dict(configs[0]) if configs else {},
    }


def _cmd_vertex_count(args, ctx):
    if any(not 0 < p < 1 for p in args.p_grid):
        raise UsageError("p values must lie in (0, 1)")
    if any(r < 1 for r in args.r_list):
        raise UsageError("ranks must be positive")
    rows = vertex_count_study(args.m, args.r_list, args.p_grid, args.trials, args.seed,
                              pruning=args.pruning)
    ctx.write_table(rows, "table.csv", ("m", "r", "p", "trials", "max_count", "status"))
    ctx.metrics = {"cells": len(rows)}


def _cmd_rank_sweep(args, ctx):
    if args.r_min < 2 or args.r_max < args.r_min:
        raise UsageError("need 2 <= --r-min <= --r-max")
    if args.input:
        D = read_matrix(args.input)
    else:
        D = gen_methylation_like(seed=args.seed)[0]
        ctx.write_matrix(D, "D.csv")
    rows = rank_sweep(D, args.r_min, args.r_max, _approx_config(args, args.r_min))
    ctx.write_table(rows, "table.csv", ("r", "rmse", "status"))
    ctx.metrics = {"rmse": {str(row["r"]): row["rmse"] for row in rows}}


COMMANDS = {
    "find-vertices": _cmd_find_vertices,
    "factorize": _cmd_factorize,
    "sweep": _cmd_sweep,
    "vertex-count": _cmd_vertex_count,
    "rank-sweep": _cmd_rank_sweep,
}


class _Context:
    """Collects outputs; nothing touches the output directory until the command succeeds."""

    def __init__(self, out, threads):
        self.out = out
        self.threads = threads
        self.pending = []
        self.metrics = {}

    def write_matrix(self, M, name):
        self.pending.append((name, lambda path, M=M: write_matrix(M, path)))

    def write_table(self, rows, name, fields):
        self.pending.append((name, lambda path: write_table(rows, path, fields)))

    def flush(self):
        ensure_dir(self.out)
        names = []
        for name, writer in self.pending:
            writer(os.path.join(self.out, name))
            names.append(name)
        return names


def _versions():
    return {
        "bincomp": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        threads = _threads(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    name = args.bench_command if args.command == "bench" else args.command
    ctx = _Context(args.out, threads)
    start = time.perf_counter()
    try:
        COMMANDS[name](args, ctx)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, OSError) as exc:
        print(f"bincomp: cannot read input: {exc}", file=sys.stderr)
        return 1
    except BinCompError as exc:
        print(f"bincomp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    elapsed = time.perf_counter() - start

    outputs = ctx.flush() + ["metrics.json", "manifest.json"]
    write_json(_jsonable(ctx.metrics), os.path.join(args.out, "metrics.json"))
    command = f"bench {name}" if args.command == "bench" else name
    manifest = RunManifest(
        command=command,
        inputs=[args.input] if getattr(args, "input", None) else [],
        outputs=outputs,
        config=_config_echo(args),
        versions=_versions(),
        timings={} if args.no_timings else {"wall_seconds": elapsed},
    )
    manifest.write(os.path.join(args.out, "manifest.json"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
