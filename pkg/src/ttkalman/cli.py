"""Command-line entry point ``ttkalman``."""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import replace

import numpy as np

from .experiments import ConfigError, fmt, load_config, run_convert_bench, run_volterra_ident
from .krp import RankPolicy, krp_to_tt, rowwise_kron_power
from .tt import contract_full

CONVERT_HEADER = ["rows", "cols", "power", "policy", "seed", "ranks", "residual", "seconds"]


def _log(msg):
    print(msg, file=sys.stderr)


def _load(args, expected):
    cfg = load_config(args.config)
    if cfg.experiment != expected:
        raise ConfigError(f"experiment: this command runs {expected!r}, config says {cfg.experiment!r}")
    if args.seed_override is not None:
        cfg = replace(cfg, seeds=[args.seed_override])
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def cmd_convert(args):
    policy = RankPolicy.parse(args.policy)
    U = np.random.default_rng(args.seed).standard_normal((args.rows, args.cols))
    t0 = time.perf_counter()
    net = krp_to_tt(U, args.power, policy)
    seconds = time.perf_counter() - t0
    residual = None
    if args.rows * args.cols ** args.power <= args.residual_budget:
        dense = rowwise_kron_power([U] * args.power)
        scale = np.linalg.norm(dense)
        diff = np.linalg.norm(contract_full(net, args.residual_budget)[0] - dense)
        residual = diff / scale if scale > 0 else diff
    w = csv.writer(sys.stdout, lineterminator="\n")
    if args.header:
        w.writerow(CONVERT_HEADER)
    w.writerow([fmt(v) for v in [args.rows, args.cols, args.power, str(policy), args.seed,
                                 net.ranks, residual, seconds]])


def cmd_convert_bench(args):
    cfg = _load(args, "convert-bench")
    path = run_convert_bench(cfg, log=None if args.quiet else _log)
    print(path)


def cmd_identify(args):
    cfg = _load(args, "volterra-ident")
    _, paths = run_volterra_ident(cfg, threads=args.threads, log=None if args.quiet else _log)
    for p in paths.values():
        print(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttkalman", description="Tensor-train Kalman filter experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert one seeded random row-wise Kronecker power; print a CSV row")
    p.add_argument("--rows", type=int, required=True, help="row count m")
    p.add_argument("--cols", type=int, required=True, help="column count n")
    p.add_argument("--power", type=int, required=True, help="number of factors d")
    p.add_argument("--policy", default="eps", help="rank policy: eps, rel:TAU or cap:R (default eps)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--header", action="store_true", help="print the column header first")
    p.add_argument("--residual-budget", type=int, default=20_000_000,
                   help="largest dense matrix (elements) formed for the residual; NA above it")
    p.set_defaults(func=cmd_convert)

    for name, func, text in (
        ("convert-bench", cmd_convert_bench, "conversion runtime benchmark"),
        ("identify", cmd_identify, "Volterra identification experiment"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed-override", type=int, help="replace the config's seed list by this seed")
        p.add_argument("--threads", type=int, default=1, help="parallel runs (default 1)")
        p.add_argument("--quiet", action="store_true", help="no progress messages on stderr")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    if args.command == "convert":
        if min(args.rows, args.cols) < 1 or args.power < 1:
            parser.error("--rows, --cols and --power must be >= 1")
        try:
            RankPolicy.parse(args.policy)
        except ValueError as e:
            parser.error(f"--policy: {e}")
    try:
        args.func(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"ttkalman: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
