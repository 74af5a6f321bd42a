"""``phgd`` command line: run, bench, verify, plot-data.

Exit codes: 0 success, 1 verification or validation failure, 2 I/O error.
"""
import argparse
import sys
from pathlib import Path

from . import bench, config, verify
from .errors import ConfigError, IoError, PhgdError

EXIT_OK, EXIT_FAIL, EXIT_IO = 0, 1, 2


def _seed_list(text):
    try:
        seeds = [int(s) for s in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory (default ./out)")
    common.add_argument("--seeds", type=_seed_list, help="override the config's seeds, e.g. '0,1,2'")
    common.add_argument("--quiet", action="store_true", help="only print errors")
    common.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")

    parser = argparse.ArgumentParser(prog="phgd", description="Preconditioned hidden gradient descent experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="write one trajectory CSV per algorithm and seed")
    p.add_argument("config", type=Path)
    p = sub.add_parser("bench", parents=[common], help="percentile summary and rate fits across seeds")
    p.add_argument("config", type=Path)
    p = sub.add_parser("verify", parents=[common], help="run the invariant suites")
    p.add_argument("--full", action="store_true", help="full sample sizes and every check")
    p = sub.add_parser("plot-data", parents=[common], help="long-format CSV from trajectory CSVs")
    p.add_argument("inputs", type=Path, nargs="+")
    p.add_argument("-o", "--output", type=Path, required=True)
    return parser


def _load(args):
    try:
        cfg = config.load_config(args.config)
    except OSError as exc:
        raise IoError(f"cannot read config: {exc}") from None
    if args.seeds:
        cfg = config.with_seeds(cfg, args.seeds)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    say = (lambda *a: None) if args.quiet else print
    try:
        if args.command == "run":
            paths = bench.cmd_run(_load(args), args.out_dir, args.workers)
            say(f"wrote {len(paths)} trajectory files to {args.out_dir}")
        elif args.command == "bench":
            rows, fits = bench.cmd_bench(_load(args), args.out_dir, args.workers)
            for alg, fl in fits.items():
                for f in fl:
                    say(f"{alg:5s} {f.model:9s} slope {f.slope: .4e}  r2 {f.r_squared:.4f}  ({f.points} pts)")
            say(f"wrote summary.csv and rates.csv to {args.out_dir}")
        elif args.command == "verify":
            return verify.cmd_verify("full" if args.full else "quick", out=say)
        elif args.command == "plot-data":
            count = bench.cmd_plot_data(args.inputs, args.output)
            say(f"wrote {count} rows to {args.output}")
    except IoError as exc:
        print(f"phgd: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, PhgdError, ValueError) as exc:
        print(f"phgd: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
