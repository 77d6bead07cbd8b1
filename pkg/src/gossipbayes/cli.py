"""Command-line entry point.

Subcommands ``learn``, ``unlearn``, ``sweep-l`` write per-slot KL traces to
``--out`` and the median/75%-band table next to it (``<stem>.summary.csv``).
``cover-time`` writes the walk-statistics table to ``--out``.

Exit status: 0 on success, 2 on configuration errors, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments as exp
from .exceptions import ConfigError, NumericalError

log = logging.getLogger("gossipbayes")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _parser():
    parser = argparse.ArgumentParser(prog="gossipbayes", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("learn", "learning runs with KL to the global posterior"),
        ("unlearn", "unlearning versus retraining from scratch"),
        ("cover-time", "Monte-Carlo cover and hitting times of the MH walk"),
        ("sweep-l", "non-conjugate runs over several local-iteration counts"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="key=value configuration file")
        p.add_argument("--seed", type=int, help="base seed (overrides base_seed)")
        p.add_argument("--runs", type=int, help="number of seeded runs")
        p.add_argument("--out", metavar="PATH", help="output CSV path")
        p.add_argument("--topology", help="star, ring, complete or file:PATH")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(args):
    cfg = exp.load_config(args.config, base_seed=args.seed, runs=args.runs, out=args.out, topology=args.topology)
    log.info("%s: %s", args.command, cfg)
    if args.command == "cover-time":
        exp.write_cover_csv(cfg.out, exp.run_covertime(cfg))
        return
    if args.command == "learn":
        rows, arms = exp.run_experiment(cfg), {"": cfg.L}
    elif args.command == "unlearn":
        rows, arms = exp.run_unlearn_experiment(cfg), None
    else:
        rows, arms = exp.run_sweep(cfg), {f"L={L}": L for L in cfg.sweep_L}
    exp.write_trace_csv(cfg.out, rows)
    exp.write_summary_csv(exp.summary_path(cfg.out), exp.summarize(rows, arms))
    log.info("wrote %d rows to %s", len(rows), cfg.out)


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
