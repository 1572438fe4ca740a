"""Command-line front end.

Subcommands: run, validate, replay, plot, bench.  Exit codes: 0 on success,
2 on configuration errors, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .gp import GPFitError
from .harness import (
    ConfigError,
    config_from_dict,
    config_to_dict,
    load_config,
    load_record,
    replay,
    run_bench,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

logger = logging.getLogger("fedbbo")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedbbo",
        description="Collaborative black-box optimization simulator",
    )
    parser.add_argument("--quiet", action="store_true", help="only warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from a config file")
    run_p.add_argument("config", help="YAML experiment config")
    run_p.add_argument("--seed", type=int, default=None, help="override the config seed")
    run_p.add_argument("--out", default=None, help="override the output directory")
    run_p.add_argument("--threads", type=int, default=None, help="worker threads (or FEDBBO_THREADS)")

    val_p = sub.add_parser("validate", help="validate a config file")
    val_p.add_argument("config")

    rep_p = sub.add_parser("replay", help="recompute regret from a run record and verify it")
    rep_p.add_argument("runrecord", help="run directory or events.jsonl")

    plot_p = sub.add_parser("plot", help="plot regret and privacy cost for run records")
    plot_p.add_argument("runrecord", nargs="+")
    plot_p.add_argument("--out", default="fedbbo_plot.svg")

    bench_p = sub.add_parser("bench", help="run a frameworks x heterogeneity comparison grid")
    bench_p.add_argument("suite", help="YAML suite file")
    bench_p.add_argument("--out", default="bench_out")
    bench_p.add_argument("--threads", type=int, default=None)
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    raw = config_to_dict(cfg)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out_dir"] = args.out
    if raw.get("out_dir") is None:
        raw["out_dir"] = str(Path("runs") / f"run_{raw['framework']}_seed{raw['seed']}")
    cfg = config_from_dict(raw)
    record = run_experiment(cfg, threads=args.threads)
    logger.info("run complete in %.2fs; wrote %s", record.wall_clock, record.out_dir)
    final = ", ".join(f"{v:.4g}" for v in record.final_regret)
    print(f"final simple regret per agent: [{final}]")
    print(f"run record: {record.out_dir}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    load_config(args.config)
    print(f"{args.config}: OK")
    return EXIT_OK


def _cmd_replay(args) -> int:
    record = replay(args.runrecord)
    print(f"{args.runrecord}: replay verified ({record.regret.shape[0]} rounds, "
          f"{record.regret.shape[1]} agents)")
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plotting import plot_records

    records = [load_record(p) for p in args.runrecord]
    out = plot_records(records, args.out)
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    with open(args.suite) as fh:
        suite = yaml.safe_load(fh)
    if not isinstance(suite, dict):
        raise ConfigError(["suite: must be a mapping"])
    rows = run_bench(suite, args.out, threads=args.threads)
    medians: dict[tuple, list[float]] = {}
    for row in rows:
        medians.setdefault((row["framework"], row["heterogeneity"]), []).append(row["final_regret"])
    print(f"{'framework':<18} {'heterogeneity':>13} {'median final regret':>20}")
    for (fw, h), vals in sorted(medians.items()):
        print(f"{fw:<18} {h:>13.3g} {float(np.median(vals)):>20.6g}")
    print(f"summary table: {Path(args.out) / 'bench_summary.csv'}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handler = {
        "run": _cmd_run,
        "validate": _cmd_validate,
        "replay": _cmd_replay,
        "plot": _cmd_plot,
        "bench": _cmd_bench,
    }[args.command]
    try:
        return handler(args)
    except ConfigError as e:
        for line in e.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except yaml.YAMLError as e:
        print(f"config error: invalid YAML: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (GPFitError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        # replay mismatches and malformed records
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
