"""Command-line entry point ``wsiuq``.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..errors import WsiuqError
from .config import default_config, load_config
from .evaluate import evaluate_run
from .pipeline import prepare_data, write_data, write_manifest
from .suites import loo_runs, measure_report, noise_suite, rank_runs, slide_suite

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _global_flags(default=None):
    # subcommands repeat the flags with SUPPRESS so they do not reset values given earlier
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=default,
                   help="experiment JSON file (defaults are used when omitted)")
    p.add_argument("--seed", type=int, default=default, help="run seed (overrides the config)")
    p.add_argument("--out", default=default, help="output root directory (overrides the config)")
    p.add_argument("--jobs", type=int, default=default,
                   help="parallel trial workers (overrides the config)")
    return p


def build_parser():
    parent = _global_flags(argparse.SUPPRESS)
    parser = _Parser(prog="wsiuq", description=__doc__.splitlines()[0], parents=[_global_flags()])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.add_parser("generate", parents=[parent], help="write the synthetic dataset and split")
    sub.add_parser("run", parents=[parent], help="train every method and trial, write predictions")
    ev = sub.add_parser("evaluate", parents=[parent], help="write reports for a run")
    ev.add_argument("--run", help="run directory (default: the one derived from the config)")
    ev.add_argument("--predictions", help="directory of external prediction CSVs")
    sub.add_parser("noise-suite", parents=[parent], help="compare label-noise training variants")
    rk = sub.add_parser("rank", parents=[parent], help="rank methods over leave-one-out runs")
    rk.add_argument("--runs", nargs="+", help="evaluated leave-one-out run directories")
    cm = sub.add_parser("compare-measures", parents=[parent],
                        help="AUARC per uncertainty measure for a run")
    cm.add_argument("--run", help="run directory (default: the one derived from the config)")
    sub.add_parser("slide-suite", parents=[parent], help="slide-level MIL and top-q experiment")
    return parser


def _config(args):
    overrides = {"seed": args.seed, "out": args.out, "jobs": args.jobs}
    if args.config:
        return load_config(args.config, overrides)
    return default_config(**{k: v for k, v in overrides.items() if v is not None})


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def dispatch(args):
    cfg = _config(args)
    cmd = args.command
    if cmd == "generate":
        run_dir = cfg.run_dir()
        paths = write_data(cfg, prepare_data(cfg), run_dir)
        write_manifest(run_dir)
        _print({"run_dir": str(run_dir), "files": [str(p) for p in paths]})
    elif cmd == "run":
        from .pipeline import run
        _print({"run_dir": str(run(cfg))})
    elif cmd == "evaluate":
        if args.predictions:
            run_dir = Path(args.run) if args.run else Path(cfg.out) / "external"
            report = evaluate_run(run_dir, cfg.evaluation, pred_dir=args.predictions)
        else:
            run_dir = Path(args.run) if args.run else cfg.run_dir()
            if not (run_dir / "predictions").is_dir():
                raise UsageError(f"no predictions under {run_dir}; run `wsiuq run` first")
            report = evaluate_run(run_dir)
        _print({"run_dir": str(run_dir), "methods": report["methods"],
                "partitions": report["partitions"]})
    elif cmd == "noise-suite":
        out_dir, _ = noise_suite(cfg)
        _print({"suite_dir": str(out_dir)})
    elif cmd == "rank":
        dirs = args.runs if args.runs else loo_runs(cfg)
        out_dir = Path(cfg.out) / f"rank-{cfg.run_hash()}"
        rank_runs(dirs, out_dir)
        _print({"rank_dir": str(out_dir)})
    elif cmd == "compare-measures":
        run_dir = Path(args.run) if args.run else cfg.run_dir()
        rows, notes = measure_report(run_dir)
        _print({"rows": rows, "notes": notes})
    elif cmd == "slide-suite":
        out_dir, _ = slide_suite(cfg)
        _print({"suite_dir": str(out_dir)})


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("wsiuq: error: a subcommand is required")
        dispatch(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (WsiuqError, OSError) as exc:
        print(f"wsiuq: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
