"""Command-line entry point ``vpcl``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort,
4 failed checks (``run --check``), 1 other I/O failures.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 1, 2, 3, 4


def build_parser():
    parser = argparse.ArgumentParser(prog="vpcl", description="N-body versus mean-field laboratory")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment configuration file")
    common.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")
    common.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--threads", type=int, default=None, help="worker threads for force loops")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="parse the config and check the density")
    sub.add_parser("sample", parents=[common], help="write initial ensembles as snapshots")
    run = sub.add_parser("run", parents=[common], help="run the configured experiment")
    run.add_argument("--check", action="store_true", help="exit 4 when an acceptance check fails")
    sub.add_parser("taxonomy", parents=[common], help="classify particles and write label files")
    sub.add_parser("stats", parents=[common], help="print per-N medians from an existing stats.csv")
    sub.add_parser("plotdata", parents=[common], help="write plotdata.csv from summary.json")
    return parser


def _setup_threads(n):
    # must happen before numba is imported anywhere
    if n is not None:
        if n < 1:
            raise ValueError("--threads must be >= 1")
        os.environ["NUMBA_NUM_THREADS"] = str(n)


def _say(msg):
    print(msg, file=sys.stderr, flush=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _setup_threads(args.threads)
    except ValueError as exc:
        _say(f"error: {exc}")
        return EXIT_CONFIG

    from .config import load_config, serialize
    from .errors import ConfigError, NumericalAbort

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for e in exc.errors:
            _say(f"config error: {e}")
        return EXIT_CONFIG
    except OSError as exc:
        _say(f"error: {exc}")
        return EXIT_CONFIG

    from . import runner

    if args.threads is not None:
        from ._jit import set_threads
        set_threads(args.threads)

    try:
        return _dispatch(args, cfg, runner, serialize)
    except ConfigError as exc:
        for e in exc.errors:
            _say(f"config error: {e}")
        return EXIT_CONFIG
    except NumericalAbort as exc:
        _say(f"numerical abort: {exc}")
        return EXIT_NUMERICAL
    except FileExistsError as exc:
        _say(f"refusing: {exc}")
        return EXIT_IO
    except OSError as exc:
        _say(f"I/O error: {exc}")
        return EXIT_IO


def _dispatch(args, cfg, runner, serialize):
    cmd = args.command
    offset = args.seed_offset
    if cmd == "validate" or args.dry_run:
        from .ensemble import validate_horst
        report = validate_horst(cfg.density(), moment_samples=10_000)
        print(serialize(cfg))
        for c in report.conditions:
            print(f"# density condition {c.name}: {'pass' if c.passed else 'FAIL'} ({c.detail})")
        if args.dry_run:
            print("# plan (dry run, nothing written)")
            for line in runner.plan(cfg, offset).splitlines():
                print(f"#   {line}")
        return EXIT_OK

    out_dir = runner.resolve_output(cfg)
    if cmd == "run":
        res, out = runner.run_experiment(cfg, offset, force=args.force, progress=_say)
        for name, c in sorted(res.checks.items()):
            print(f"{'PASS' if c['passed'] else 'FAIL'} {name}: value={c['value']} limit={c['limit']}")
        print(f"outputs written to {out}")
        return EXIT_CHECK if args.check and not res.passed else EXIT_OK
    if cmd == "sample":
        out = runner.prepare_output(cfg, args.force)
        for path in runner.write_samples(cfg, out, offset):
            print(path)
        return EXIT_OK
    if cmd == "taxonomy":
        out = runner.prepare_output(cfg, args.force)
        for path in runner.write_taxonomy(cfg, out, offset):
            print(path)
        return EXIT_OK
    if cmd == "stats":
        return _print_stats(out_dir / "stats.csv")
    if cmd == "plotdata":
        summary_path = out_dir / "summary.json"
        summary = json.loads(summary_path.read_text()) if summary_path.exists() else {}
        target = out_dir / "plotdata.csv"
        if target.exists() and not args.force:
            raise FileExistsError(f"{target} exists (use --force to overwrite)")
        out_dir.mkdir(parents=True, exist_ok=True)
        target.write_text(runner.emit_plotdata(summary))
        print(target)
        return EXIT_OK
    raise AssertionError(cmd)


def _print_stats(path: Path):
    import csv
    from collections import defaultdict

    import numpy as np

    groups = defaultdict(list)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["seed"]:
                groups[(row["experiment"], int(row["N"]), row["statistic"])].append(float(row["value"]))
    print("experiment,N,statistic,seeds,median")
    for (exp, n, stat), vals in sorted(groups.items()):
        print(f"{exp},{n},{stat},{len(vals)},{float(np.median(vals))!r}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
