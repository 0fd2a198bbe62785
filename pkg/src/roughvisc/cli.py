"""Command-line front end: ``roughvisc run --config ...`` and ``roughvisc presets``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiments import PRESETS, ConfigError, resolve_config, run_experiment, validate_config

EXIT_OK, EXIT_FAIL, EXIT_SCHEMA, EXIT_ABORT = 0, 1, 2, 3

log = logging.getLogger("roughvisc")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roughvisc", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config", required=True, help="JSON file, inline JSON object, or preset:<name>")
    r.add_argument("--out", default="out", help="output directory (default: ./out)")
    r.add_argument("--seed", type=_u64, default=None, help="overrides the config seed")
    r.add_argument("--threads", type=int, default=None, help="recorded in the manifest; runs are single-threaded")
    r.add_argument("--check-only", action="store_true", help="validate the configuration and exit")
    sub.add_parser("presets", help="list the built-in presets")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    if args.command == "presets":
        for name in sorted(PRESETS):
            print(f"{name:24s} {PRESETS[name]['kind']}")
        return EXIT_OK
    try:
        cfg = resolve_config(args.config)
        validate_config(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    if args.check_only:
        print("config ok")
        return EXIT_OK
    try:
        man = run_experiment(cfg, args.out, seed=args.seed, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    for c in man.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} = {c.value:.6g} ({c.relation} {c.tolerance}; {c.oracle})")
    if man.status == "abort":
        print(f"numerical abort: {man.error}", file=sys.stderr)
        return EXIT_ABORT
    print(json.dumps({"status": man.status, "out": args.out}))
    return EXIT_OK if man.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
