"""Command line entry point: trapescape <subcommand> [--config ...]."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError
from .harness import DEFAULTS, run

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trapescape", description="Moving traps, directed interlacements and checks.")
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in DEFAULTS:
        p = sub.add_parser(kind)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--replicas", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def assemble(args) -> dict:
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        if cfg.get("kind", args.kind) != args.kind:
            raise ConfigError(f"config is for {cfg['kind']!r}, not {args.kind!r}", "/kind")
    cfg["kind"] = args.kind
    for k in ("seed", "replicas", "jobs", "out"):
        v = getattr(args, k)
        if v is not None:
            cfg[k] = v
    cfg.setdefault("seed", 0)
    cfg.setdefault("replicas", 1)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        summary = run(assemble(args))
    except (ConfigError, ValueError, OSError, MemoryError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for name, ok in summary.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"elapsed {summary.elapsed:.2f}s", file=sys.stderr)
    return EXIT_OK if summary.passed else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
