"""Command line: geowalk <kind> --config <path> [--seed N] [--out-dir D] [--threads T] [--svg]."""
from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, GeowalkError, InvalidMeasure, PresentationError
from .experiments import KINDS, load_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geowalk", description="Geometry and random-walk experiments on finitely presented groups.")
    ap.add_argument("kind", help=f"one of: {', '.join(KINDS)}")
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--out-dir", default=None, help="output directory (default: config out_dir or ./out)")
    ap.add_argument("--threads", type=int, default=None, help="worker processes; results do not depend on it")
    ap.add_argument("--svg", action="store_true", default=None, help="also write SVG plots where available")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, kind=args.kind, seed=args.seed, out_dir=args.out_dir,
                          threads=args.threads, svg=args.svg)
    except (ConfigError, PresentationError, InvalidMeasure) as e:
        print(f"geowalk: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        man = run_experiment(cfg)
    except (ConfigError, PresentationError, InvalidMeasure) as e:
        print(f"geowalk {cfg.kind}: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except GeowalkError as e:
        print(f"geowalk {cfg.kind}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_COMPUTE
    names = ", ".join(a["name"] for a in man.artifacts)
    print(f"geowalk {cfg.kind}: wrote {names}, manifest.json to {cfg.out_dir} in {man.wall_time:.2f}s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
