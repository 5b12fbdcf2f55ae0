"""Command line entry point: ``metaband STAGE --config PATH [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import default_config, parse_config
from .errors import ConfigError
from .pipeline import EXIT_CONFIG, STAGES, run_pipeline


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metaband", description="Band structure of a two-rod metamaterial crystal.")
    p.add_argument("stage", choices=STAGES + ("all",), help="stage to run (dependencies run too)")
    p.add_argument("--config", help="configuration file (default: the reference two-disk cell)")
    p.add_argument("--out", help="output directory (overrides outputs.directory)")
    p.add_argument("--threads", type=int, default=1, help="workers for the band sweep")
    p.add_argument("--cache", help="mesh cache directory (default OUT/cache)")
    p.add_argument("--stage-timeout", type=float, default=None, help="per-stage time limit in seconds")
    p.add_argument("--quiet", action="store_true", help="log warnings and errors only")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(args.config) if args.config else default_config()
    except ConfigError as exc:
        logging.getLogger("metaband").error("configuration error: %s", exc)
        return EXIT_CONFIG
    if args.threads < 1:
        logging.getLogger("metaband").error("configuration error: --threads must be at least 1")
        return EXIT_CONFIG
    return run_pipeline(cfg, [args.stage], out_dir=args.out, cache_dir=args.cache, threads=args.threads,
                        stage_timeout=args.stage_timeout, quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
