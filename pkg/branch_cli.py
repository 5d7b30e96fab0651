#!/usr/bin/env python3
"""branch_cli.py — Command line entry point: ``branchlln run <config>``.

Exit codes: 0 success, 2 validation error (nothing simulated), 3 runtime
error, 4 population overflow in more than half of the replicas (results
are still written).
"""

import argparse
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

# Allow running as a plain script from the repo root
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from config import (
    EXIT_OK,
    EXIT_OVERFLOW,
    EXIT_RUNTIME,
    EXIT_VALIDATION,
    OUTPUT_DIR,
    OVERFLOW_EXIT_FRACTION,
    VERSION,
    WORKERS,
)
from core.errors import BranchError, ValidationError
from core.experiment import load_config, run_experiment
from core.results import emit
from core.utils import log_error, safe_filename

logger = logging.getLogger("branchlln")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="branchlln", description="Branching Markov processes with absorption")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one experiment from a config file")
    run.add_argument("config", help="Config file: flat 'key = value' lines or a JSON/JSON5 object")
    run.add_argument("-w", "--workers", type=int, default=None, help=f"Worker processes (default BRANCH_LLN_WORKERS={WORKERS})")
    run.add_argument("-s", "--seed", type=int, default=None, help="Override the config seed")
    run.add_argument("-o", "--out", default=None, help="Output stem; writes <stem>.csv and <stem>.json")
    run.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Log level")
    return parser


def default_stem(cfg) -> Path:
    return OUTPUT_DIR / safe_filename(f"{cfg.experiment}_{cfg.model}_{cfg.seed}")


def run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
    except ValidationError as e:
        logger.error("invalid config %s: %s", args.config, e)
        log_error(e, context="config", extra={"config": str(args.config)},
                  directory=Path(args.out).parent if args.out else None)
        return EXIT_VALIDATION

    stem = Path(args.out) if args.out else Path(cfg.output_path) if cfg.output_path else default_stem(cfg)
    workers = args.workers if args.workers is not None else WORKERS
    if workers < 1:
        logger.error("--workers must be >= 1, got %d", workers)
        return EXIT_VALIDATION

    started = time.perf_counter()
    try:
        result = run_experiment(cfg, workers=workers)
        emit(result, cfg.echo(), stem, wall_time=time.perf_counter() - started)
    except ValidationError as e:
        logger.error("invalid config %s: %s", args.config, e)
        log_error(e, context=f"validate:{cfg.experiment}", extra={"seed": cfg.seed}, directory=stem.parent)
        return EXIT_VALIDATION
    except BranchError as e:
        logger.error("%s failed: %s", cfg.experiment, e)
        log_error(e, context=f"run:{cfg.experiment}", extra={"seed": cfg.seed}, directory=stem.parent)
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception("%s failed unexpectedly", cfg.experiment)
        log_error(e, context=f"run:{cfg.experiment}", extra={"seed": cfg.seed, "unexpected": True},
                  directory=stem.parent)
        return EXIT_RUNTIME

    elapsed = time.perf_counter() - started
    print(f"{cfg.experiment}: {len(result.rows)} rows -> {stem}.csv, {stem}.json ({elapsed:.1f}s)")
    if result.n_rep and result.overflow_count > OVERFLOW_EXIT_FRACTION * result.n_rep:
        logger.error("%d/%d replicas overflowed max_population", result.overflow_count, result.n_rep)
        return EXIT_OVERFLOW
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(format="%(asctime)s %(name)s %(levelname)s %(message)s",
                        level=getattr(logging, args.log_level))
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
