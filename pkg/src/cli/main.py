"""Batch command-line entry point: `python -m src.cli.main <command> --config run.json --out results/`."""
from pathlib import Path
from typing import List, Optional
import argparse
import json
import logging
import sys

import numpy as np
from pydantic import ValidationError

from src.cli.config import settings
from src.cli.service import ReceptorCapacityService, load_run_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

COMMANDS = {
    "capacity": "Optimize the i.i.d. input distribution and certify it",
    "sweep": "Run capacity over a grid of (N, beta, alpha(M) or M)",
    "simulate": "Simulate the channel and estimate the rate empirically",
    "diffusion": "Impulse coefficients, concentration trace and inversion",
    "reduce": "Shrink a distribution's support keeping chosen expectations",
}


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", type=Path, default=None, help="Output directory (default: settings.output_dir)")
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="receptor-capacity",
        description="Information rate and capacity of ligand-receptor molecular receivers",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", type=Path, required=True, help="Run configuration JSON")
        sub.add_argument("--seed", type=int, default=None, help="Overrides the config seed")
        sub.add_argument("--format", choices=["json", "csv"], default=None, help="Result format")
        sub.add_argument("--threads", type=int, default=None, help="Worker threads for multistarts")
        _add_common_flags(sub)

    schema = subparsers.add_parser("schema", help="Write the JSON schema of every run configuration")
    schema.add_argument("names", nargs="*", default=[], help="Restrict to these commands")
    _add_common_flags(schema)
    return parser


def _configure_logging(level: Optional[str]) -> None:
    level_name = (level or settings.log_level).upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.INFO), stream=sys.stderr)


def run(args: argparse.Namespace) -> int:
    out_dir = args.out if args.out is not None else Path(settings.output_dir)
    if args.command == "schema":
        service = ReceptorCapacityService()
        outcome = service.schema(out_dir, args.names)
        print(outcome["summary"])
        return EXIT_OK

    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise ValueError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
    if args.threads is not None and args.threads < 1:
        raise ValueError(f"--threads must be >= 1, got {args.threads}")

    config = load_run_config(args.command, args.config)
    service = ReceptorCapacityService(threads=args.threads, seed=args.seed)
    logger.info(f"Running {args.command} from {args.config} into {out_dir}")
    outcome = getattr(service, args.command)(
        config, out_dir, seed=args.seed, threads=args.threads, fmt=args.format
    )
    print(outcome["summary"])
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.log_level)
    try:
        return run(args)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e.error_count()} error(s)")
        print(f"config validation failed:\n{e}", file=sys.stderr)
        return EXIT_INVALID
    except np.linalg.LinAlgError as e:
        logger.error(f"Numerical failure: {e}")
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (json.JSONDecodeError, FileNotFoundError, ValueError) as e:
        logger.error(f"Invalid input: {e}")
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except RuntimeError as e:
        logger.error(f"Numerical failure: {e}")
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
