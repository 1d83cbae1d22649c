"""
pathweight command line.

    pathweight EXPERIMENT [--config FILE] [--seed N] [--k N] [--out PATH]
                          [--workers N] [--full] [--set key=value ...]

Exit status: 0 on success, 1 on a configuration or input problem, 2 on a numerical
failure (simulation blow-up, PDE breakdown, incomplete batch).
"""
import argparse
import logging
import sys
from typing import List, Optional

from config import LOG_LEVEL, OUTPUT_DIR, WORKERS
from models import ExperimentName
from observability import run_logger
from utils.errors import ConfigError, NumericalError, PathweightError, RejectedInputError
from utils.experiments import (
    build_config,
    load_config_file,
    parse_set_pairs,
    run_experiment,
    write_outputs,
)

# Set up logging
logging.basicConfig(level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
                    format="%(asctime)s %(levelname)s %(name)s: %(message)s")
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


class CliParser(argparse.ArgumentParser):
    """Usage errors raise ConfigError instead of printing and exiting 2"""

    def error(self, message: str):
        raise ConfigError(f"usage: {message}", {"usage": self.format_usage().strip()})


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(
        prog="pathweight",
        description="Importance-sampling relative-error experiments for diffusion path functionals",
    )
    parser.add_argument("experiment", help="one of: " + ", ".join(e.value for e in ExperimentName))
    parser.add_argument("--config", help="key = value file; '#' starts a comment")
    parser.add_argument("--seed", type=int, help="root seed")
    parser.add_argument("--k", type=int, help="paths per sweep value")
    parser.add_argument("--out", dest="output_path", default=None,
                        help=f"output directory, or a .csv file (default {OUTPUT_DIR})")
    parser.add_argument("--workers", type=int, default=None, help=f"thread count (default {WORKERS})")
    parser.add_argument("--full", action="store_true", default=None,
                        help="use the large FULL_K sample count unless --k is given")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config field; repeatable")
    return parser


def _error_line(exc: PathweightError) -> str:
    return f"ERROR[{exc.code}]: {exc.message}"


def cli_main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    except ConfigError as exc:
        run_logger.log_config_error(exc.message, exc.details)
        print(_error_line(exc), file=sys.stderr)
        print(exc.details["usage"], file=sys.stderr)
        return EXIT_CONFIG

    try:
        file_values = load_config_file(args.config) if args.config else {}
        flags = {
            "seed": args.seed,
            "k": args.k,
            "output_path": args.output_path or (None if "output_path" in file_values else OUTPUT_DIR),
            "workers": args.workers or (None if "workers" in file_values else WORKERS),
            "full": args.full,
        }
        config = build_config(args.experiment, file_values, flags, parse_set_pairs(args.overrides))
        result = run_experiment(config)
        csv_path, json_path = write_outputs(config, result)
    except (ConfigError, RejectedInputError) as exc:
        run_logger.log_config_error(exc.message, exc.details)
        print(_error_line(exc), file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        run_logger.log_numerical_error(type(exc).__name__, exc.message, exc.details)
        print(_error_line(exc), file=sys.stderr)
        return EXIT_NUMERICAL

    for row in result.rows:
        extras = " ".join(f"{name}={row.bound_values[name]:.6g}" for name in result.columns[3:])
        flag_text = f" [{','.join(row.flags)}]" if row.flags else ""
        print(f"{config.sweep}={row.swept_value:g} estimate={row.estimate:.6g} "
              f"stderr={row.stderr:.3g} {extras} ({row.wall_time_ms} ms){flag_text}")
    failed = [a.name for a in result.summary.assertions if not a.passed]
    if failed:
        print(f"assertions failed: {', '.join(failed)}")
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(cli_main())
