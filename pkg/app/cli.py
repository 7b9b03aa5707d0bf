"""
Command-line entry point: `nonlocal-lab run --config FILE [--out DIR] [--strict]`
and `nonlocal-lab list`.

Exit codes: 0 all hard checks passed, 1 a hard check failed or a strict-mode
hypothesis audit failed, 2 the config could not be read or validated.
"""

import argparse
import sys
from typing import List, Optional

from app.config.logger import Logger
from app.lab.exceptions import ConfigError, HypothesisViolation, LabError
from app.services.experiment_registry import ExperimentRegistry
from app.services.experiment_runner import run_config_file

logger = Logger.get_logger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nonlocal-lab", description="Nonlocal parabolic equation lab")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run one experiment from a config file")
    run.add_argument("--config", required=True, help="YAML or JSON experiment config")
    run.add_argument("--out", default=None, help="Output directory (overrides the config and settings)")
    run.add_argument("--strict", action="store_true", default=None,
                     help="Fail the run when a hypothesis audit fails")

    commands.add_parser("list", help="List registered experiments")
    return parser


def list_experiments() -> int:
    for info in ExperimentRegistry.get_instance().listing():
        print(f"{info.id:<16}{info.group:<20}{info.description}")
    return EXIT_OK


def run(config: str, out: Optional[str], strict: Optional[bool]) -> int:
    try:
        manifest = run_config_file(config, out, strict)
    except ConfigError as e:
        print(f"config error: {e.message}", file=sys.stderr)
        return EXIT_USAGE
    except HypothesisViolation as e:
        print(f"hypothesis violation: {e.message} {e.details.get('flags', [])}", file=sys.stderr)
        return EXIT_FAILED
    except LabError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        return EXIT_FAILED
    failed = [name for name, passed in manifest.checks.items() if not passed]
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
    print(manifest.output_dir)
    return manifest.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    Logger.setup_root_logger(sys.stderr)
    if args.command == "list":
        return list_experiments()
    return run(args.config, args.out, args.strict)


if __name__ == "__main__":
    sys.exit(main())
