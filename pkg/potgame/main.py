"""
potgame Command-Line Entry Point

Subcommands: certify, solve, bench, check-derivatives. Exit codes follow the
error hierarchy: 0 success, 2 input error, 3 certification failure, 4 solver failure.
"""

import argparse
import sys
from typing import Optional, Sequence

from potgame.cli import bench, certify, derivatives, solve
from potgame.config import settings
from potgame.errors import EXIT_INPUT_ERROR, PotGameError
from potgame.utils.logger import get_logger

logger = get_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="potgame",
        description="Weighted constrained potential dynamic games",
    )
    parser.add_argument(
        "--version", action="version", version=f"{settings.APP_NAME} {settings.APP_VERSION}"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in (certify, solve, bench, derivatives):
        command.register(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors and 0 on --help
        return int(exc.code or 0)

    logger.debug("cli_command", command=args.command, environment=settings.ENVIRONMENT)
    try:
        return int(args.handler(args))
    except PotGameError as exc:
        logger.error(
            "cli_command_failed",
            command=args.command,
            error_type=type(exc).__name__,
            exit_code=exc.exit_code,
            **exc.detail,
        )
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        logger.error("cli_invalid_input", command=args.command, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
