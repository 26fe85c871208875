"""
Command-line entry point for attnlab
"""

import argparse
import logging
import sys
from typing import List, Optional

from attnlab import __version__
from attnlab.cli import (
    commands_cost,
    commands_diagnose,
    commands_equiv,
    commands_eval,
    commands_maps,
    commands_train,
)
from attnlab.core.config import settings
from attnlab.core.errors import AttnLabError, UsageError
from attnlab.core.logging import setup_logging

logger = logging.getLogger(__name__)

COMMANDS = (commands_train, commands_eval, commands_diagnose, commands_cost, commands_equiv, commands_maps)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting"""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> CliParser:
    parser = CliParser(prog="attnlab",
                       description="Attention variants: training, evaluation, diagnostics and cost tables")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level")
    parser.add_argument("--log-file", metavar="PATH", help="Also write the log to this file")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=CliParser)
    subparsers.required = True
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse argv, run the subcommand and return its exit code.

    0 success, 1 usage/config/data errors, 2 numerical failures.
    """

    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except SystemExit as e:
        # --help and --version
        return int(e.code or 0)

    setup_logging(args.log_level, args.log_file)
    try:
        return args.handler(args)
    except AttnLabError as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
