"""
Command-line entry point.

Reports go to stdout, logs to stderr. Exit codes: 0 Pass/Accepted,
1 Fail/Rejected, 2 Inconclusive, 3 input error.
"""
import argparse
import logging
import sys
import time
from typing import List, Optional, Tuple

from pythonjsonlogger import jsonlogger

from parafact.commands import COMMANDS
from parafact.commands.common import EXIT_INPUT, emit, report_dict
from parafact.core.config import APP_NAME, DEBUG, LOG_JSON, RUN_LOG_ENABLED
from parafact.core.exceptions import InputError, ParafactError
from parafact.schemas import RunReport
from parafact.services.db_service import db_service

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Options whose values may start with a minus sign, e.g. --omega -50,50
SIGNED_OPTIONS = ("--omega", "--a", "--u0", "--t0", "--u0-hint")

logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors are input errors (exit 3), not argparse's exit 2."""

    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def configure_logging(json_logs: bool = LOG_JSON, debug: bool = DEBUG):
    handler = logging.StreamHandler(sys.stderr)
    if json_logs:
        handler.setFormatter(jsonlogger.JsonFormatter(LOG_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.basicConfig(level=logging.DEBUG if debug else logging.INFO, handlers=[handler], force=True)


def attach_signed_values(argv: List[str]) -> List[str]:
    """Rewrite `--omega -50,50` as `--omega=-50,50`."""
    out = []
    i = 0
    while i < len(argv):
        token = argv[i]
        value = argv[i + 1] if i + 1 < len(argv) else None
        if (token in SIGNED_OPTIONS and value is not None and value.startswith("-")
                and value != "-" and not value.startswith("--")):
            out.append(f"{token}={value}")
            i += 2
            continue
        out.append(token)
        i += 1
    return out


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog=APP_NAME, description="Morphisms, quotients and canonical forms "
                                                       "of second-order parabolic equations")
    parser.add_argument("--log-json", action="store_true", help="JSON log records on stderr")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def _log_run(report: RunReport):
    if not RUN_LOG_ENABLED or report.command == "history":
        return
    try:
        db_service.log_run(
            command=report.command,
            inputs=report.inputs,
            report=report_dict(report),
            exit_code=report.exit_code,
            seed=report.seed,
            wall_time_ms=report.wall_time_ms
        )
    except Exception as e:
        logger.warning(f"run not logged: {e}")


def execute(argv: List[str], log_run: bool = True) -> Tuple[int, Optional[RunReport]]:
    """Run one command line; returns the exit code and the report (None on errors)."""
    start_time = time.time()
    try:
        args = build_parser().parse_args(attach_signed_values(argv))
        report, human = args.handler(args)
    except ParafactError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code, None
    except Exception as e:
        logger.error(f"unexpected error: {e}")
        logger.debug("traceback", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT, None

    report.wall_time_ms = round((time.time() - start_time) * 1000, 2)
    emit(report, args, human)
    logger.info(f"{report.command}: exit {report.exit_code} in {report.wall_time_ms:.0f} ms")
    if log_run:
        _log_run(report)
    return report.exit_code, report


def main(argv: Optional[List[str]] = None):
    argv = sys.argv[1:] if argv is None else argv
    configure_logging(json_logs=LOG_JSON or "--log-json" in argv)
    code, _ = execute(argv)
    sys.exit(code)


if __name__ == "__main__":
    main()
