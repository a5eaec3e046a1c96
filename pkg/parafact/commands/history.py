"""
history: statistics over logged runs.
"""
import argparse
import logging
from typing import Tuple

from parafact.commands.common import EXIT_OK, add_run_options, key_values, new_report, table
from parafact.schemas import HistoryStatistics, RunReport
from parafact.services.db_service import db_service

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("history", help="statistics of previous runs")
    parser.add_argument("--days", type=int, default=7, help="time window in days")
    parser.add_argument("--last", type=int, default=10, help="number of recent runs to list")
    add_run_options(parser, sampling=False)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> Tuple[RunReport, str]:
    report = new_report("history", args)
    stats = HistoryStatistics(**db_service.get_statistics(args.days))
    recent = db_service.recent_runs(args.last)
    report.details["statistics"] = stats.model_dump()
    report.details["recent"] = [{**r, "created_at": str(r["created_at"])} for r in recent]
    report.exit_code = EXIT_OK

    by_command = [{"command": k, "runs": v} for k, v in sorted(stats.by_command.items())]
    by_exit = [{"exit_code": k, "runs": v} for k, v in sorted(stats.by_exit_code.items())]
    human = "\n\n".join([
        key_values({
            "runs": stats.total_runs,
            "days": stats.time_period_days,
            "average wall time (ms)": stats.average_wall_time_ms,
        }),
        table(by_command, ["command", "runs"]),
        table(by_exit, ["exit_code", "runs"]),
        table(recent, ["id", "command", "exit_code", "seed", "wall_time_ms", "inputs", "created_at"]),
    ])
    return report, human
