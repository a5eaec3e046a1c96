"""
Shared pieces of the subcommands: run options, input hashing, exit codes
and report rendering.
"""
import argparse
import hashlib
import json
import logging
import math
from typing import Any, Dict, Iterable, List, Mapping, Optional

import pandas as pd

from parafact.core.config import DEFAULT_PAIRS, DEFAULT_SAMPLES, DEFAULT_SEED, DEFAULT_TOL, SUBMERSION_TOL
from parafact.core.exceptions import InputError
from parafact.schemas import MorphismVerdict, RunReport, Verdict, VerdictStatus

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INCONCLUSIVE = 2
EXIT_INPUT = 3

_VERDICT_EXIT = {
    VerdictStatus.PASS: EXIT_OK,
    VerdictStatus.FAIL: EXIT_FAIL,
    VerdictStatus.INCONCLUSIVE: EXIT_INCONCLUSIVE,
    MorphismVerdict.ACCEPTED: EXIT_OK,
    MorphismVerdict.REJECTED: EXIT_FAIL,
    MorphismVerdict.INCONCLUSIVE: EXIT_INCONCLUSIVE,
}


def add_run_options(parser: argparse.ArgumentParser, sampling: bool = True):
    if sampling:
        parser.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="sample points per identity test")
        parser.add_argument("--tol", type=float, default=DEFAULT_TOL, help="relative tolerance")
        parser.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed of every sample sequence")
        parser.add_argument("--pairs", type=int, default=DEFAULT_PAIRS, help="fiber pairs per candidate")
    parser.add_argument("--json", metavar="PATH", help="write the JSON report to PATH ('-' for stdout)")


def options(args: argparse.Namespace) -> Dict[str, Any]:
    opts = {
        "samples": getattr(args, "samples", DEFAULT_SAMPLES),
        "tol": getattr(args, "tol", DEFAULT_TOL),
        "seed": getattr(args, "seed", DEFAULT_SEED),
        "pairs": getattr(args, "pairs", DEFAULT_PAIRS),
    }
    if opts["samples"] < 1 or opts["pairs"] < 1:
        raise InputError("--samples and --pairs must be positive")
    if not opts["tol"] > 0:
        raise InputError("--tol must be positive")
    return opts


def new_report(command: str, args: argparse.Namespace) -> RunReport:
    opts = options(args)
    return RunReport(command=command, seed=opts["seed"],
                     tolerances={"tol": opts["tol"], "submersion": SUBMERSION_TOL})


def file_digest(path: str) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(65536), b""):
                digest.update(chunk)
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}")
    return digest.hexdigest()


def record_inputs(report: RunReport, *paths: Optional[str]):
    for path in paths:
        if path:
            report.inputs[path] = file_digest(path)


def exit_code_for(status) -> int:
    return _VERDICT_EXIT[status]


def worst_exit(codes: Iterable[int]) -> int:
    """Fail outranks Inconclusive, which outranks Pass."""
    codes = list(codes)
    if EXIT_FAIL in codes:
        return EXIT_FAIL
    if EXIT_INCONCLUSIVE in codes:
        return EXIT_INCONCLUSIVE
    return max(codes, default=EXIT_OK)


def _number(value: float) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.3g}"


def table(rows: List[Mapping[str, Any]], columns: List[str]) -> str:
    """Fixed-column text table."""
    if not rows:
        return "(none)"
    frame = pd.DataFrame(rows, columns=columns)
    return frame.to_string(index=False, float_format=_number)


def verdict_rows(checks: Mapping[str, Verdict]) -> List[Dict[str, Any]]:
    return [
        {
            "check": key,
            "status": v.status.value,
            "max_residual": v.max_residual,
            "mean_residual": v.mean_residual,
            "samples": v.samples,
            "detail": (v.detail or "")[:60],
        }
        for key, v in checks.items()
    ]


VERDICT_COLUMNS = ["check", "status", "max_residual", "mean_residual", "samples", "detail"]


def witness_text(witness: Optional[List[Dict[str, float]]]) -> str:
    if not witness:
        return ""
    points = ["(" + ", ".join(f"{k}={v:.6g}" for k, v in point.items()) + ")" for point in witness]
    return " / ".join(points)


def key_values(pairs: Mapping[str, Any]) -> str:
    width = max((len(k) for k in pairs), default=0)
    return "\n".join(f"{k.ljust(width)} : {v}" for k, v in pairs.items())


def emit(report: RunReport, args: argparse.Namespace, human: str):
    """Human text to stdout, and the JSON report where --json asks for it."""
    target = getattr(args, "json", None)
    payload = report.model_dump_json(by_alias=True, indent=2)
    if target == "-":
        print(payload)
        return
    print(human)
    if target:
        with open(target, "w", encoding="utf-8") as f:
            f.write(payload + "\n")
        logger.info(f"report written to {target}")


def report_dict(report: RunReport) -> Dict[str, Any]:
    return json.loads(report.model_dump_json(by_alias=True))
