"""
examples: run the shipped corpus against the exit codes in its manifest.
"""
import argparse
import contextlib
import io
import json
import logging
import os
import time
from typing import Any, Dict, List, Tuple

from parafact.commands.common import EXIT_FAIL, EXIT_OK, add_run_options, new_report, table
from parafact.core.config import CORPUS_DIR
from parafact.core.exceptions import InputError
from parafact.schemas import RunReport

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("examples", help="list or run the example corpus")
    parser.add_argument("--corpus", default=CORPUS_DIR, help="corpus directory with manifest.json")
    actions = parser.add_subparsers(dest="action", required=True)
    listing = actions.add_parser("list", help="list manifest entries")
    add_run_options(listing, sampling=False)
    one = actions.add_parser("run", help="run one entry")
    one.add_argument("name")
    add_run_options(one, sampling=False)
    everything = actions.add_parser("run-all", help="run every entry")
    add_run_options(everything, sampling=False)
    parser.set_defaults(handler=run)


def load_manifest(corpus: str) -> List[Dict[str, Any]]:
    path = os.path.join(corpus, "manifest.json")
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}")
    except json.JSONDecodeError as e:
        raise InputError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")
    entries = manifest.get("examples", [])
    for entry in entries:
        missing = {"name", "args", "expected_exit"} - set(entry)
        if missing:
            raise InputError(f"{path}: entry {entry.get('name', '?')} lacks {', '.join(sorted(missing))}")
    return entries


def run_entry(entry: Dict[str, Any], corpus: str) -> Dict[str, Any]:
    """Run one manifest entry in-process; its report output is captured."""
    from parafact.main import execute

    argv = [a.replace("{corpus}", corpus) for a in entry["args"]]
    start = time.time()
    buffer = io.StringIO()
    with contextlib.redirect_stdout(buffer):
        code, _ = execute(argv, log_run=False)
    elapsed = (time.time() - start) * 1000
    ok = code == entry["expected_exit"]
    if not ok:
        logger.warning(f"example {entry['name']}: exit {code}, expected {entry['expected_exit']}")
    return {
        "name": entry["name"],
        "command": entry["args"][0],
        "expected": entry["expected_exit"],
        "exit": code,
        "result": "ok" if ok else "MISMATCH",
        "wall_time_ms": round(elapsed, 1),
        "output": buffer.getvalue(),
    }


COLUMNS = ["name", "command", "expected", "exit", "result", "wall_time_ms"]


def run(args: argparse.Namespace) -> Tuple[RunReport, str]:
    report = new_report("examples", args)
    entries = load_manifest(args.corpus)

    if args.action == "list":
        rows = [{"name": e["name"], "command": " ".join(e["args"]), "expected": e["expected_exit"],
                 "description": e.get("description", "")} for e in entries]
        report.details["examples"] = [e["name"] for e in entries]
        return report, table(rows, ["name", "command", "expected", "description"])

    if args.action == "run":
        chosen = [e for e in entries if e["name"] == args.name]
        if not chosen:
            raise InputError(f"no example named {args.name!r}")
    else:
        chosen = entries

    results = [run_entry(entry, args.corpus) for entry in chosen]
    report.verdicts = {r["name"]: r["result"] for r in results}
    report.details["results"] = [{k: v for k, v in r.items() if k != "output"} for r in results]
    report.exit_code = EXIT_OK if all(r["result"] == "ok" for r in results) else EXIT_FAIL
    human = table(results, COLUMNS)
    if args.action == "run":
        human = results[0]["output"].rstrip("\n") + "\n\n" + human
    passed = sum(r["result"] == "ok" for r in results)
    return report, f"{human}\n\n{passed}/{len(results)} examples match their expected exit code"
