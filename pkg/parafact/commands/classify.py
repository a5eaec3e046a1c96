"""
classify: subcategory labels of an equation, with the canonical form they guarantee.
"""
import argparse
import logging
from typing import Tuple

from parafact.commands.common import (
    EXIT_FAIL,
    EXIT_OK,
    VERDICT_COLUMNS,
    add_run_options,
    key_values,
    new_report,
    options,
    record_inputs,
    table,
    verdict_rows,
)
from parafact.core.exceptions import InconclusiveError
from parafact.domain import Interval, optional_interval
from parafact.equation import classify
from parafact.expr import parse
from parafact.fileio import load_equation
from parafact.lattice import canonical_form_query
from parafact.normalize import classify_a
from parafact.schemas import RunReport

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("classify", help="classify an equation into subcategory labels")
    parser.add_argument("--eq", required=True, help="equation file")
    add_run_options(parser)
    parser.set_defaults(handler=run)


def classify_diffusion_law(eq, a_text: str, seed: int):
    """A-class of the factored diffusion law, or None when it cannot be decided."""
    a = parse(a_text, eq.context)
    omega = optional_interval(eq.dom.axis(eq.u.name)) or Interval()
    try:
        return classify_a(a, omega, u=eq.u.symbol, seed=seed)
    except InconclusiveError as e:
        logger.warning(f"diffusion law {a_text} not classified: {e}")
        return None


def run(args: argparse.Namespace) -> Tuple[RunReport, str]:
    opts = options(args)
    report = new_report("classify", args)
    record_inputs(report, args.eq)
    eq = load_equation(args.eq)
    result = classify(eq, opts["samples"], opts["tol"], opts["seed"])

    report.labels = [str(label) for label in result.labels]
    report.details["classification"] = result.model_dump(mode="json")
    aclass = None
    a_label = next((label for label in result.labels if label.name == "QPE''_a"), None)
    if a_label is not None:
        aclass = classify_diffusion_law(eq, a_label.param, opts["seed"])
        report.aclass = aclass
    canonical = canonical_form_query(result.labels, aclass)
    report.details["canonical"] = canonical.model_dump(mode="json")
    report.verdicts["validate"] = "Fail" if "validate" in result.failed else "Pass"
    report.exit_code = EXIT_FAIL if "validate" in result.failed else EXIT_OK

    lines = [
        key_values({
            "equation": f"{eq.name} ({eq.n}D)",
            "labels": ", ".join(report.labels) or "(none)",
            "A_nc": result.a_nc,
        })
    ]
    if result.factored:
        lines += ["", "factored:", key_values(result.factored)]
    if aclass is not None:
        lines += ["", "diffusion law:", key_values(aclass.model_dump(mode="json", exclude_none=True))]
    if canonical.guaranteed:
        lines += ["", "canonical form:", key_values({
            "node": canonical.node,
            "morphism": canonical.morphism,
            "quotient": canonical.quotient,
            "provenance": ", ".join(canonical.provenance),
            "description": canonical.description,
        })]
    if result.failed:
        lines += ["", "labels that do not hold:", table(verdict_rows(result.failed), VERDICT_COLUMNS)]
    for note in result.notes:
        lines.append(f"note: {note}")
    return report, "\n".join(lines)
