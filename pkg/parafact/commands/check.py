"""
check: decide whether a map is a morphism out of an equation.
"""
import argparse
import logging
from typing import Tuple

from parafact.commands.common import (
    VERDICT_COLUMNS,
    add_run_options,
    exit_code_for,
    key_values,
    new_report,
    options,
    record_inputs,
    table,
    verdict_rows,
    witness_text,
)
from parafact.fileio import load_equation, load_map
from parafact.morphism import compose, is_isomorphism, pushforward
from parafact.schemas import MorphismReport, RunReport

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("check", help="check a map against an equation")
    parser.add_argument("--eq", required=True, help="equation file")
    parser.add_argument("--map", required=True, help="map file")
    parser.add_argument("--then", metavar="MAP", help="compose with a second map applied after --map")
    parser.add_argument("--iso", action="store_true", help="also decide whether the map is an isomorphism")
    add_run_options(parser)
    parser.set_defaults(handler=run)


def run_morphism(command: str, args: argparse.Namespace):
    """Shared by check and quotient: load, compose, push forward."""
    opts = options(args)
    report = new_report(command, args)
    record_inputs(report, args.eq, args.map, getattr(args, "then", None))
    eq = load_equation(args.eq)
    fmap = load_map(args.map)
    if getattr(args, "then", None):
        fmap = compose(fmap, load_map(args.then))
        logger.info(f"composite map {fmap.name} = {fmap}")
    morphism = pushforward(eq, fmap, **opts)
    report.verdicts["morphism"] = morphism.verdict.value
    report.quotient = morphism.quotient or None
    report.details["morphism"] = morphism.model_dump(mode="json")
    report.details["map"] = {"name": fmap.name, "components": str(fmap), "shape": fmap.shape.value}
    report.exit_code = exit_code_for(morphism.verdict)
    return eq, fmap, morphism, report


def render_morphism(eq, fmap, morphism: MorphismReport) -> str:
    lines = [
        key_values({
            "equation": f"{eq.name} ({eq.n}D)",
            "map": f"{fmap.name} {fmap}",
            "shape": fmap.shape.value,
            "verdict": morphism.verdict.value,
        }),
        "",
        table(verdict_rows(morphism.checks), VERDICT_COLUMNS),
    ]
    if morphism.failing_candidate:
        lines.append(f"\nfailing candidate: {morphism.failing_candidate}")
        lines.append(f"witness: {witness_text(morphism.witness)}")
    if morphism.quotient:
        lines += ["", "quotient:", key_values(morphism.quotient)]
    if morphism.implicit_table:
        columns = list(morphism.implicit_table[0].keys())
        lines += ["", "quotient on Newton-inverted target points:", table(morphism.implicit_table, columns)]
    if morphism.gauge:
        lines += ["", "gauge:", key_values(morphism.gauge)]
    for note in morphism.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines)


def run(args: argparse.Namespace) -> Tuple[RunReport, str]:
    eq, fmap, morphism, report = run_morphism("check", args)
    human = render_morphism(eq, fmap, morphism)
    if args.iso:
        opts = options(args)
        bound = fmap.bind(source=eq.symbols)
        iso = is_isomorphism(bound, eq.dom, samples=opts["samples"], tol=opts["tol"], seed=opts["seed"],
                             pairs=opts["pairs"])
        report.verdicts["isomorphism"] = iso.status.value
        report.details["isomorphism"] = iso.model_dump(mode="json")
        human += "\n\n" + key_values({"isomorphism": f"{iso.is_isomorphism} ({iso.status.value})",
                                      "evidence": iso.evidence})
    return report, human
