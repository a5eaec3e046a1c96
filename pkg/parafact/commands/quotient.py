"""
quotient: like check, but prints the quotient as an equation file.
"""
import argparse
import logging
from typing import Tuple

from parafact.commands.check import render_morphism, run_morphism
from parafact.commands.common import EXIT_INCONCLUSIVE, add_run_options
from parafact.fileio import save_equation, save_equation_text
from parafact.schemas import MorphismVerdict, RunReport

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("quotient", help="compute the quotient equation of a morphism")
    parser.add_argument("--eq", required=True, help="equation file")
    parser.add_argument("--map", required=True, help="map file")
    parser.add_argument("--then", metavar="MAP", help="compose with a second map applied after --map")
    parser.add_argument("--out", metavar="PATH", help="write the quotient equation file to PATH")
    add_run_options(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> Tuple[RunReport, str]:
    eq, fmap, morphism, report = run_morphism("quotient", args)
    quotient = morphism.quotient_equation
    if morphism.verdict != MorphismVerdict.ACCEPTED or quotient is None:
        if morphism.verdict == MorphismVerdict.ACCEPTED:
            report.exit_code = EXIT_INCONCLUSIVE
            report.details["reason"] = "the quotient is known on samples only"
        return report, render_morphism(eq, fmap, morphism)

    text = save_equation_text(quotient)
    if args.out:
        save_equation(quotient, args.out)
        report.details["out"] = args.out
    report.details["quotient_file"] = text
    return report, text.rstrip("\n")
