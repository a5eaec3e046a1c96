"""
classify-a: diffusion-law class of a(u).
"""
import argparse
import logging
from typing import Tuple

from parafact.commands.common import EXIT_OK, add_run_options, key_values, new_report, options
from parafact.core.exceptions import DomainError, InputError
from parafact.domain import Interval, parse_interval
from parafact.expr import VariableContext, VarRole, parse
from parafact.lattice import guards_of
from parafact.normalize import classify_a
from parafact.schemas import RunReport

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("classify-a", help="classify a diffusion law a(u)")
    parser.add_argument("a", help='expression in u, e.g. "2+sin(u)"')
    parser.add_argument("--omega", default=None, help="interval of u, e.g. -50,50 (default: the real line)")
    parser.add_argument("--u0-hint", type=float, action="append", default=[], dest="u0_hints",
                        help="candidate singular point of a power law (repeatable)")
    add_run_options(parser)
    parser.set_defaults(handler=run)


def parse_omega(text) -> Interval:
    if text is None:
        return Interval()
    try:
        return parse_interval(text)
    except DomainError as e:
        raise InputError(f"--omega: {e}")


def run(args: argparse.Namespace) -> Tuple[RunReport, str]:
    opts = options(args)
    report = new_report("classify-a", args)
    omega = parse_omega(args.omega)
    ctx = VariableContext()
    u = ctx.declare("u", VarRole.FIBER, positive=omega.lo >= 0).symbol
    a = parse(args.a, ctx)
    report.inputs["a"] = args.a
    report.details["omega"] = str(omega)

    aclass = classify_a(a, omega, u=u, seed=opts["seed"], u0_hints=args.u0_hints)
    report.aclass = aclass
    report.labels = [aclass.kind.value]
    report.details["guards"] = sorted(guards_of(aclass))
    report.exit_code = EXIT_OK

    human = key_values({
        "a": args.a,
        "omega": str(omega),
        **{k: v for k, v in aclass.model_dump(mode="json", exclude_none=True).items()},
        "exceptional": aclass.exceptional,
        "guards": ", ".join(report.details["guards"]) or "(none)",
    })
    return report, human
