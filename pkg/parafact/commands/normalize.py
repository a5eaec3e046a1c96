"""
normalize: canonical isomorphisms (quasilinearization, drift removal,
time reparametrization, gauge canonicalization).
"""
import argparse
import logging
from typing import Tuple

from parafact.commands.classify import classify_diffusion_law
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
from parafact.core.exceptions import InputError, NormalizationError
from parafact.equation import classify
from parafact.expr import to_text
from parafact.fileio import load_equation, load_map, save_equation, save_equation_text
from parafact.morphism import pushforward
from parafact.normalize import NormalizationResult, gauge_canonicalize, quasilinearize, remove_drift, time_reparam
from parafact.schemas import RunReport

logger = logging.getLogger(__name__)

OPERATIONS = ("quasilinearize", "remove-drift", "time-reparam", "gauge")


def register(subparsers):
    parser = subparsers.add_parser("normalize", help="build a canonical isomorphism of an equation")
    parser.add_argument("--eq", required=True, help="equation file")
    parser.add_argument("--op", required=True, choices=OPERATIONS)
    parser.add_argument("--map", help="map file (time-reparam and gauge)")
    parser.add_argument("--u0", type=float, help="base point of the quasilinearizing quadrature")
    parser.add_argument("--t0", type=float, help="reference time of the drift-removing flow")
    parser.add_argument("--out", metavar="PATH", help="write the target equation file to PATH")
    add_run_options(parser)
    parser.set_defaults(handler=run)


def _gauge(eq, fmap, opts) -> NormalizationResult:
    morphism = pushforward(eq, fmap, **opts)
    labels = classify(eq, opts["samples"], opts["tol"], opts["seed"]).labels
    a_label = next((label for label in labels if label.name == "QPE''_a"), None)
    if a_label is None:
        raise NormalizationError(f"{eq.name}: gauge canonicalization needs a diffusion law a(u) (QPE''_a)")
    aclass = classify_diffusion_law(eq, a_label.param, opts["seed"])
    if aclass is None:
        raise NormalizationError(f"{eq.name}: diffusion law {a_label.param} could not be classified")
    result = gauge_canonicalize(eq, fmap, morphism, aclass, **opts)
    result.notes.append(f"diffusion law {a_label.param}: {aclass.kind.value}")
    return result


def run(args: argparse.Namespace) -> Tuple[RunReport, str]:
    opts = options(args)
    report = new_report("normalize", args)
    record_inputs(report, args.eq, args.map)
    eq = load_equation(args.eq)
    if args.op in ("time-reparam", "gauge") and not args.map:
        raise InputError(f"--op {args.op} needs --map")

    if args.op == "quasilinearize":
        result = quasilinearize(eq, u0=args.u0, **opts)
    elif args.op == "remove-drift":
        result = remove_drift(eq, t0=args.t0, **opts)
    elif args.op == "time-reparam":
        result = time_reparam(eq, load_map(args.map), **opts)
    else:
        result = _gauge(eq, load_map(args.map), opts)

    report.verdicts = {key: v.status.value for key, v in result.checks.items()}
    report.exit_code = EXIT_OK if result.passed else EXIT_FAIL
    report.details["provenance"] = result.provenance
    report.details["isomorphism"] = str(result.iso)
    report.details["artifacts"] = result.artifacts
    if result.composite is not None:
        report.details["composite"] = str(result.composite)

    lines = [
        key_values({
            "equation": f"{eq.name} ({eq.n}D)",
            "operation": args.op,
            "construction": result.provenance,
            "isomorphism": str(result.iso),
            "section": ", ".join(to_text(e) for e in (result.iso.section or [])) or "-",
        }),
        "",
        table(verdict_rows(result.checks), VERDICT_COLUMNS),
    ]
    if result.composite is not None:
        lines.append(f"\ncomposite: {result.composite} ({result.composite.shape.value})")
    if result.artifacts:
        lines += ["", "numeric constructions:", key_values(result.artifacts)]

    target = result.target
    report.quotient = {key: to_text(expr) for key, expr in target.coefficients().items()}
    try:
        text = save_equation_text(target)
        report.details["target_file"] = text
        lines += ["", text.rstrip("\n")]
        if args.out:
            save_equation(target, args.out)
    except InputError as e:
        # numeric constructions have no file form
        logger.warning(f"target equation not written: {e}")
        lines += ["", "target:", key_values(report.quotient)]
        if args.out:
            raise
    for note in result.notes:
        lines.append(f"note: {note}")
    return report, "\n".join(lines)
