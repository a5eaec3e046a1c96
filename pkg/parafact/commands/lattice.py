"""
lattice: queries against the subcategory lattice.
"""
import argparse
import logging
from typing import List, Tuple

from parafact.commands.classify import classify_diffusion_law
from parafact.commands.classify_a import parse_omega
from parafact.commands.common import (
    EXIT_FAIL,
    EXIT_OK,
    add_run_options,
    key_values,
    new_report,
    options,
    record_inputs,
    table,
)
from parafact.core.exceptions import InputError
from parafact.equation import classify
from parafact.expr import VariableContext, VarRole, parse
from parafact.fileio import load_equation, load_lattice_text
from parafact.lattice import GUARDS, REDUCTION_CHAIN, builtin_graph, canonical_form_query, format_kinds, guards_of
from parafact.normalize import classify_a
from parafact.schemas import LatticeArrow, RelationResult, RunReport

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("lattice", help="query the subcategory lattice")
    actions = parser.add_subparsers(dest="action", required=True)

    def guarded(sub):
        sub.add_argument("--assume", action="append", default=[], choices=GUARDS,
                         help="guard on the diffusion law a (repeatable)")
        sub.add_argument("--a", dest="a_expr", help="diffusion law a(u); its guards are derived by classify-a")
        sub.add_argument("--omega", default=None, help="interval of u for --a")
        sub.add_argument("--facts", help="extra arrow records to add to the dataset")
        add_run_options(sub, sampling=False)

    query = actions.add_parser("query", help="derived relation between two nodes")
    query.add_argument("--from", dest="src", required=True)
    query.add_argument("--to", dest="dst", required=True)
    guarded(query)

    chain = actions.add_parser("chain", help="weakest arrow along a chain of nodes")
    chain.add_argument("nodes", nargs="*", help=f"nodes (default: {' '.join(REDUCTION_CHAIN)})")
    guarded(chain)

    canonical = actions.add_parser("canonical", help="canonical form guaranteed for an equation")
    canonical.add_argument("--eq", required=True, help="equation file")
    add_run_options(canonical)

    listing = actions.add_parser("list", help="print the dataset")
    add_run_options(listing, sampling=False)
    parser.set_defaults(handler=run)


def _assumptions(args, report: RunReport) -> List[str]:
    assume = set(args.assume)
    if args.a_expr:
        omega = parse_omega(args.omega)
        ctx = VariableContext()
        u = ctx.declare("u", VarRole.FIBER, positive=omega.lo >= 0).symbol
        aclass = classify_a(parse(args.a_expr, ctx), omega, u=u)
        report.aclass = aclass
        report.inputs["a"] = args.a_expr
        assume |= guards_of(aclass)
    return sorted(assume)


def _extra(args, report: RunReport) -> List[LatticeArrow]:
    if not args.facts:
        return []
    record_inputs(report, args.facts)
    try:
        with open(args.facts, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise InputError(f"cannot read {args.facts}: {e.strerror}")
    extra = load_lattice_text(text, args.facts, user=True)
    if extra.intersections or extra.coincidences:
        logger.warning(f"{args.facts}: only arrow records are added to the dataset")
    return extra.arrows


def _trace(result: RelationResult) -> str:
    rows = [{"rule": s.rule, "premises": "; ".join(s.premises), "conclusion": s.conclusion}
            for s in result.trace]
    return table(rows, ["rule", "premises", "conclusion"])


def _relation(report: RunReport, key: str, result: RelationResult):
    report.verdicts[key] = format_kinds(result.kinds)
    report.details[key] = result.model_dump(mode="json")


def run(args: argparse.Namespace) -> Tuple[RunReport, str]:
    report = new_report("lattice", args)
    graph = builtin_graph()

    if args.action == "list":
        rows = [{"src": a.src, "dst": a.dst, "kinds": format_kinds(a.kinds), "provenance": a.provenance,
                 "guard": a.guard or ""} for a in graph.arrows]
        inter = [{"node": i.node, "of": f"{i.left} & {i.right}", "provenance": i.provenance,
                  "guard": i.guard or ""} for i in graph.intersections]
        same = [{"nodes": f"{c.left} == {c.right}", "provenance": c.provenance, "guard": c.guard or ""}
                for c in graph.coincidences]
        report.details["counts"] = {"arrows": len(rows), "intersections": len(inter), "coincidences": len(same)}
        human = "\n\n".join([
            table(rows, ["src", "dst", "kinds", "provenance", "guard"]),
            table(inter, ["node", "of", "provenance", "guard"]),
            table(same, ["nodes", "provenance", "guard"]),
        ])
        return report, human

    if args.action == "canonical":
        opts = options(args)
        record_inputs(report, args.eq)
        eq = load_equation(args.eq)
        labels = classify(eq, opts["samples"], opts["tol"], opts["seed"]).labels
        a_label = next((label for label in labels if label.name == "QPE''_a"), None)
        aclass = classify_diffusion_law(eq, a_label.param, opts["seed"]) if a_label is not None else None
        canonical = canonical_form_query(labels, aclass)
        report.labels = [str(label) for label in labels]
        report.aclass = aclass
        report.verdicts["canonical"] = "guaranteed" if canonical.guaranteed else "none"
        report.details["canonical"] = canonical.model_dump(mode="json")
        report.exit_code = EXIT_OK
        return report, key_values({
            "equation": eq.name,
            "labels": ", ".join(report.labels),
            "a class": aclass.kind.value if aclass is not None else "-",
            **canonical.model_dump(mode="json", exclude={"provenance"}),
            "provenance": ", ".join(canonical.provenance) or "-",
        })

    assume = _assumptions(args, report)
    extra = _extra(args, report)
    report.details["assume"] = assume

    if args.action == "query":
        result = graph.infer_relation(args.src, args.dst, extra=extra, assume=assume)
        _relation(report, "relation", result)
        report.exit_code = EXIT_OK if result.kinds else EXIT_FAIL
        human = key_values({"from": args.src, "to": args.dst, "assume": ", ".join(assume) or "-",
                            "kinds": format_kinds(result.kinds)})
        return report, human + "\n\n" + _trace(result)

    chain = args.nodes or REDUCTION_CHAIN
    result = graph.weakest_arrow(chain, assume=assume, extra=extra)
    _relation(report, "chain", result)
    summary = {"chain": " -> ".join(chain), "assume": ", ".join(assume) or "-",
               f"relative to {chain[0]}": format_kinds(result.kinds)}
    if len(chain) > 2:
        inner = graph.weakest_arrow(chain[1:], assume=assume, extra=extra)
        _relation(report, "chain_from_second", inner)
        summary[f"relative to {chain[1]}"] = format_kinds(inner.kinds)
    report.exit_code = EXIT_OK
    return report, key_values(summary) + "\n\n" + _trace(result)
