"""
Subcategory lattice: nodes are subcategories of parabolic equations, an
arrow src -> dst states that dst is a subcategory of src of the given kinds.

Derived relations come from a fixed-point saturation of the dataset under
the implication, intersection and composition rules; every derived kind
keeps the step that produced it, so queries return a replayable trace.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from parafact.core.config import LATTICE_FILE
from parafact.core.exceptions import LatticeError
from parafact.schemas import (
    AClass,
    AClassKind,
    ArrowKind,
    CanonicalForm,
    ClassLabel,
    LatticeArrow,
    LatticeCoincidence,
    LatticeIntersection,
    RelationResult,
    TraceStep,
)

logger = logging.getLogger(__name__)

W, F, FI, C, CI, D, P = (ArrowKind.WIDE, ArrowKind.FULL, ArrowKind.FULL_ISO, ArrowKind.CLOSED,
                         ArrowKind.CLOSED_ISO, ArrowKind.DENSE, ArrowKind.PLENTIFUL)
KIND_ORDER = [W, F, FI, C, CI, D, P]
ALL_KINDS: FrozenSet[ArrowKind] = frozenset(KIND_ORDER)
GUARDS = ("nonexc", "nonext", "nonconst")

# (premises, conclusion, rule name); all on the same arrow
IMPLICATION_RULES: List[Tuple[FrozenSet[ArrowKind], ArrowKind, str]] = [
    (frozenset({C}), F, "closed => full"),
    (frozenset({F}), FI, "full => full under isomorphisms"),
    (frozenset({C}), CI, "closed => closed under isomorphisms"),
    (frozenset({W}), D, "wide => dense"),
    (frozenset({C}), P, "closed => plentiful"),
    (frozenset({CI, P}), C, "closed under isomorphisms and plentiful => closed"),
    (frozenset({FI, P}), F, "full under isomorphisms and plentiful => full"),
    (frozenset({F, D}), P, "full and dense => plentiful"),
]

# kinds of C2 in C that carry over to C1 & C2 in C1 when C1 is closed in C
CARRIED = frozenset({F, C, D, P})
TRANSITIVE = (W, F, C, D)


def sorted_kinds(kinds: Iterable[ArrowKind]) -> List[ArrowKind]:
    return sorted(kinds, key=KIND_ORDER.index)


def format_kinds(kinds: Iterable[ArrowKind]) -> str:
    names = [k.value for k in sorted_kinds(kinds)]
    return ", ".join(names) if names else "-"


def close_kinds(kinds: Iterable[ArrowKind]) -> FrozenSet[ArrowKind]:
    """Closure of a kind-set under IMPLICATION_RULES."""
    out = set(kinds)
    changed = True
    while changed:
        changed = False
        for premises, conclusion, _ in IMPLICATION_RULES:
            if premises <= out and conclusion not in out:
                out.add(conclusion)
                changed = True
    return frozenset(out)


def compose_kinds(first: FrozenSet[ArrowKind], second: FrozenSet[ArrowKind]) -> FrozenSet[ArrowKind]:
    """
    Kinds of C2 in C0 from the kinds of C1 in C0 (first) and C2 in C1 (second).
    Wide, full, closed and dense are transitive; full-plentiful chains stay
    full-plentiful and a plentiful step followed by a full-plentiful one is
    plentiful.
    """
    first, second = close_kinds(first), close_kinds(second)
    if first == ALL_KINDS:
        return second
    if second == ALL_KINDS:
        return first
    out = {k for k in TRANSITIVE if k in first and k in second}
    if {F, P} <= second:
        if {F, P} <= first:
            out |= {F, P}
        elif P in first:
            out.add(P)
    return close_kinds(out)


def guards_of(aclass: Optional[AClass]) -> FrozenSet[str]:
    """Guards satisfied by a diffusion law of the given class."""
    if aclass is None:
        return frozenset()
    out = set()
    if not aclass.exceptional:
        out.add("nonexc")
    if not aclass.extended:
        out.add("nonext")
    if aclass.kind != AClassKind.CONST:
        out.add("nonconst")
    return frozenset(out)


def _active(guard: Optional[str], assume: FrozenSet[str]) -> bool:
    if not guard:
        return True
    return all(g.strip() in assume for g in guard.split(","))


def _fact(src: str, dst: str, kind: ArrowKind) -> str:
    return f"{src} -> {dst} : {kind.value}"


FactKey = Tuple[str, str, ArrowKind]


@dataclass
class _Why:
    rule: str
    premises: List[FactKey]
    sources: List[str] = field(default_factory=list)


class Derivation:
    """Saturated relation table for one set of assumptions."""

    def __init__(self):
        self.facts: Dict[Tuple[str, str], Set[ArrowKind]] = defaultdict(set)
        self.why: Dict[FactKey, _Why] = {}

    def add(self, src: str, dst: str, kinds: Iterable[ArrowKind], rule: str,
            premises: Sequence[FactKey] = (), sources: Sequence[str] = ()) -> bool:
        if src == dst:
            return False
        changed = False
        for kind in sorted_kinds(kinds):
            if kind not in self.facts[(src, dst)]:
                self.facts[(src, dst)].add(kind)
                self.why[(src, dst, kind)] = _Why(rule, list(premises), list(sources))
                changed = True
        if changed:
            self._close(src, dst)
        return changed

    def _close(self, src: str, dst: str):
        present = self.facts[(src, dst)]
        changed = True
        while changed:
            changed = False
            for premises, conclusion, name in IMPLICATION_RULES:
                if premises <= present and conclusion not in present:
                    present.add(conclusion)
                    self.why[(src, dst, conclusion)] = _Why(
                        name, [(src, dst, k) for k in sorted_kinds(premises)])
                    changed = True

    def kinds(self, src: str, dst: str) -> FrozenSet[ArrowKind]:
        if src == dst:
            return ALL_KINDS
        return frozenset(self.facts.get((src, dst), ()))

    def trace(self, src: str, dst: str) -> List[TraceStep]:
        """Steps deriving every kind of src -> dst, premises first."""
        steps: List[TraceStep] = []
        seen: Set[FactKey] = set()

        def visit(key: FactKey):
            if key in seen or key not in self.why:
                return
            seen.add(key)
            why = self.why[key]
            for premise in why.premises:
                visit(premise)
            steps.append(TraceStep(rule=why.rule,
                                   premises=[_fact(*p) for p in why.premises] + why.sources,
                                   conclusion=_fact(*key)))

        for kind in sorted_kinds(self.kinds(src, dst) if src != dst else ()):
            visit((src, dst, kind))
        return steps


class Lattice:
    """The arrow dataset plus the rules that derive relations from it."""

    def __init__(self, arrows: Sequence[LatticeArrow] = (),
                 intersections: Sequence[LatticeIntersection] = (),
                 coincidences: Sequence[LatticeCoincidence] = ()):
        self.arrows = list(arrows)
        self.intersections = list(intersections)
        self.coincidences = list(coincidences)
        self._derivations: Dict[FrozenSet[str], Derivation] = {}

    @property
    def nodes(self) -> List[str]:
        names = []
        for a in self.arrows:
            names += [a.src, a.dst]
        for i in self.intersections:
            names += [i.node, i.left, i.right]
        for c in self.coincidences:
            names += [c.left, c.right]
        return list(dict.fromkeys(names))

    def extended(self, extra: Sequence[LatticeArrow]) -> "Lattice":
        user = [a.model_copy(update={"user": True}) for a in extra]
        return Lattice([*self.arrows, *user], self.intersections, self.coincidences)

    def require_node(self, name: str):
        if name not in self.nodes:
            raise LatticeError(f"Unknown lattice node: {name}")

    def derive(self, assume: Iterable[str] = ()) -> Derivation:
        """Saturate the dataset under the given guards (memoized)."""
        assume = frozenset(assume)
        if "nonext" in assume:
            assume |= {"nonexc"}
        if assume in self._derivations:
            return self._derivations[assume]

        d = Derivation()
        for arrow in self.arrows:
            if _active(arrow.guard, assume):
                source = f"{arrow.provenance} (user)" if arrow.user else arrow.provenance
                d.add(arrow.src, arrow.dst, arrow.kinds, "given", sources=[source])
        for c in self.coincidences:
            if _active(c.guard, assume):
                d.add(c.left, c.right, ALL_KINDS, "coincidence", sources=[c.provenance])
                d.add(c.right, c.left, ALL_KINDS, "coincidence", sources=[c.provenance])
        intersections = [i for i in self.intersections if _active(i.guard, assume)]

        rounds = 0
        changed = True
        while changed:
            changed = False
            rounds += 1
            for inter in intersections:
                changed |= self._intersect(d, inter)
            changed |= self._compose(d)
        logger.debug(f"lattice saturated in {rounds} rounds under {sorted(assume)}: "
                     f"{len(d.facts)} related pairs")
        self._derivations[assume] = d
        return d

    @staticmethod
    def _intersect(d: Derivation, inter: LatticeIntersection) -> bool:
        """
        C1 closed in C and C2 a subcategory of C with kinds K: C1 & C2 is
        closed in C2, and carries K restricted to CARRIED as a subcategory of C1.
        """
        changed = False
        for c1, c2 in ((inter.left, inter.right), (inter.right, inter.left)):
            for (top, below), kinds in list(d.facts.items()):
                if below != c1 or C not in kinds:
                    continue
                k2 = frozenset(d.facts.get((top, c2), ()))
                if not k2:
                    continue
                premises = [(top, c1, C), *[(top, c2, k) for k in sorted_kinds(k2)]]
                sources = [f"{inter.node} = {inter.left} & {inter.right} ({inter.provenance})"]
                changed |= d.add(c2, inter.node, {C}, "intersection with a closed subcategory",
                                 premises, sources)
                carried = k2 & CARRIED
                if carried:
                    changed |= d.add(c1, inter.node, carried, "intersection with a closed subcategory",
                                     premises, sources)
        return changed

    @staticmethod
    def _compose(d: Derivation) -> bool:
        changed = False
        by_src: Dict[str, List[str]] = defaultdict(list)
        for (src, dst), kinds in d.facts.items():
            if kinds:
                by_src[src].append(dst)
        for (a, b) in list(d.facts):
            first = frozenset(d.facts[(a, b)])
            if not first:
                continue
            for c in list(by_src.get(b, ())):
                if c == a:
                    continue
                second = frozenset(d.facts[(b, c)])
                new = compose_kinds(first, second) - d.kinds(a, c)
                if new:
                    premises = [*[(a, b, k) for k in sorted_kinds(first)],
                                *[(b, c, k) for k in sorted_kinds(second)]]
                    changed |= d.add(a, c, new, "composition", premises)
        return changed

    def infer_relation(self, src: str, dst: str, extra: Sequence[LatticeArrow] = (),
                       assume: Iterable[str] = ()) -> RelationResult:
        """Strongest derivable kinds of dst as a subcategory of src, with the trace."""
        lattice = self.extended(extra) if extra else self
        lattice.require_node(src)
        lattice.require_node(dst)
        d = lattice.derive(assume)
        kinds = d.kinds(src, dst)
        logger.info(f"{src} -> {dst}: {format_kinds(kinds)}")
        return RelationResult(src=src, dst=dst, kinds=kinds, trace=d.trace(src, dst))

    def weakest_arrow(self, chain: Sequence[str], assume: Iterable[str] = (),
                      extra: Sequence[LatticeArrow] = ()) -> RelationResult:
        """
        Compose the kinds of consecutive links; the result is the relation of
        the last node to the first one guaranteed by the whole chain.
        """
        if not chain:
            raise LatticeError("Empty chain")
        lattice = self.extended(extra) if extra else self
        for name in chain:
            lattice.require_node(name)
        d = lattice.derive(assume)
        kinds = ALL_KINDS
        trace: List[TraceStep] = []
        for src, dst in zip(chain, chain[1:]):
            link = d.kinds(src, dst)
            if not link:
                raise LatticeError(f"Broken chain: nothing derivable for {src} -> {dst}")
            trace += d.trace(src, dst)
            kinds = compose_kinds(kinds, link)
            trace.append(TraceStep(rule="chain", premises=[f"{src} -> {dst} : {format_kinds(link)}"],
                                   conclusion=f"{chain[0]} -> {dst} : {format_kinds(kinds)}"))
        return RelationResult(src=chain[0], dst=chain[-1], kinds=kinds, trace=trace)


@dataclass
class _CanonicalCase:
    node: str
    labels: Tuple[str, ...]
    accepts: Tuple[AClassKind, ...]
    morphism: str
    quotient: str
    provenance: Tuple[str, ...]
    description: str
    nonconst: bool = False


_NONEXC = (AClassKind.CONST, AClassKind.AEXP_EXT, AClassKind.ADEG_EXT, AClassKind.NONE)

# Most specific first
CANONICAL_CASES: List[_CanonicalCase] = [
    _CanonicalCase(
        node="EPE_0na(a)", labels=("AQPE_0", "AQPE_n", "AQPE_a"), accepts=(AClassKind.NONE,), nonconst=True,
        morphism="(t, y(x), u)", quotient="v_t = a(v) (Laplace v + H . grad v) + Q(y, v)",
        provenance=("epe.3", "cor.2"),
        description="equivalence morphism: the fiber coordinate is kept"),
    _CanonicalCase(
        node="AQPE_0na(a)", labels=("AQPE_0", "AQPE_n", "AQPE_a"), accepts=_NONEXC, nonconst=True,
        morphism="(t, y(x), phi(x) u + psi(x))", quotient="v_t = a(v) (Laplace v + H . grad v) + Q(y, v)",
        provenance=("aqpe.4", "cor.1"),
        description="autonomous affine morphism with the same diffusion law a"),
    _CanonicalCase(
        node="QPE''_a(a)", labels=("QPE''_a",), accepts=(AClassKind.AEXP,),
        morphism="(t, y(t, x), u + psi(t, x))",
        quotient="v_t = a(v) (sum bbar v_ij + sum bbar^i v_i) + sum xi v_i + q",
        provenance=("qpe_a.4",),
        description="pure shift of u; fiber differences of psi are multiples of the period of H"),
    _CanonicalCase(
        node="QPE''_a(a)", labels=("QPE''_a",), accepts=(AClassKind.ADEG,),
        morphism="(t, y(t, x), v0 + (u - u0) exp(psi(t, x)))",
        quotient="v_t = a(v) (sum bbar v_ij + sum bbar^i v_i) + sum xi v_i + q",
        provenance=("qpe_a.4",),
        description="power gauge around u0; fiber differences of psi are multiples of the period of H"),
    _CanonicalCase(
        node="QPE''_0a(a)", labels=("QPE''_0", "QPE''_a"), accepts=_NONEXC,
        morphism="(t, y(t, x), phi(t, x) u + psi(t, x))",
        quotient="v_t = a(v) (sum bbar v_ij + sum bbar^i v_i) + q",
        provenance=("qpe_a.2",),
        description="affine morphism without drift and with the same diffusion law a"),
    _CanonicalCase(
        node="QPE''_a(a)", labels=("QPE''_a",), accepts=_NONEXC,
        morphism="(t, y(t, x), phi(t, x) u + psi(t, x))",
        quotient="v_t = a(v) (sum bbar v_ij + sum bbar^i v_i) + sum xi v_i + q",
        provenance=("qpe_a.1",),
        description="affine morphism with the same diffusion law a"),
]


def canonical_form_query(labels: Iterable, aclass: Optional[AClass]) -> CanonicalForm:
    """Guaranteed shape of canonical morphisms and quotients for an equation with these labels."""
    names = {label.name if isinstance(label, ClassLabel) else str(label) for label in labels}
    kind = aclass.kind if aclass is not None else None
    for case in CANONICAL_CASES:
        if not set(case.labels) <= names or kind not in case.accepts:
            continue
        if case.nonconst and kind == AClassKind.CONST:
            continue
        return CanonicalForm(guaranteed=True, node=case.node, morphism=case.morphism,
                             quotient=case.quotient, provenance=list(case.provenance),
                             description=case.description)
    return CanonicalForm(guaranteed=False)


_builtin: Optional[Lattice] = None


def builtin_graph() -> Lattice:
    """The shipped dataset, loaded once."""
    global _builtin
    if _builtin is None:
        from parafact.fileio import load_lattice
        _builtin = load_lattice(LATTICE_FILE)
        logger.info(f"loaded lattice dataset {LATTICE_FILE}: {len(_builtin.arrows)} arrows, "
                    f"{len(_builtin.intersections)} intersections")
    return _builtin


# Chain through which reaction-diffusion equations reach their canonical subcategory
REDUCTION_CHAIN = ["PE", "TPE", "TPE_1", "QPE", "QPE'", "QPE''", "QPE''_n", "QPE''_0n",
                   "SQPE_0n", "SQPE_0na(a)", "AQPE_0na(a)"]
