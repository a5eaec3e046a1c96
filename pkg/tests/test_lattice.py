"""
Subcategory lattice: kind algebra, guards, derivation and canonical forms.
"""
import pytest

from parafact.core.exceptions import LatticeError
from parafact.fileio import load_lattice_text
from parafact.lattice import (
    ALL_KINDS,
    REDUCTION_CHAIN,
    builtin_graph,
    canonical_form_query,
    close_kinds,
    compose_kinds,
    format_kinds,
    guards_of,
)
from parafact.schemas import AClass, AClassKind, ArrowKind, ClassLabel, LatticeArrow

W, F, FI, C, CI, D, P = (ArrowKind.WIDE, ArrowKind.FULL, ArrowKind.FULL_ISO, ArrowKind.CLOSED,
                         ArrowKind.CLOSED_ISO, ArrowKind.DENSE, ArrowKind.PLENTIFUL)

SMALL = """
A -> B : Wide : s.1
B -> C : Wide : s.2
A -> G : Full : s.3 : if nonconst
A == E : s.4
"""


def test_closed_implies_the_rest():
    assert close_kinds({C}) == {C, F, FI, CI, P}
    assert close_kinds({W}) == {W, D}
    assert close_kinds({F, D}) == {F, FI, D, P}


def test_composition_of_kinds():
    assert compose_kinds(frozenset({W}), frozenset({W})) == {W, D}
    assert compose_kinds(ALL_KINDS, frozenset({F})) == {F, FI}
    assert C not in compose_kinds(frozenset({C}), frozenset({W}))
    assert P in compose_kinds(frozenset({P}), frozenset({F, P}))


def test_format_kinds():
    assert format_kinds([]) == "-"
    assert format_kinds({P, W}) == "Wide, Plentiful"


@pytest.mark.parametrize("kind, guards", [
    (AClassKind.NONE, {"nonexc", "nonext", "nonconst"}),
    (AClassKind.AEXP, {"nonconst"}),
    (AClassKind.AEXP_EXT, {"nonexc", "nonconst"}),
    (AClassKind.CONST, {"nonexc"}),
])
def test_guards_of_a_class(kind, guards):
    assert guards_of(AClass(kind=kind)) == guards
    assert guards_of(None) == frozenset()


def test_transitivity_and_coincidence():
    lattice = load_lattice_text(SMALL)
    assert lattice.infer_relation("A", "C").kinds == {W, D}
    assert lattice.infer_relation("A", "E").kinds == ALL_KINDS


def test_guarded_arrows_need_their_assumption():
    lattice = load_lattice_text(SMALL)
    assert lattice.infer_relation("A", "G").kinds == frozenset()
    assert lattice.infer_relation("A", "G", assume=["nonconst"]).kinds == {F, FI}


def test_user_arrows_extend_the_dataset():
    lattice = load_lattice_text(SMALL)
    extra = [LatticeArrow(src="C", dst="G", kinds=frozenset({W}), provenance="mine")]
    result = lattice.infer_relation("A", "G", extra=extra)
    assert W in result.kinds
    assert any("mine (user)" in premise for step in result.trace for premise in step.premises)


def test_unknown_nodes_are_rejected():
    with pytest.raises(LatticeError):
        builtin_graph().infer_relation("PE", "NOPE")


def test_closed_subcategories_of_pe():
    graph = builtin_graph()
    kinds = graph.infer_relation("PE", "PE1").kinds
    assert C in kinds and P in kinds
    assert C in graph.infer_relation("PE", "PE3").kinds


def test_reduction_chain_needs_its_guards():
    graph = builtin_graph()
    result = graph.weakest_arrow(REDUCTION_CHAIN, assume=["nonexc", "nonconst"])
    assert result.src == "PE"
    assert result.dst == "AQPE_0na(a)"
    assert result.trace
    with pytest.raises(LatticeError):
        graph.weakest_arrow(REDUCTION_CHAIN)
    with pytest.raises(LatticeError):
        graph.weakest_arrow([])


def test_nonext_implies_nonexc():
    graph = builtin_graph()
    assert graph.derive(["nonext"]) is graph.derive(["nonext", "nonexc"])


def test_canonical_form_of_a_generic_law():
    labels = [ClassLabel(name=n) for n in ("AQPE_0", "AQPE_n", "AQPE_a")]
    form = canonical_form_query(labels, AClass(kind=AClassKind.NONE))
    assert form.guaranteed
    assert form.node == "EPE_0na(a)"


def test_canonical_form_of_a_periodic_law():
    form = canonical_form_query(["QPE''_a"], AClass(kind=AClassKind.AEXP, period=6.28))
    assert form.guaranteed
    assert form.node == "QPE''_a(a)"
    assert form.morphism.startswith("(t, y(t, x), u + psi")


def test_no_canonical_form_without_a_law():
    assert not canonical_form_query(["PE1"], None).guaranteed
    labels = ["AQPE_0", "AQPE_n", "AQPE_a"]
    assert canonical_form_query(labels, AClass(kind=AClassKind.CONST)).node != "EPE_0na(a)"
