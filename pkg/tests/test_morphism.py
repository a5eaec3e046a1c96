"""
Fibered maps: shape inference, morphism decision, quotients, composition
and isomorphism checks.
"""
import pytest
import sympy as sp

from parafact.core.exceptions import InputError
from parafact.equation import classify, equivalent
from parafact.fileio import load_map_text
from parafact.lattice import builtin_graph
from parafact.morphism import (
    compose,
    infer_shape,
    is_isomorphism,
    map_fiber_pairs,
    pushforward,
    quotient_candidates,
)
from parafact.schemas import ArrowKind, MapShape, MorphismVerdict, VerdictStatus

SAMPLES = 300
PAIRS = 40

OVERCLAIMED = """
[meta]
shape = EPE

[map]
tau = "t"
y = "x"
v = "u + x"
"""

FIBER_IN_BASE = """
[map]
tau = "t"
y = "x + u"
v = "u"
"""


def run(eq, fmap):
    return pushforward(eq, fmap, samples=SAMPLES, pairs=PAIRS)


@pytest.mark.parametrize("name, shape", [
    ("identity", MapShape.EPE),
    ("circle_scale", MapShape.PE_GENERAL),
    ("square_fold", MapShape.TPE),
    ("drift_comove", MapShape.QPE_AFFINE),
    ("sin_shift", MapShape.AQPE_AFFINE),
    ("spherical", MapShape.AQPE_AFFINE),
])
def test_inferred_shapes(fmap, name, shape):
    assert infer_shape(fmap(name)) == shape


def test_declared_shape_cannot_be_more_special():
    with pytest.raises(InputError):
        load_map_text(OVERCLAIMED)


def test_y_must_not_depend_on_u():
    with pytest.raises(InputError):
        load_map_text(FIBER_IN_BASE)


def test_candidates_of_the_circle_cover(equation, fmap):
    eq = equation("heat_circle")
    F = fmap("circle_scale").bind(source=eq.symbols)
    candidates = quotient_candidates(eq, F)
    assert candidates["B.1.1"] == 1
    assert candidates["B.1"] == 0
    assert candidates["C.1.1"] == 0
    assert candidates["Q"] == 0


def test_circle_cover_is_accepted(equation, fmap):
    report = run(equation("heat_circle"), fmap("circle_scale"))
    assert report.verdict == MorphismVerdict.ACCEPTED
    assert report.quotient["b.1.1"] == "1"
    quotient = report.quotient_equation
    assert quotient is not None
    assert quotient.names == ["t", "x", "u"]
    assert quotient.dom.axis("x").modulus == 1


def test_wrapping_with_the_period_of_a_is_accepted(equation, fmap):
    report = run(equation("sin_diffusion"), fmap("sin_shift"))
    assert report.verdict == MorphismVerdict.ACCEPTED
    assert report.gauge is not None


def test_half_period_shift_is_rejected_with_witness(equation, fmap):
    """x and x + 2 pi share an image but 2 + sin u differs by the shift of pi."""
    report = run(equation("sin_diffusion"), fmap("sin_halfshift"))
    assert report.verdict == MorphismVerdict.REJECTED
    assert report.failing_candidate == "B.1.1"
    assert len(report.witness) == 2
    first, second = report.witness
    assert abs(second["x"] - first["x"]) > 1.0


def test_fold_is_not_a_submersion(equation, fmap):
    report = run(equation("heat_circle"), fmap("square_fold"))
    assert report.verdict == MorphismVerdict.REJECTED
    assert report.failing_candidate == "submersion"
    assert report.checks["submersion"].status == VerdictStatus.FAIL


def test_comoving_frame_removes_the_drift(equation, fmap):
    report = run(equation("drift"), fmap("drift_comove"))
    assert report.verdict == MorphismVerdict.ACCEPTED
    assert report.quotient["b.1"] == "0"


def test_compose_feeds_components_by_position(fmap):
    composite = compose(fmap("identity"), fmap("circle_scale"))
    t, x, u = composite.source
    assert composite.name == "circle_scale*identity"
    assert composite.tau == 4 * t
    assert composite.ys == [2 * x]
    assert composite.v == u
    assert composite.shape == MapShape.PE_GENERAL


def test_compose_keeps_sections(fmap):
    composite = compose(fmap("sin_shift"), fmap("sin_shift"))
    assert composite.section is not None
    tau, y, v = composite.target
    assert sp.simplify(composite.section[-1] - (v - 2 * y)) == 0


def test_compose_rejects_dimension_mismatch(fmap):
    with pytest.raises(InputError):
        compose(fmap("projection_4d"), fmap("identity"))


def test_identity_on_the_circle_is_an_isomorphism(equation, fmap):
    eq = equation("heat_circle")
    report = is_isomorphism(fmap("identity").bind(source=eq.symbols), eq.dom, samples=SAMPLES, pairs=PAIRS)
    assert report.is_isomorphism
    assert report.status == VerdictStatus.PASS


def test_double_cover_is_not_an_isomorphism(equation, fmap):
    eq = equation("heat_circle")
    report = is_isomorphism(fmap("circle_scale").bind(source=eq.symbols), eq.dom, samples=SAMPLES, pairs=PAIRS)
    assert not report.is_isomorphism
    assert report.status == VerdictStatus.FAIL
    assert report.collision is not None


def test_projection_is_not_an_isomorphism(equation, fmap):
    eq = equation("aniso_2d")
    F = load_map_text('[vars]\nn = 2\n\n[map]\ntau = "t"\ny = "x1"\nv = "u"\n')
    report = is_isomorphism(F.bind(source=eq.symbols), eq.dom, samples=SAMPLES, pairs=PAIRS)
    assert not report.is_isomorphism
    assert "dimension" in report.evidence


@pytest.mark.parametrize("eq_name, first, second", [
    ("heat_circle", "identity", "circle_scale"),
    ("drift", "drift_comove", "identity"),
    ("cole_hopf", "cole_hopf", "time_exp"),
])
def test_quotient_of_a_composite_is_the_iterated_quotient(equation, fmap, eq_name, first, second):
    eq = equation(eq_name)
    F, G = fmap(first), fmap(second)
    step = run(eq, F)
    assert step.verdict == MorphismVerdict.ACCEPTED
    iterated = run(step.quotient_equation, G)
    assert iterated.verdict == MorphismVerdict.ACCEPTED
    direct = run(eq, compose(F.bind(source=eq.symbols), G))
    assert direct.verdict == MorphismVerdict.ACCEPTED
    assert equivalent(direct.quotient_equation, iterated.quotient_equation, samples=SAMPLES).passed


@pytest.mark.parametrize("eq_name, map_name", [
    ("heat_circle", "circle_scale"),
    ("sin_diffusion", "sin_shift"),
    ("drift", "drift_comove"),
    ("cole_hopf", "cole_hopf"),
    ("spherical", "spherical"),
    ("aniso_2d", "aniso_swap"),
])
def test_closed_subcategories_keep_their_quotients(equation, fmap, eq_name, map_name):
    graph = builtin_graph()
    closed = {label for label in ("PE1", "PE2", "PE4")
              if ArrowKind.CLOSED in graph.infer_relation("PE", label).kinds}
    assert closed == {"PE1", "PE2", "PE4"}
    eq = equation(eq_name)
    report = run(eq, fmap(map_name))
    assert report.verdict == MorphismVerdict.ACCEPTED
    before = classify(eq, samples=SAMPLES).names() & closed
    assert before
    assert before <= classify(report.quotient_equation, samples=SAMPLES).names()


def test_fiber_pairs_are_searched_once_per_map(equation, fmap):
    eq = equation("heat_circle")
    F = fmap("circle_scale").bind(source=eq.symbols)
    first = map_fiber_pairs(F, eq.dom, PAIRS, seed=3)
    assert map_fiber_pairs(F, eq.dom, PAIRS, seed=3) is first
    assert map_fiber_pairs(F, eq.dom, PAIRS, seed=4) is not first
