"""
Diffusion-law classes and the normalizing isomorphisms.
"""
import math
import time

import numpy as np
import pytest
import sympy as sp

from parafact.core.exceptions import DomainError, NormalizationError
from parafact.domain import Interval
from parafact.equation import classify, equivalent
from parafact.expr import evaluate_batch
from parafact.fileio import load_equation_text, load_map_text
from parafact.morphism import pushforward
from parafact.normalize import classify_a, gauge_canonicalize, quasilinearize, remove_drift, time_reparam
from parafact.oracle import sample
from parafact.schemas import AClassKind, MorphismVerdict

SAMPLES = 300
PAIRS = 40

u = sp.Symbol("u", real=True)

UNEQUAL_GRADIENT_TERMS = """
[vars]
n = 2
u_interval = -1,1

[coeffs]
b.1.1 = "1"
b.2.2 = "1"
c.1.1 = "1"
"""

FOLDED_TIME = """
[map]
tau = "t^2"
y = "x"
v = "u"
"""


def opts():
    return dict(samples=SAMPLES, pairs=PAIRS)


def test_periodic_law():
    aclass = classify_a(2 + sp.sin(u), Interval(-50, 50), u)
    assert aclass.kind == AClassKind.AEXP
    assert aclass.exceptional
    assert aclass.period == pytest.approx(2 * math.pi, rel=1e-3)
    assert aclass.lam == pytest.approx(0.0, abs=1e-6)


def test_exponential_times_periodic_law():
    aclass = classify_a(sp.exp(2 * u) * (3 + sp.cos(u)), Interval(), u)
    assert aclass.kind == AClassKind.AEXP
    assert aclass.lam == pytest.approx(2.0)
    assert aclass.period == pytest.approx(2 * math.pi, rel=1e-3)


def test_pure_exponential_is_extended():
    aclass = classify_a(sp.exp(u), Interval(), u)
    assert aclass.kind == AClassKind.AEXP_EXT
    assert aclass.lam == pytest.approx(1.0)
    assert not aclass.exceptional and aclass.extended


def test_power_law_on_the_half_line():
    aclass = classify_a(u**2, Interval(0, math.inf), u)
    assert aclass.kind == AClassKind.ADEG_EXT
    assert aclass.lam == pytest.approx(2.0)
    assert aclass.u0 == pytest.approx(0.0)


def test_generic_and_constant_laws():
    assert classify_a(1 + u**2, Interval(), u).kind == AClassKind.NONE
    assert not classify_a(1 + u**2, Interval(), u).extended
    assert classify_a(sp.Integer(3), Interval()).kind == AClassKind.CONST


def test_law_must_depend_on_one_symbol():
    x = sp.Symbol("x", real=True)
    with pytest.raises(DomainError):
        classify_a(1 + x * u, Interval())


def test_quasilinearize_cole_hopf(equation):
    """u_t = u_xx + u_x^2 has constant c/b = 1: v = exp(u) - 1."""
    result = quasilinearize(equation("cole_hopf"), u0=0, **opts())
    assert result.provenance == "quasilinearize: closed form"
    assert result.checks["C"].passed
    assert result.passed
    v = result.iso.v
    assert sp.simplify(v - (sp.exp(result.iso.source[-1]) - 1)) == 0


def test_quasilinearize_needs_proportional_terms():
    with pytest.raises(NormalizationError):
        quasilinearize(load_equation_text(UNEQUAL_GRADIENT_TERMS), **opts())


def test_quasilinearize_base_point_inside_the_fiber(equation):
    with pytest.raises(NormalizationError):
        quasilinearize(equation("cole_hopf"), u0=5, **opts())


def test_remove_constant_drift(equation):
    result = remove_drift(equation("drift"), **opts())
    assert result.provenance == "remove_drift: closed form"
    assert result.checks["xi"].passed
    t, x = result.iso.source[0], result.iso.source[1]
    assert sp.simplify(result.iso.ys[0] - (x + 3 * t)) == 0


def test_remove_drift_without_drift_is_the_identity(equation):
    result = remove_drift(equation("heat_circle"), **opts())
    assert result.provenance == "identity"
    assert result.checks["xi"].detail == "no drift"


def test_time_reparametrization(equation, fmap):
    result = time_reparam(equation("sin_diffusion"), fmap("time_exp"), **opts())
    assert result.provenance == "time_reparam"
    assert result.composite is not None
    t = result.composite.source[0]
    assert sp.simplify(result.composite.tau - t) == 0
    assert result.checks["composition"].passed


def test_time_reparametrization_must_be_monotone(equation):
    with pytest.raises(NormalizationError):
        time_reparam(equation("sin_diffusion"), load_map_text(FOLDED_TIME), **opts())


def test_gauge_of_a_periodic_quotient(equation, fmap):
    eq = equation("sin_diffusion")
    F = fmap("sin_shift")
    report = pushforward(eq, F, **opts())
    assert report.verdict == MorphismVerdict.ACCEPTED
    aclass = classify_a(2 + sp.sin(eq.u.symbol), Interval(), eq.u.symbol)
    result = gauge_canonicalize(eq, F, report, aclass, **opts())
    assert result.provenance == "gauge: shift (t, y, u + psi)"
    assert result.checks["congruence"].passed
    assert result.composite is not None


@pytest.mark.parametrize("law", [2 + sp.sin(u), sp.exp(2 * u) * (3 + sp.cos(u))])
@pytest.mark.parametrize("c", [1.0, -1.0, math.pi, -math.pi])
def test_periodic_class_is_shift_equivariant(law, c):
    plain = classify_a(law, Interval(), u)
    shifted = classify_a(law.xreplace({u: u + c}), Interval(), u)
    assert shifted.kind == plain.kind == AClassKind.AEXP
    assert shifted.lam == pytest.approx(plain.lam, abs=1e-6)
    assert shifted.period == pytest.approx(plain.period, rel=1e-3)


@pytest.mark.parametrize("c", [1.0, -1.0, math.pi])
def test_power_class_base_point_moves_with_the_shift(c):
    aclass = classify_a((u + c) ** 2, Interval(-c, math.inf), u)
    assert aclass.kind == AClassKind.ADEG_EXT
    assert aclass.lam == pytest.approx(2.0)
    assert aclass.u0 == pytest.approx(-c, abs=1e-6)


@pytest.mark.parametrize("k", [0.5, 3.0, 40.0])
@pytest.mark.parametrize("law, kind", [
    (2 + sp.sin(u), AClassKind.AEXP),
    (sp.exp(2 * u) * (3 + sp.cos(u)), AClassKind.AEXP),
    (sp.exp(u), AClassKind.AEXP_EXT),
    (1 + u**2, AClassKind.NONE),
])
def test_class_is_scale_invariant(law, kind, k):
    plain = classify_a(law, Interval(), u)
    scaled = classify_a(k * law, Interval(), u)
    assert plain.kind == scaled.kind == kind
    if kind != AClassKind.NONE:
        assert scaled.lam == pytest.approx(plain.lam, abs=1e-6)
    if kind == AClassKind.AEXP:
        assert scaled.period == pytest.approx(plain.period, rel=1e-3)


@pytest.mark.parametrize("build", [
    lambda eq: quasilinearize(eq("cole_hopf"), u0=0, **opts()),
    lambda eq: remove_drift(eq("drift"), **opts()),
])
def test_normalized_target_is_the_quotient_on_fresh_samples(equation, build):
    result = build(equation)
    report = pushforward(result.source, result.iso, samples=SAMPLES, pairs=PAIRS, seed=17)
    assert report.verdict == MorphismVerdict.ACCEPTED
    assert equivalent(report.quotient_equation, result.target, samples=SAMPLES, seed=23).passed


def test_quasilinear_target_has_no_gradient_terms(equation):
    result = quasilinearize(equation("cole_hopf"), u0=0, **opts())
    assert "QPE" in classify(result.target, samples=SAMPLES).names()


def test_drift_free_target_has_no_drift(equation):
    result = remove_drift(equation("drift"), **opts())
    columns = sample(result.target.dom, SAMPLES, 5)
    for e in result.target.bvec:
        assert np.abs(evaluate_batch(e, columns)).max() < 1e-6


def test_drift_on_the_circle_is_removed_by_its_flow_in_time(equation):
    start = time.perf_counter()
    result = remove_drift(equation("drift_circle"), **opts())
    elapsed = time.perf_counter() - start
    assert result.provenance == "remove_drift: flow"
    assert result.checks["xi"].passed
    assert elapsed < 60.0
