"""
Equations: validation, factorizations, classification and geometric input.
"""
import pytest
import sympy as sp

from parafact.core.exceptions import GeometryError
from parafact.equation import (
    IMPLICATIONS,
    classify,
    close_labels,
    equivalent,
    factor_pe1,
    factor_pe2,
    factor_qpe2,
    validate,
)
from parafact.fileio import load_equation_text
from parafact.schemas import ClassLabel, VerdictStatus

SAMPLES = 300

SPLIT_DIFFUSION = """
[vars]
n = 2
x1_interval = -1,1
x2_interval = -1,1
u_interval = -2,2

[coeffs]
b.1.1 = "1"
b.2.2 = "1 + u^2"
"""

DEGENERATE = """
[vars]
n = 1
x_interval = -1,1

[coeffs]
b.1.1 = "x"
"""

POLAR = """
[meta]
name = polar

[vars]
n = 2
names = t, r, th, u
r_interval = 0.5,3
th_mod = 2*pi

[geometry]
g.1.1 = "1"
g.2.2 = "r^2"
"""

SINGULAR_METRIC = """
[vars]
n = 2

[geometry]
g.1.1 = "1"
g.1.2 = "1"
g.2.2 = "1"
"""


def test_validate_passes_for_the_heat_equation(equation):
    verdict = validate(equation("heat_circle"), samples=SAMPLES)
    assert verdict.passed


def test_validate_fails_with_witness():
    verdict = validate(load_equation_text(DEGENERATE), samples=SAMPLES)
    assert verdict.status == VerdictStatus.FAIL
    assert verdict.witness[0]["x"] < 1e-6


def test_pe1_holds_and_pe2_fails_for_split_diffusion():
    """b = diag(1, 1 + u^2) has no common scalar factor a(u)."""
    eq = load_equation_text(SPLIT_DIFFUSION)
    lam, pe1 = factor_pe1(eq, samples=SAMPLES)
    assert pe1.passed
    factored, pe2 = factor_pe2(eq, samples=SAMPLES)
    assert factored is None
    assert pe2.status == VerdictStatus.FAIL
    assert pe2.witness and "u" in pe2.witness[0]

    report = classify(eq, samples=SAMPLES)
    assert "PE1" in report.names()
    assert "PE2" not in report.names()
    assert "PE2" in report.failed


def test_factor_pe2_normalizes_at_u0(equation):
    eq = equation("sin_diffusion")
    factored, verdict = factor_pe2(eq, u0=0, samples=SAMPLES)
    assert verdict.passed
    u = eq.u.symbol
    assert sp.simplify(factored.a - (2 + sp.sin(u)) / 2) == 0
    assert factored.bbar[0, 0] == 2


def test_drift_split(equation):
    """b^1 = 3 is pure drift: bbar^1 = 0, xi = 3."""
    eq = equation("drift")
    factored, _ = factor_pe2(eq, samples=SAMPLES)
    split, verdict = factor_qpe2(eq, factored, samples=SAMPLES)
    assert verdict.passed
    assert not split.ambiguous
    assert split.bibar[0] == 0
    assert split.xi[0] == 3


def test_drift_split_is_ambiguous_for_constant_a(equation):
    eq = equation("aniso_2d")
    factored, _ = factor_pe2(eq, samples=SAMPLES)
    split, verdict = factor_qpe2(eq, factored, samples=SAMPLES)
    assert verdict.passed
    assert split.ambiguous
    assert split.xi == list(eq.bvec)


def test_classify_sin_diffusion(equation):
    report = classify(equation("sin_diffusion"), samples=SAMPLES)
    names = report.names()
    for label in ("PE3", "QPE", "QPE'_n", "QPE''_0", "QPE''_n", "QPE''_a", "SQPE_b", "AQPE_0", "EPE_n"):
        assert label in names
    assert "PE4" not in names
    assert report.a_nc
    params = {label.name: label.param for label in report.labels}
    assert params["QPE''_a"] is not None
    assert params["AQPE_a"] == params["QPE''_a"]


def test_classify_heat_on_the_circle(equation):
    report = classify(equation("heat_circle"), samples=SAMPLES)
    names = report.names()
    for label in ("PE5", "QPEc", "QPE''_1q", "SQPE_1", "AQPE_1", "EPE_1"):
        assert label in names
    assert not report.a_nc
    assert "QPE''_n" not in names


def test_classify_stops_on_invalid_equations():
    report = classify(load_equation_text(DEGENERATE), samples=SAMPLES)
    assert report.labels == []
    assert report.failed["validate"].status == VerdictStatus.FAIL


def test_classification_is_closed_under_implication(equation):
    for name in ("sin_diffusion", "heat_circle", "reaction_diffusion", "cole_hopf"):
        names = classify(equation(name), samples=SAMPLES).names()
        for label in names:
            for implied in IMPLICATIONS.get(label, []):
                assert implied in names, f"{name}: {label} without {implied}"


def test_close_labels_keeps_family_parameters():
    closed = close_labels([ClassLabel(name="PE5"), ClassLabel(name="AQPE_a", param="1 + u^2")])
    names = {label.name for label in closed}
    assert {"PE", "PE1", "PE2", "PE3", "PE4", "PE5"} <= names
    params = {label.name: label.param for label in closed}
    assert params["QPE''_a"] == "1 + u^2"
    assert params["SQPE"] is None
    assert str(ClassLabel(name="QPE''_a", param="2")) == "QPE''_a(2)"


def test_geometry_expands_to_polar_laplacian():
    """Delta in polar coordinates is u_rr + u_r / r + u_thth / r^2."""
    eq = load_equation_text(POLAR)
    r = eq.xs[0].symbol
    assert sp.simplify(eq.b[0, 0] - 1) == 0
    assert sp.simplify(eq.b[1, 1] - 1 / r**2) == 0
    assert eq.b[0, 1] == 0
    assert sp.simplify(eq.bvec[0] - 1 / r) == 0
    assert eq.bvec[1] == 0
    assert eq.c == sp.zeros(2, 2)


def test_geometry_keeps_the_metric_when_not_expanded():
    geq = load_equation_text(POLAR, expand=False)
    assert geq.g[1, 1] == geq.xs[0].symbol ** 2
    assert geq.a == 1


def test_singular_metric_is_rejected():
    with pytest.raises(GeometryError):
        load_equation_text(SINGULAR_METRIC)


def test_equivalent(equation):
    first = equation("sin_diffusion")
    second = equation("sin_diffusion")
    assert equivalent(first, second, samples=SAMPLES).passed
    assert equivalent(first, equation("heat_circle"), samples=SAMPLES).status == VerdictStatus.FAIL
