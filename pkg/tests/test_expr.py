"""
Expression DSL: parsing, printing, evaluation and sampled identity tests.
"""
import math

import numpy as np
import pytest
import sympy as sp

from parafact.core.exceptions import (
    ArityError,
    DifferentiationError,
    ParseError,
    SingularEvaluationError,
    UnboundVariableError,
    UnknownIdentifierError,
)
from parafact.domain import Domain, Interval
from parafact.expr import (
    VariableContext,
    VarRole,
    differentiate,
    evaluate,
    evaluate_batch,
    free_names,
    is_independent_of,
    mod,
    normalize,
    parse,
    prob_equal,
    substitute,
    to_text,
)
from parafact.opaque import defined_function
from parafact.oracle import sample


@pytest.fixture
def ctx():
    context = VariableContext()
    context.declare("t", VarRole.TIME)
    context.declare("x", VarRole.BASE, index=1)
    context.declare("u", VarRole.FIBER)
    return context


def test_precedence_and_associativity(ctx):
    """Powers bind tighter than unary minus and associate to the right."""
    x = ctx.symbol("x")
    assert parse("1 + 2*x^2", ctx) == 1 + 2 * x**2
    assert parse("2^3^2", ctx) == 512
    assert parse("-x^2", ctx) == -(x**2)
    assert parse("(1 + x)/(1 - x)", ctx) == (1 + x) / (1 - x)


def test_short_decimals_are_exact(ctx):
    """Decimals with few fractional digits parse as rationals, long ones as floats."""
    assert parse("0.5", ctx) == sp.Rational(1, 2)
    assert parse("2.25", ctx) == sp.Rational(9, 4)
    assert isinstance(parse("0.12345678", ctx), sp.Float)
    assert isinstance(parse("1e-3", ctx), sp.Float)


def test_constants_and_builtins(ctx):
    u = ctx.symbol("u")
    assert parse("pi", ctx) == sp.pi
    assert parse("ln(u) + log(u)", ctx) == 2 * sp.log(u)
    assert parse("abs(u)", ctx) == sp.Abs(u)


def test_unknown_identifier_reports_position(ctx):
    with pytest.raises(UnknownIdentifierError) as info:
        parse("x + z", ctx)
    assert info.value.position == 4


def test_arity_error(ctx):
    with pytest.raises(ArityError):
        parse("sin(x, u)", ctx)
    with pytest.raises(ArityError):
        parse("mod(x)", ctx)


@pytest.mark.parametrize("text", ["x +", "(x", "x )", "", "2 * * x"])
def test_malformed_text_is_rejected(ctx, text):
    with pytest.raises(ParseError):
        parse(text, ctx)


def test_mod_drops_whole_periods(ctx):
    """Adding a multiple of the modulus does not change mod."""
    x = ctx.symbol("x")
    assert parse("mod(x + 2*pi, 2*pi)", ctx) == mod(x, 2 * sp.pi)
    assert parse("mod(mod(x, 1) + 3, 1)", ctx) == mod(x, 1)
    assert differentiate(mod(x, 2 * sp.pi), x) == 1


def test_mod_is_not_differentiable_in_its_modulus(ctx):
    x, u = ctx.symbol("x"), ctx.symbol("u")
    with pytest.raises(DifferentiationError):
        sp.diff(mod(x, u), u)


def test_printing_uses_dsl_spelling(ctx):
    text = to_text(parse("x^2 + ln(u)", ctx))
    assert "^" in text and "**" not in text
    assert "ln(u)" in text
    assert parse(text, ctx) == parse("x^2 + ln(u)", ctx)


def test_substitute_and_free_names(ctx):
    x, u = ctx.symbol("x"), ctx.symbol("u")
    expr = parse("u*sin(x)", ctx)
    assert substitute(expr, {u: 2, x: sp.pi / 2}) == 2
    assert free_names(expr) == ["u", "x"]


def test_evaluate_point(ctx):
    assert evaluate(parse("sqrt(x)", ctx), {"x": 4.0}) == pytest.approx(2.0)
    assert evaluate(parse("mod(x, 1)", ctx), {"x": 2.25}) == pytest.approx(0.25)


def test_evaluate_errors(ctx):
    with pytest.raises(SingularEvaluationError):
        evaluate(parse("1/x", ctx), {"x": 0.0})
    with pytest.raises(SingularEvaluationError):
        evaluate(parse("ln(x)", ctx), {"x": 0.0})
    with pytest.raises(UnboundVariableError):
        evaluate(parse("x + t", ctx), {"x": 1.0})


def test_batch_evaluation_marks_singular_points(ctx):
    values = evaluate_batch(parse("ln(x)", ctx), {"x": np.array([-1.0, 1.0, math.e])})
    assert math.isnan(values[0])
    assert values[1:] == pytest.approx([0.0, 1.0])


def test_constant_expression_broadcasts(ctx):
    values = evaluate_batch(sp.Integer(3), {"x": np.zeros(5)})
    assert values.shape == (5,)
    assert np.all(values == 3.0)


def test_prob_equal_pass_and_witness(ctx):
    """A true identity passes; a small perturbation fails with a witness."""
    x = ctx.symbol("x")
    dom = Domain({"x": Interval(-3, 3)})
    same = prob_equal(sp.sin(x) ** 2 + sp.cos(x) ** 2, sp.S.One, dom, samples=200, seed=1)
    assert same.status.value == "Pass"
    differ = prob_equal(x**2, x**2 + 1e-3 * x, dom, samples=200, seed=1)
    assert differ.status.value == "Fail"
    assert differ.witness and "x" in differ.witness[0]


def test_prob_equal_inconclusive_when_mostly_singular(ctx):
    x = ctx.symbol("x")
    dom = Domain({"x": Interval(-3, -1)})
    verdict = prob_equal(sp.log(x), sp.log(x), dom, samples=100)
    assert verdict.status.value == "Inconclusive"


def test_prob_equal_requires_sampling_ranges(ctx):
    x, u = ctx.symbol("x"), ctx.symbol("u")
    with pytest.raises(UnboundVariableError):
        prob_equal(x + u, u + x, Domain({"x": Interval(0, 1)}), samples=10)


def test_independence(ctx):
    x, u = ctx.symbol("x"), ctx.symbol("u")
    dom = Domain({"x": Interval(-1, 1), "u": Interval(-1, 1)})
    assert is_independent_of(u + sp.sin(u), [x], dom, samples=100).passed
    assert is_independent_of(x * u - x * u + u, [x], dom, samples=100).passed
    assert not is_independent_of(x * u, [x], dom, samples=100).passed


def test_declared_function_and_derivative_names(ctx):
    """H__1 is the first derivative of a declared H."""
    w = sp.Symbol("w", real=True)
    ctx.declare_function(defined_function("H", [w], sp.sin(w)))
    assert evaluate(parse("H(x)", ctx), {"x": 0.5}) == pytest.approx(math.sin(0.5))
    assert evaluate(parse("H__1(x)", ctx), {"x": 0.0}) == pytest.approx(1.0)
    derivative = differentiate(parse("H(x^2)", ctx), ctx.var("x"))
    assert evaluate(derivative, {"x": 1.0}) == pytest.approx(2 * math.cos(1.0))


def test_role_conflicts_are_rejected(ctx):
    with pytest.raises(ParseError):
        ctx.declare("x", VarRole.FIBER)
    with pytest.raises(ParseError):
        ctx.declare("y", VarRole.BASE, index=1)


CORPUS_EQUATIONS = ["aniso_2d", "cole_hopf", "drift", "drift_circle", "exp_diffusion", "heat_circle",
                    "projection_4d", "reaction_diffusion", "sin_diffusion", "spherical"]


def corpus_expressions(eq):
    return [e for e in eq.coefficients().values() if e.free_symbols]


@pytest.mark.parametrize("name", CORPUS_EQUATIONS)
def test_normal_forms_are_stable(equation, name):
    eq = equation(name)
    for e in eq.coefficients().values():
        once = normalize(e)
        assert normalize(once) == once
        text = to_text(once)
        again = parse(text, eq.context)
        assert to_text(again) == text


@pytest.mark.parametrize("name", CORPUS_EQUATIONS)
def test_derivatives_match_central_differences(equation, name):
    eq = equation(name)
    columns = sample(eq.dom, 1000, seed=11)
    for e in corpus_expressions(eq):
        for w in sorted(e.free_symbols, key=lambda s: s.name):
            exact = evaluate_batch(differentiate(e, w), columns)
            h = 1e-5 * (1.0 + np.abs(columns[w.name]))
            ahead = dict(columns, **{w.name: columns[w.name] + h})
            behind = dict(columns, **{w.name: columns[w.name] - h})
            central = (evaluate_batch(e, ahead) - evaluate_batch(e, behind)) / (2 * h)
            finite = np.isfinite(exact) & np.isfinite(central)
            assert finite.sum() >= 900
            error = np.abs(exact[finite] - central[finite]) / (1.0 + np.abs(exact[finite]))
            assert error.max() < 1e-5, f"{name}: d/d{w.name} of {to_text(e)}"
