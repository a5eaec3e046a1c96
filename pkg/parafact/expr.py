"""
Expression kernel.

Expressions are sympy objects; sympy's automatic canonical form (flattened and
sorted sums/products, folded rationals, collected like terms) is the normal
form. This module adds typed variables, the text DSL (a Pratt parser and a
printer), the `mod` builtin, numeric evaluation and sampled identity testing.
"""
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp
from sympy.printing.str import StrPrinter

from parafact.core.config import DEFAULT_SAMPLES, DEFAULT_SEED, DEFAULT_TOL, SINGULAR_BUDGET
from parafact.core.exceptions import (
    ArityError,
    DifferentiationError,
    DomainError,
    ParseError,
    SingularEvaluationError,
    UnboundVariableError,
    UnknownIdentifierError,
)
from parafact.opaque import OpaqueSpec, compile_numeric
from parafact.schemas import Verdict, VerdictStatus

logger = logging.getLogger(__name__)


class VarRole(str, Enum):
    TIME = "t"
    BASE = "x"
    FIBER = "u"
    QTIME = "tau"
    QBASE = "y"
    QFIBER = "v"
    PARAM = "param"
    AUX = "aux"


@dataclass(frozen=True)
class Var:
    name: str
    role: VarRole
    index: Optional[int] = None
    symbol: sp.Symbol = field(default=None, compare=False)

    def __str__(self) -> str:
        return self.name


def make_symbol(name: str, positive: bool = False) -> sp.Symbol:
    if positive:
        return sp.Symbol(name, positive=True)
    return sp.Symbol(name, real=True)


class VariableContext:
    """
    Variables, parameters and opaque functions visible to the parser.
    (name, index) is unique and a variable's role never changes.
    """

    def __init__(self):
        self.vars: Dict[str, Var] = {}
        self.functions: Dict[str, OpaqueSpec] = {}
        self.params: Dict[str, float] = {}

    def declare(self, name: str, role: VarRole, index: Optional[int] = None,
                positive: bool = False) -> Var:
        existing = self.vars.get(name)
        if existing is not None:
            if existing.role != role or existing.index != index:
                raise ParseError(f"Variable {name!r} already declared as {existing.role.value}")
            return existing
        for other in self.vars.values():
            if index is not None and other.role == role and other.index == index:
                raise ParseError(f"Index {index} of role {role.value} already used by {other.name!r}")
        var = Var(name, role, index, make_symbol(name, positive))
        self.vars[name] = var
        return var

    def declare_param(self, name: str, value: float) -> Var:
        var = self.declare(name, VarRole.PARAM)
        self.params[name] = float(value)
        return var

    def declare_function(self, spec: OpaqueSpec):
        if spec.name in self.functions or spec.name in BUILTINS or spec.name in self.vars:
            raise ParseError(f"Function name {spec.name!r} is already in use")
        self.functions[spec.name] = spec

    def var(self, name: str) -> Var:
        try:
            return self.vars[name]
        except KeyError:
            raise UnknownIdentifierError(f"Unknown identifier {name!r}")

    def symbol(self, name: str) -> sp.Symbol:
        return self.var(name).symbol

    def by_role(self, role: VarRole) -> List[Var]:
        found = [v for v in self.vars.values() if v.role == role]
        return sorted(found, key=lambda v: (v.index or 0, v.name))

    def bind_params(self, expr: sp.Expr) -> sp.Expr:
        if not self.params:
            return expr
        return expr.xreplace({self.vars[n].symbol: sp.Float(v) if v != int(v) else sp.Integer(int(v))
                              for n, v in self.params.items()})

    def copy(self) -> "VariableContext":
        other = VariableContext()
        other.vars = dict(self.vars)
        other.functions = dict(self.functions)
        other.params = dict(self.params)
        return other


class mod(sp.Function):
    """
    mod(x, m): representative of x in [0, m). Derivative 1 in x.
    """
    nargs = 2
    _imp_ = staticmethod(lambda x, m: np.mod(x, m))

    @classmethod
    def eval(cls, x, m):
        if x.is_zero:
            return sp.S.Zero
        if x.is_Number and m.is_Number:
            return sp.Mod(x, m)
        reduced = _reduce_mod_argument(x, m)
        if reduced is not None:
            return cls(reduced, m)
        return None

    def fdiff(self, argindex=1):
        if argindex == 1:
            return sp.S.One
        raise DifferentiationError("mod is not differentiable in its modulus")


def _integral_ratio(value: sp.Expr) -> bool:
    if value.is_integer:
        return True
    if value.is_Number:
        f = float(value)
        return abs(f - round(f)) < 1e-12
    return False


def _reduce_mod_argument(x: sp.Expr, m: sp.Expr) -> Optional[sp.Expr]:
    """Drop integer multiples of m and unwrap inner mods commensurate with m."""
    changed = False
    terms = []
    for term in sp.Add.make_args(x):
        coeff, rest = term.as_coeff_Mul()
        if isinstance(rest, mod):
            h, inner = rest.args
            if _integral_ratio(coeff * inner / m):
                terms.append(coeff * h)
                changed = True
                continue
        ratio = term / m
        if not ratio.free_symbols and _integral_ratio(ratio):
            changed = True
            continue
        terms.append(term)
    if not changed:
        return None
    return sp.Add(*terms)


# name -> (constructor, arity)
BUILTINS: Dict[str, Tuple[Callable, int]] = {
    "sin": (sp.sin, 1),
    "cos": (sp.cos, 1),
    "exp": (sp.exp, 1),
    "ln": (sp.log, 1),
    "log": (sp.log, 1),
    "sqrt": (sp.sqrt, 1),
    "abs": (sp.Abs, 1),
    "mod": (mod, 2),
}

CONSTANTS: Dict[str, sp.Expr] = {
    "pi": sp.pi,
    "E": sp.E,
}


@dataclass
class Token:
    kind: str  # num, name, op, end
    text: str
    position: int


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def tokenize(text: str) -> List[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        match = _TOKEN.match(text, pos)
        if match is None or match.end() == pos:
            raise ParseError(f"Unexpected character {text[pos]!r}", pos, text)
        kind = match.lastgroup
        start = match.start(kind)
        value = match.group(kind)
        if value == "**":
            value = "^"
        tokens.append(Token(kind, value, start))
        pos = match.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


def _number(text: str) -> sp.Expr:
    if re.fullmatch(r"\d+", text):
        return sp.Integer(text)
    if "e" not in text.lower():
        mantissa = text.split(".", 1)[1] if "." in text else ""
        if len(mantissa) <= 6:
            return sp.Rational(text.rstrip(".") or "0")
    return sp.Float(text)


class Parser:
    """
    Top-down operator precedence parser for the expression DSL.
    """
    INFIX = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
    PREFIX = 30

    def __init__(self, text: str, context: VariableContext):
        self.text = text
        self.context = context
        self.tokens = tokenize(text)
        self.index = 0

    def peek(self) -> Token:
        return self.tokens[self.index]

    def advance(self, expected: Optional[str] = None) -> Token:
        token = self.tokens[self.index]
        if expected is not None and token.text != expected:
            found = token.text or "end of input"
            raise ParseError(f"Expected {expected!r}, found {found!r}", token.position, self.text)
        if token.kind != "end":
            self.index += 1
        return token

    def lbp(self, token: Token) -> int:
        return self.INFIX.get(token.text, 0) if token.kind == "op" else 0

    def parse(self) -> sp.Expr:
        if self.peek().kind == "end":
            raise ParseError("Empty expression", 0, self.text)
        result = self.expression()
        tail = self.peek()
        if tail.kind != "end":
            raise ParseError(f"Unexpected {tail.text!r}", tail.position, self.text)
        return result

    def expression(self, rbp: int = 0) -> sp.Expr:
        token = self.advance()
        left = self.nud(token)
        while rbp < self.lbp(self.peek()):
            token = self.advance()
            left = self.led(token, left)
        return left

    def nud(self, token: Token) -> sp.Expr:
        if token.kind == "num":
            return _number(token.text)
        if token.kind == "name":
            if self.peek().text == "(":
                return self.call(token)
            return self.identifier(token)
        if token.text == "-":
            return -self.expression(self.PREFIX)
        if token.text == "+":
            return self.expression(self.PREFIX)
        if token.text == "(":
            inner = self.expression()
            self.advance(")")
            return inner
        found = token.text or "end of input"
        raise ParseError(f"Unexpected {found!r}", token.position, self.text)

    def led(self, token: Token, left: sp.Expr) -> sp.Expr:
        op = token.text
        if op == "^":
            return left ** self.expression(self.INFIX["^"] - 1)
        right = self.expression(self.INFIX[op])
        if op == "+":
            return left + right
        if op == "-":
            return left - right
        if op == "*":
            return left * right
        return left / right

    def identifier(self, token: Token) -> sp.Expr:
        name = token.text
        if name in self.context.vars:
            return self.context.vars[name].symbol
        if name in CONSTANTS:
            return CONSTANTS[name]
        raise UnknownIdentifierError(f"Unknown identifier {name!r}", token.position, self.text)

    def call(self, token: Token) -> sp.Expr:
        name = token.text
        self.advance("(")
        args = []
        if self.peek().text != ")":
            while True:
                args.append(self.expression())
                if self.peek().text == ",":
                    self.advance(",")
                    continue
                break
        self.advance(")")

        if name in BUILTINS:
            fn, arity = BUILTINS[name]
            if len(args) != arity:
                raise ArityError(f"{name} takes {arity} argument(s), got {len(args)}", token.position, self.text)
            return fn(*args)

        spec, order = self.resolve_function(name)
        if spec is None:
            raise UnknownIdentifierError(f"Unknown function {name!r}", token.position, self.text)
        if len(args) != spec.nargs:
            raise ArityError(f"{spec.name} takes {spec.nargs} argument(s), got {len(args)}",
                             token.position, self.text)
        if order is not None and len(order) != spec.nargs:
            raise ArityError(f"Derivative index {name!r} does not match arity {spec.nargs}",
                             token.position, self.text)
        return spec.applied_class(order)(*args)

    def resolve_function(self, name: str):
        functions = self.context.functions
        if name in functions:
            return functions[name], None
        # H__1_0 denotes a partial derivative of the declared function H
        base, sep, suffix = name.partition("__")
        if sep and base in functions and re.fullmatch(r"\d+(_\d+)*", suffix):
            return functions[base], tuple(int(k) for k in suffix.split("_"))
        return None, None


def parse(text: str, context: VariableContext) -> sp.Expr:
    """Parse DSL text into a normalized expression over `context`."""
    return Parser(str(text), context).parse()


class ExprPrinter(StrPrinter):
    """StrPrinter speaking the DSL: ^ for powers, ln and abs by name."""

    def _print_log(self, expr):
        return f"ln({self._print(expr.args[0])})"

    def _print_Abs(self, expr):
        return f"abs({self._print(expr.args[0])})"


_printer = ExprPrinter()


def to_text(expr: sp.Expr) -> str:
    return _printer.doprint(sp.sympify(expr)).replace("**", "^")


def normalize(expr: sp.Expr) -> sp.Expr:
    """Rebuild bottom-up so every node passes through its canonicalizing constructor."""
    expr = sp.sympify(expr)
    if not expr.args:
        return expr
    return expr.func(*[normalize(a) for a in expr.args])


def tidy(expr: sp.Expr, max_ops: int = 80) -> sp.Expr:
    """
    Cheap simplification with a size guard: the smallest of the input, its
    cancelled form and (for small inputs) sympy's simplify.
    """
    expr = sp.sympify(expr)
    size = sp.count_ops(expr)
    if size > max_ops or not expr.free_symbols:
        return expr
    candidates = [expr]
    try:
        candidates.append(sp.cancel(expr))
        if size <= max_ops // 2:
            candidates.append(sp.simplify(expr))
    except Exception as e:
        logger.debug(f"tidy skipped for {expr}: {e}")
    return min(candidates, key=sp.count_ops)


def _as_symbol(w: Union[Var, sp.Symbol]) -> sp.Symbol:
    return w.symbol if isinstance(w, Var) else w


def differentiate(expr: sp.Expr, w: Union[Var, sp.Symbol], order: int = 1) -> sp.Expr:
    """Partial derivative; opaque nodes produce higher-order opaque nodes."""
    return sp.diff(expr, _as_symbol(w), order)


def substitute(expr: sp.Expr, bindings: Mapping) -> sp.Expr:
    """Simultaneous substitution followed by normalization."""
    mapping = {_as_symbol(k): sp.sympify(v) for k, v in bindings.items()}
    return sp.sympify(expr).xreplace(mapping)


def free_names(expr: sp.Expr) -> List[str]:
    return sorted(s.name for s in sp.sympify(expr).free_symbols)


def _key(name) -> str:
    return name.name if isinstance(name, (sp.Symbol, Var)) else str(name)


def evaluate(expr: sp.Expr, point: Mapping) -> float:
    """
    IEEE double evaluation at a point (keys are names, Vars or Symbols).
    NaN/Inf results raise SingularEvaluationError.
    """
    expr = sp.sympify(expr)
    values = {_key(k): float(v) for k, v in point.items()}
    symbols = sorted(expr.free_symbols, key=lambda s: s.name)
    missing = [s.name for s in symbols if s.name not in values]
    if missing:
        raise UnboundVariableError(f"Unbound variable(s) {', '.join(missing)} in {to_text(expr)}")
    fn = compile_numeric(expr, symbols)
    with np.errstate(all="ignore"):
        try:
            result = fn(*[values[s.name] for s in symbols])
        except (ZeroDivisionError, OverflowError, ValueError) as e:
            raise SingularEvaluationError(f"{to_text(expr)} is singular at {values}: {e}")
    result = complex(np.asarray(result).item()) if np.iscomplexobj(result) else float(result)
    if isinstance(result, complex):
        if abs(result.imag) > 1e-12 * (1 + abs(result.real)):
            raise SingularEvaluationError(f"{to_text(expr)} is complex at {values}")
        result = result.real
    if not np.isfinite(result):
        raise SingularEvaluationError(f"{to_text(expr)} is singular at {values}")
    return result


def evaluate_batch(expr: sp.Expr, columns: Mapping[str, np.ndarray]) -> np.ndarray:
    """
    Vectorized evaluation over sample columns; singular points come back as NaN.
    """
    expr = sp.sympify(expr)
    symbols = sorted(expr.free_symbols, key=lambda s: s.name)
    missing = [s.name for s in symbols if s.name not in columns]
    if missing:
        raise UnboundVariableError(f"Unbound variable(s) {', '.join(missing)} in {to_text(expr)}")
    n = len(next(iter(columns.values()))) if columns else 1
    fn = compile_numeric(expr, symbols)
    with np.errstate(all="ignore"):
        try:
            result = fn(*[np.asarray(columns[s.name], dtype=float) for s in symbols])
        except (ZeroDivisionError, OverflowError, ValueError):
            return np.full(n, np.nan)
        result = np.asarray(result)
        if np.iscomplexobj(result):
            bad = np.abs(result.imag) > 1e-12 * (1 + np.abs(result.real))
            result = np.where(bad, np.nan, result.real)
        result = np.broadcast_to(result.astype(float), (n,)).copy()
    result[~np.isfinite(result)] = np.nan
    return result


def _point(columns: Mapping[str, np.ndarray], i: int) -> Dict[str, float]:
    return {name: float(col[i]) for name, col in columns.items()}


def compare_on_samples(e1: sp.Expr, e2: sp.Expr, columns: Mapping[str, np.ndarray],
                       tol: float = DEFAULT_TOL, seed: Optional[int] = None) -> Verdict:
    """
    Compare two expressions on a fixed batch of sample columns.
    """
    return compare_values(evaluate_batch(e1, columns), evaluate_batch(e2, columns), columns, tol, seed)


def compare_values(v1: np.ndarray, v2: np.ndarray, columns: Mapping[str, np.ndarray],
                   tol: float = DEFAULT_TOL, seed: Optional[int] = None) -> Verdict:
    """
    Verdict for two value arrays over the same samples; the witness is the
    first failing row of `columns`.
    """
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    n = len(v1)
    finite = np.isfinite(v1) & np.isfinite(v2)
    singular = int(n - finite.sum())
    if n == 0:
        raise DomainError("No samples to compare on")
    if singular > SINGULAR_BUDGET * n:
        return Verdict(status=VerdictStatus.INCONCLUSIVE, samples=n, singular=singular, seed=seed,
                       detail=f"{singular} of {n} samples singular")
    scaled = np.zeros(n)
    scaled[finite] = np.abs(v1[finite] - v2[finite]) / (1.0 + np.abs(v1[finite]) + np.abs(v2[finite]))
    bad = np.flatnonzero(finite & (scaled > tol))
    stats = dict(
        max_residual=float(scaled[finite].max()) if finite.any() else 0.0,
        mean_residual=float(scaled[finite].mean()) if finite.any() else 0.0,
        samples=int(finite.sum()),
        singular=singular,
        seed=seed,
    )
    if len(bad):
        i = int(bad[0])
        return Verdict(status=VerdictStatus.FAIL, witness=[_point(columns, i)],
                       detail=f"{v1[i]:.6g} != {v2[i]:.6g}", **stats)
    return Verdict(status=VerdictStatus.PASS, **stats)


def prob_equal(e1: sp.Expr, e2: sp.Expr, dom, samples: int = DEFAULT_SAMPLES,
               tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED) -> Verdict:
    """
    Sampled identity test: Pass if |e1-e2| <= tol(1+|e1|+|e2|) at every
    nonsingular sample, Inconclusive above the singular-sample budget.
    """
    from parafact.oracle import sample

    e1, e2 = sp.sympify(e1), sp.sympify(e2)
    names = set(dom.names)
    missing = sorted({s.name for s in (e1.free_symbols | e2.free_symbols)} - names)
    if missing:
        raise UnboundVariableError(f"Variable(s) {', '.join(missing)} have no sampling range")
    columns = sample(dom, samples, seed)
    return compare_on_samples(e1, e2, columns, tol, seed)


def prob_equal_many(pairs: Iterable[Tuple[str, sp.Expr, sp.Expr]], dom, samples: int = DEFAULT_SAMPLES,
                    tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED) -> Dict[str, Verdict]:
    """prob_equal for several identities over one shared sample batch."""
    from parafact.oracle import sample

    columns = sample(dom, samples, seed)
    return {label: compare_on_samples(e1, e2, columns, tol, seed) for label, e1, e2 in pairs}


def is_independent_of(expr: sp.Expr, symbols: Sequence[sp.Symbol], dom,
                      samples: int = DEFAULT_SAMPLES, tol: float = DEFAULT_TOL,
                      seed: int = DEFAULT_SEED) -> Verdict:
    """
    Sampled test that every partial derivative of `expr` in `symbols` vanishes.
    """
    expr = sp.sympify(expr)
    present = [s for s in symbols if s in expr.free_symbols]
    if not present:
        return Verdict(status=VerdictStatus.PASS, seed=seed, detail="structurally independent")
    from parafact.oracle import sample

    columns = sample(dom, samples, seed)
    verdicts = [compare_on_samples(sp.diff(expr, s), sp.S.Zero, columns, tol, seed) for s in present]
    return Verdict.combine(verdicts)
