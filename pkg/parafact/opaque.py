"""
Opaque functions.

An opaque function is a sympy Function class whose numeric value comes from a
registered evaluator instead of a formula. Partial derivatives are either exact
symbolic expressions (when the construction provides a derivative rule) or new
opaque classes of higher derivative order with their own evaluators.

Class names encode the derivative multi-index: H, H__1, H__0_2, ...
"""
import logging
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from scipy.special import roots_legendre

from parafact.core.config import NEWTON_MAX_ITER, NEWTON_TOL, QUADRATURE_NODES
from parafact.core.exceptions import DifferentiationError
from parafact.services.cache_service import cache_service

logger = logging.getLogger(__name__)

Order = Tuple[int, ...]
DerivativeRule = Callable[[Order, int, Tuple[sp.Expr, ...]], Optional[sp.Expr]]


def compile_numeric(expr: sp.Expr, symbols: Sequence[sp.Symbol]) -> Callable:
    """
    numpy callable for `expr`, memoized in the L1 cache.
    Opaque nodes inside `expr` are resolved through their `_imp_` evaluators.
    """
    key = ("lambdify", expr, tuple(symbols))
    fn = cache_service.get_local(key)
    if fn is None:
        fn = sp.lambdify(list(symbols), expr, modules="numpy")
        cache_service.set_local(key, fn)
    return fn


def class_name(name: str, order: Order) -> str:
    if not any(order):
        return name
    return f"{name}__{'_'.join(str(k) for k in order)}"


class OpaqueApplied(sp.Function):
    """Base class of every applied opaque function."""
    _spec: "OpaqueSpec" = None
    _order: Order = ()

    @classmethod
    def eval(cls, *args):
        return None

    def fdiff(self, argindex=1):
        index = argindex - 1
        spec = self._spec
        if spec.derivative_rule is not None:
            result = spec.derivative_rule(self._order, index, self.args)
            if result is not None:
                return result
        order = list(self._order)
        order[index] += 1
        return spec.applied_class(tuple(order))(*self.args)

    def _eval_evalf(self, prec):
        if not all(a.is_number for a in self.args):
            return None
        try:
            value = float(self._imp_(*[float(a) for a in self.args]))
        except Exception:
            return None
        return sp.Float(value)


class OpaqueSpec:
    """
    Declaration of an opaque function of `nargs` arguments.

    evaluator_factory(order) returns a numpy callable for that partial
    derivative or None when no evaluator can be produced.
    derivative_rule(order, index, args) may return an exact expression for the
    derivative of the order-`order` node in argument `index`.
    """

    def __init__(self, name: str, nargs: int,
                 evaluator_factory: Callable[[Order], Optional[Callable]],
                 max_order: int = 4,
                 derivative_rule: Optional[DerivativeRule] = None,
                 description: str = ""):
        self.name = name
        self.nargs = nargs
        self.evaluator_factory = evaluator_factory
        self.max_order = max_order
        self.derivative_rule = derivative_rule
        self.description = description
        self._classes: Dict[Order, type] = {}

    def __repr__(self):
        return f"OpaqueSpec({self.name!r}, nargs={self.nargs})"

    def applied_class(self, order: Optional[Order] = None) -> type:
        order = tuple(order) if order is not None else (0,) * self.nargs
        cls = self._classes.get(order)
        if cls is not None:
            return cls
        if sum(order) > self.max_order:
            raise DifferentiationError(
                f"{self.name}: derivative order {order} exceeds registered order {self.max_order}"
            )
        evaluator = self.evaluator_factory(order)
        if evaluator is None:
            raise DifferentiationError(f"{self.name}: no evaluator for derivative order {order}")
        cls = type(class_name(self.name, order), (OpaqueApplied,), {
            "nargs": self.nargs,
            "_spec": self,
            "_order": order,
            "_imp_": staticmethod(evaluator),
        })
        self._classes[order] = cls
        return cls

    def __call__(self, *args) -> sp.Expr:
        return self.applied_class()(*args)


def opaque_nodes(expr: sp.Expr):
    return {node for node in expr.atoms(sp.Function) if isinstance(node, OpaqueApplied)}


def defined_function(name: str, params: Sequence[sp.Symbol], body: sp.Expr,
                     max_order: int = 4) -> OpaqueSpec:
    """
    Opaque function given by a formula; evaluators for every partial derivative
    up to `max_order` are generated from the body.
    """
    params = tuple(params)

    def factory(order: Order) -> Callable:
        expr = body
        for sym, k in zip(params, order):
            if k:
                expr = sp.diff(expr, sym, k)
        return compile_numeric(expr, params)

    spec = OpaqueSpec(name, len(params), factory, max_order=max_order,
                      description=f"{name}({', '.join(p.name for p in params)}) = {body}")
    spec.params = params
    spec.body = body
    return spec


def gauss_legendre(nodes: int = QUADRATURE_NODES) -> Tuple[np.ndarray, np.ndarray]:
    key = ("gauss_legendre", nodes)
    cached = cache_service.get_local(key)
    if cached is None:
        cached = roots_legendre(nodes)
        cache_service.set_local(key, cached)
    return cached


def quadrature_function(name: str, integrand: sp.Expr, var: sp.Symbol, lower: float,
                        params: Sequence[sp.Symbol] = (), nodes: int = QUADRATURE_NODES) -> OpaqueSpec:
    """
    Q(w, p...) = integral of `integrand`(var, p...) for var from `lower` to w.

    dQ/dw is the integrand itself; a parameter derivative is the quadrature of
    the differentiated integrand, so every derivative stays exact.
    """
    params = tuple(params)
    symbols = (var, *params)
    integrand_fn = compile_numeric(integrand, symbols)
    x, w = gauss_legendre(nodes)
    children: Dict[int, OpaqueSpec] = {}

    def evaluate(upper, *values):
        upper = np.asarray(upper, dtype=float)
        arrays = np.broadcast_arrays(upper, *[np.asarray(v, dtype=float) for v in values])
        upper, values = arrays[0], arrays[1:]
        half = 0.5 * (upper - lower)
        points = lower + half[..., None] * (1.0 + x)
        args = [v[..., None] for v in values]
        g = np.broadcast_to(integrand_fn(points, *args), points.shape)
        return half * np.sum(g * w, axis=-1)

    def factory(order: Order) -> Optional[Callable]:
        return evaluate if not any(order) else None

    def rule(order: Order, index: int, args: Tuple[sp.Expr, ...]) -> sp.Expr:
        binding = dict(zip(symbols, args))
        if index == 0:
            return integrand.xreplace(binding)
        child = children.get(index)
        if child is None:
            child = quadrature_function(f"{name}_d{index}", sp.diff(integrand, params[index - 1]),
                                        var, lower, params, nodes)
            children[index] = child
        return child(*args)

    spec = OpaqueSpec(name, len(symbols), factory, derivative_rule=rule,
                      description=f"integral of {integrand} d{var} from {lower}")
    spec.integrand = integrand
    spec.var = var
    spec.lower = lower
    return spec


def inverse_function(name: str, forward: sp.Expr, unknown: sp.Symbol, bracket: Tuple[float, float],
                     params: Sequence[sp.Symbol] = (),
                     initial_guess: Optional[Callable] = None,
                     tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER) -> OpaqueSpec:
    """
    G(z, p...) = the w in `bracket` with forward(w, p...) = z, for forward
    monotone in w. Derivatives follow from the implicit function theorem:
    G_z = 1/f_w(G), G_p = -f_p(G)/f_w(G).
    """
    params = tuple(params)
    symbols = (unknown, *params)
    f = compile_numeric(forward, symbols)
    fw_expr = sp.diff(forward, unknown)
    fw = compile_numeric(fw_expr, symbols)
    lo, hi = bracket

    def evaluate(target, *values):
        target = np.asarray(target, dtype=float)
        arrays = np.broadcast_arrays(target, *[np.asarray(v, dtype=float) for v in values])
        target, values = arrays[0], arrays[1:]
        shape = target.shape
        a = np.full(shape, lo, dtype=float)
        b = np.full(shape, hi, dtype=float)
        with np.errstate(all="ignore"):
            fa = np.broadcast_to(f(a, *values), shape) - target
            fb = np.broadcast_to(f(b, *values), shape) - target
            rising = fb >= fa
            outside = np.sign(fa) * np.sign(fb) > 0
            w = initial_guess(target) if initial_guess is not None else 0.5 * (a + b)
            w = np.where(np.isfinite(w) & (w > a) & (w < b), w, 0.5 * (a + b))
            done = outside.copy()
            for _ in range(max_iter):
                r = np.broadcast_to(f(w, *values), shape) - target
                converged = np.abs(r) <= tol * (1.0 + np.abs(target))
                done = done | converged
                if done.all():
                    break
                above = np.where(rising, r > 0, r < 0)
                b = np.where(above & ~done, w, b)
                a = np.where(~above & ~done, w, a)
                slope = np.broadcast_to(fw(w, *values), shape)
                step = w - r / slope
                safe = np.isfinite(step) & (step > a) & (step < b)
                w = np.where(done, w, np.where(safe, step, 0.5 * (a + b)))
        result = np.where(outside, np.nan, w)
        return result

    def factory(order: Order) -> Optional[Callable]:
        return evaluate if not any(order) else None

    def rule(order: Order, index: int, args: Tuple[sp.Expr, ...]) -> sp.Expr:
        g = spec(*args)
        binding = {unknown: g, **dict(zip(params, args[1:]))}
        slope = fw_expr.xreplace(binding)
        if index == 0:
            return 1 / slope
        return -sp.diff(forward, params[index - 1]).xreplace(binding) / slope

    spec = OpaqueSpec(name, len(symbols), factory, derivative_rule=rule,
                      description=f"inverse of {forward} in {unknown}")
    spec.forward = forward
    spec.unknown = unknown
    spec.bracket = bracket
    return spec
