"""
Fibered maps (t, x, u) -> (tau(t), y(t,x), v(t,x,u)) between parabolic
equations.

A map is a morphism when the quotient candidates B^kl, C^kl, B^k and Q,
computed in source variables, are constant along every fiber. The quotient
equation is then read off through a section of the map.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from scipy.optimize import minimize

from parafact.core.config import DEFAULT_PAIRS, DEFAULT_SAMPLES, DEFAULT_SEED, DEFAULT_TOL, SUBMERSION_TOL
from parafact.core.exceptions import InputError, NewtonError
from parafact.domain import Domain, Interval, Periodic
from parafact.equation import ParabolicEquation, index_pairs
from parafact.expr import (
    VariableContext,
    VarRole,
    compare_values,
    evaluate_batch,
    make_symbol,
    mod,
    tidy,
    to_text,
)
from parafact.oracle import BatchMap, fiber_pairs, in_domain, newton_invert, row, sample
from parafact.schemas import (
    SHAPE_ORDER,
    FiberPairSet,
    IsomorphismReport,
    MapShape,
    MorphismReport,
    MorphismVerdict,
    ResidualStats,
    Verdict,
    VerdictStatus,
)
from parafact.services.cache_service import cache_service

logger = logging.getLogger(__name__)

FORM_HINT = "maps must have the form (tau(t), y(t,x), v(t,x,u))"


def _is_zero(expr: sp.Expr) -> bool:
    expr = sp.sympify(expr)
    if expr == 0:
        return True
    try:
        return tidy(expr) == 0
    except Exception:
        return False


@dataclass
class FiberedMap:
    """
    source = [t, x..., u], target = [tau, y..., v]. The optional section
    gives [t, x..., u] as expressions in the target symbols.
    """
    name: str
    source: List[sp.Symbol]
    target: List[sp.Symbol]
    tau: sp.Expr
    ys: List[sp.Expr]
    v: sp.Expr
    section: Optional[List[sp.Expr]] = None
    target_axes: Dict[str, object] = field(default_factory=dict)
    declared_shape: Optional[MapShape] = None
    context: Optional[VariableContext] = None

    def __post_init__(self):
        self.check_form()
        if self.declared_shape is not None:
            inferred = infer_shape(self)
            if SHAPE_ORDER.index(self.declared_shape) > SHAPE_ORDER.index(inferred):
                raise InputError(f"map {self.name}: declared shape {self.declared_shape.value} "
                                 f"but the components only have shape {inferred.value}")

    @property
    def n(self) -> int:
        return len(self.source) - 2

    @property
    def m(self) -> int:
        return len(self.ys)

    @property
    def components(self) -> List[sp.Expr]:
        return [self.tau, *self.ys, self.v]

    @property
    def shape(self) -> MapShape:
        return self.declared_shape if self.declared_shape is not None else infer_shape(self)

    def check_form(self):
        if len(self.target) != self.m + 2:
            raise InputError(f"map {self.name}: {len(self.target)} target variables for {self.m} y-components")
        if self.m > self.n:
            raise InputError(f"map {self.name}: {self.m} target base variables exceed {self.n} source ones")
        t, xs, u = self.source[0], set(self.source[1:-1]), self.source[-1]
        others = set(self.target)
        if self.tau.free_symbols & (xs | {u} | others):
            raise InputError(f"map {self.name}: tau depends on more than t; {FORM_HINT}")
        for k, y in enumerate(self.ys):
            if y.free_symbols & ({u} | others):
                raise InputError(f"map {self.name}: y.{k + 1} depends on u; {FORM_HINT}")
        if self.v.free_symbols & others:
            raise InputError(f"map {self.name}: v uses target variables; {FORM_HINT}")
        if self.section is not None and len(self.section) != len(self.source):
            raise InputError(f"map {self.name}: section has {len(self.section)} entries, "
                             f"expected {len(self.source)}")

    def bind(self, source: Optional[Sequence[sp.Symbol]] = None,
             target: Optional[Sequence[sp.Symbol]] = None) -> "FiberedMap":
        """Same map over other symbols, matched by position."""
        src = list(source) if source is not None else self.source
        tgt = list(target) if target is not None else self.target
        if len(src) != len(self.source):
            raise InputError(f"map {self.name} has {self.n} source base variables, got {len(src) - 2}")
        if len(tgt) != len(self.target):
            raise InputError(f"map {self.name} has {self.m} target base variables, got {len(tgt) - 2}")
        s_map = dict(zip(self.source, src))
        t_map = dict(zip(self.target, tgt))
        section = None
        if self.section is not None:
            section = [e.xreplace(t_map) for e in self.section]
        return replace(
            self,
            source=src,
            target=tgt,
            tau=self.tau.xreplace(s_map),
            ys=[y.xreplace(s_map) for y in self.ys],
            v=self.v.xreplace(s_map),
            section=section,
            target_axes={t_map[s].name: self.target_axes[s.name] for s in self.target
                         if s.name in self.target_axes},
        )

    def unwrapped(self) -> Tuple[List[sp.Expr], List[Optional[float]]]:
        """Components with top-level mod removed, and their periods."""
        exprs, periods = [], []
        for sym, comp in zip(self.target, self.components):
            axis = self.target_axes.get(sym.name)
            period = axis.modulus if isinstance(axis, Periodic) else None
            if isinstance(comp, mod):
                comp, modulus = comp.args
                period = period or float(modulus)
            exprs.append(comp)
            periods.append(period)
        return exprs, periods

    def __str__(self) -> str:
        return f"({', '.join(to_text(c) for c in self.components)})"


def infer_shape(F: FiberedMap) -> MapShape:
    """Most special map shape the components match."""
    t, u = F.source[0], F.source[-1]
    if not _is_zero(F.tau - t):
        return MapShape.PE_GENERAL
    if not _is_zero(sp.diff(F.v, u, 2)):
        return MapShape.TPE
    if any(t in y.free_symbols for y in F.ys):
        return MapShape.QPE_AFFINE
    if _is_zero(F.v - u):
        return MapShape.EPE
    phi = sp.diff(F.v, u)
    psi = F.v - phi * u
    if t not in phi.free_symbols and t not in psi.free_symbols:
        return MapShape.AQPE_AFFINE
    return MapShape.SQPE


class FiberDifferentialOps:
    """
    Derivatives of the fiber inverse u = U(t,x,v), written in source
    variables. D_j differentiates in x_j at fixed v.
    """

    def __init__(self, v: sp.Expr, t: sp.Symbol, xs: Sequence[sp.Symbol], u: sp.Symbol):
        self.v = v
        self.t = t
        self.xs = list(xs)
        self.u = u
        self.v_u = sp.diff(v, u)
        self.U_v = 1 / self.v_u
        self.U_t = -sp.diff(v, t) / self.v_u
        self.U = [-sp.diff(v, x) / self.v_u for x in self.xs]
        self.lnUv_v = -sp.diff(v, u, 2) / self.v_u ** 2
        self.lnUv = [-self.D(self.v_u, j) / self.v_u for j in range(len(self.xs))]
        self.U2 = [[self.D(self.U[i], j) for j in range(len(self.xs))] for i in range(len(self.xs))]

    def D(self, f: sp.Expr, j: int) -> sp.Expr:
        x = self.xs[j]
        return sp.diff(f, x) - sp.diff(self.v, x) / self.v_u * sp.diff(f, self.u)


def quotient_candidates(eq: ParabolicEquation, F: FiberedMap) -> Dict[str, sp.Expr]:
    """
    B.k.l, C.k.l, B.k and Q of the pushforward, as functions of (t, x, u).
    F must already be bound to the equation's symbols.
    """
    t, xs = eq.t.symbol, eq.base_symbols
    ops = FiberDifferentialOps(F.v, t, xs, eq.u.symbol)
    tau_t = sp.diff(F.tau, t)
    n, m = eq.n, F.m
    dy = [[sp.diff(F.ys[k], xs[i]) for i in range(n)] for k in range(m)]

    def contract(matrix: sp.Matrix, k: int, l: int) -> sp.Expr:
        return sp.Add(*[matrix[i, j] * dy[k][i] * dy[l][j] for i in range(n) for j in range(n)])

    out: Dict[str, sp.Expr] = {}
    for k, l in index_pairs(m):
        out[f"B.{k + 1}.{l + 1}"] = tidy(contract(eq.b, k, l) / tau_t)
    for k, l in index_pairs(m):
        out[f"C.{k + 1}.{l + 1}"] = tidy((ops.lnUv_v * contract(eq.b, k, l)
                                          + ops.U_v * contract(eq.c, k, l)) / tau_t)
    for k in range(m):
        y = F.ys[k]
        total = sp.Add(*[eq.b[i, j] * sp.diff(y, xs[i], xs[j]) for i in range(n) for j in range(n)])
        total += 2 * sp.Add(*[eq.b[i, j] * ops.lnUv[j] * dy[k][i] for i in range(n) for j in range(n)])
        total += 2 * sp.Add(*[eq.c[i, j] * ops.U[j] * dy[k][i] for i in range(n) for j in range(n)])
        total += sp.Add(*[eq.bvec[i] * dy[k][i] for i in range(n)])
        total -= sp.diff(y, t)
        out[f"B.{k + 1}"] = tidy(total / tau_t)
    q = sp.Add(*[eq.b[i, j] * ops.U2[i][j] for i in range(n) for j in range(n)])
    q += sp.Add(*[eq.c[i, j] * ops.U[i] * ops.U[j] for i in range(n) for j in range(n)])
    q += sp.Add(*[eq.bvec[i] * ops.U[i] for i in range(n)])
    q += eq.q - ops.U_t
    out["Q"] = tidy(q / (tau_t * ops.U_v))
    return out


class _SubmersionProbe:
    def __init__(self, F: FiberedMap):
        t, xs, u = F.source[0], F.source[1:-1], F.source[-1]
        self.m, self.n = F.m, F.n
        self.tau_t = sp.diff(F.tau, t)
        self.v_u = sp.diff(F.v, u)
        self.jacobian = [[sp.diff(y, x) for x in xs] for y in F.ys]

    def measures(self, columns: Dict[str, np.ndarray]) -> List[Tuple[str, np.ndarray]]:
        count = len(next(iter(columns.values())))
        tau_t = np.abs(evaluate_batch(self.tau_t, columns))
        v_u = np.abs(evaluate_batch(self.v_u, columns))
        sigma = np.full(count, np.inf)
        if self.m:
            J = np.empty((count, self.m, self.n))
            for k, entries in enumerate(self.jacobian):
                for i, entry in enumerate(entries):
                    J[:, k, i] = evaluate_batch(entry, columns)
            finite = np.isfinite(J).all(axis=(1, 2))
            sigma[~finite] = np.nan
            if finite.any():
                sigma[finite] = np.linalg.svd(J[finite], compute_uv=False)[:, -1]
        return [("tau_t", tau_t), ("smallest singular value of dy/dx", sigma), ("v_u", v_u)]


def _refine_minimum(probe: _SubmersionProbe, index: int, dom: Domain, start: Dict[str, float]):
    """Local minimum of one submersion measure near a sample, kept inside the domain."""
    names = dom.names
    bounds = []
    for lo, hi in dom.windows():
        pad = 1e-3 * (hi - lo)
        bounds.append((lo + pad, hi - pad))

    def objective(p: np.ndarray) -> float:
        value = probe.measures({n: np.array([p[j]]) for j, n in enumerate(names)})[index][1][0]
        return float(value) if np.isfinite(value) else 1e300

    x0 = np.clip([start[n] for n in names], [b[0] for b in bounds], [b[1] for b in bounds])
    result = minimize(objective, x0, method="Nelder-Mead", bounds=bounds,
                      options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 400 * len(names)})
    point = {n: float(result.x[j]) for j, n in enumerate(names)}
    inside = bool(in_domain(dom, {n: np.array([v]) for n, v in point.items()})[0])
    return float(result.fun), point, inside


def check_submersion(F: FiberedMap, dom: Domain, samples: int = DEFAULT_SAMPLES,
                     tol: float = SUBMERSION_TOL, seed: int = DEFAULT_SEED) -> Verdict:
    """
    Pass iff |tau_t|, the smallest singular value of dy/dx and |v_u| all
    exceed tol. The smallest sampled value of each measure is refined by a
    local minimization before deciding.
    """
    if F.m > F.n:
        return Verdict(status=VerdictStatus.FAIL, seed=seed, detail=f"target dimension {F.m} > {F.n}")
    probe = _SubmersionProbe(F)
    columns = sample(dom, samples, seed)
    count = len(next(iter(columns.values())))
    measures = probe.measures(columns)
    finite = np.ones(count, dtype=bool)
    for _, values in measures:
        finite &= ~np.isnan(values)
    singular = int(count - finite.sum())
    if singular > 0.2 * count:
        return Verdict(status=VerdictStatus.INCONCLUSIVE, samples=count, singular=singular, seed=seed,
                       detail=f"{singular} of {count} samples singular")
    smallest = {}
    for index, (label, values) in enumerate(measures):
        bad = np.flatnonzero(finite & (values <= tol))
        if len(bad):
            i = int(bad[0])
            return Verdict(status=VerdictStatus.FAIL, witness=[row(columns, i)], samples=count,
                           singular=singular, seed=seed, detail=f"{label} = {values[i]:.3g} <= {tol:g}")
        if not finite.any() or np.isinf(values[finite]).all():
            continue
        i = int(np.flatnonzero(finite)[np.argmin(values[finite])])
        low, point, inside = _refine_minimum(probe, index, dom, row(columns, i))
        if inside and low <= tol:
            logger.info(f"submersion fails for {F.name}: {label} vanishes near {point}")
            return Verdict(status=VerdictStatus.FAIL, witness=[point], samples=count, singular=singular,
                           seed=seed, detail=f"{label} = {low:.3g} <= {tol:g}")
        smallest[label] = min(float(values[i]), low)
    detail = ", ".join(f"min {k} {v:.3g}" for k, v in smallest.items())
    return Verdict(status=VerdictStatus.PASS, samples=count, singular=singular, seed=seed, detail=detail)


def map_fiber_pairs(F: FiberedMap, dom: Domain, count: int = DEFAULT_PAIRS, tol: float = DEFAULT_TOL,
                    seed: int = DEFAULT_SEED) -> FiberPairSet:
    """Fiber pairs of F, memoized in the L1 cache per map, domain and seed."""
    exprs, periods = F.unwrapped()
    key = ("fiber_pairs", tuple(exprs), tuple(periods), tuple(F.source), tuple(s.name for s in F.target),
           tuple(dom.axes.items()), tuple(dom.predicates), count, tol, seed)
    cached = cache_service.get_local(key)
    if cached is not None:
        return cached
    fmap = BatchMap(exprs, F.source)
    pair_set = fiber_pairs(fmap, periods, dom, count, tol, seed, target_names=[s.name for s in F.target])
    cache_service.set_local(key, pair_set)
    return pair_set


def fiber_constancy(cand: sp.Expr, F: FiberedMap, dom: Domain, pairs: int = DEFAULT_PAIRS,
                    tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED,
                    pair_set: Optional[FiberPairSet] = None) -> Verdict:
    """
    Pass iff |cand(p1) - cand(p2)| <= tol (1 + |cand(p1)|) on every fiber pair.
    """
    if pair_set is None:
        pair_set = map_fiber_pairs(F, dom, pairs, tol, seed)
    found = len(pair_set.pairs)
    if not found:
        if pair_set.discrete:
            return Verdict(status=VerdictStatus.PASS, seed=seed, detail="discrete fiber")
        return Verdict(status=VerdictStatus.INCONCLUSIVE, seed=seed, detail="no fiber pairs found")
    if found < 0.1 * pair_set.requested:
        return Verdict(status=VerdictStatus.INCONCLUSIVE, seed=seed, samples=found,
                       detail=f"only {found} of {pair_set.requested} fiber pairs found")

    names = [s.name for s in F.source]
    first = {n: np.array([p.p1[n] for p in pair_set.pairs]) for n in names}
    second = {n: np.array([p.p2[n] for p in pair_set.pairs]) for n in names}
    c1 = evaluate_batch(cand, first)
    c2 = evaluate_batch(cand, second)
    finite = np.isfinite(c1) & np.isfinite(c2)
    singular = int(found - finite.sum())
    if singular > 0.2 * found:
        return Verdict(status=VerdictStatus.INCONCLUSIVE, samples=found, singular=singular, seed=seed,
                       detail=f"{singular} of {found} fiber pairs singular")
    scaled = np.zeros(found)
    scaled[finite] = np.abs(c1[finite] - c2[finite]) / (1.0 + np.abs(c1[finite]))
    stats = dict(max_residual=float(scaled.max()), mean_residual=float(scaled[finite].mean()),
                 samples=int(finite.sum()), singular=singular, seed=seed)
    bad = np.flatnonzero(finite & (scaled > tol))
    if len(bad):
        pair = pair_set.pairs[int(bad[0])]
        i = int(bad[0])
        return Verdict(status=VerdictStatus.FAIL, witness=[pair.p1, pair.p2],
                       detail=f"{c1[i]:.6g} != {c2[i]:.6g} on one fiber", **stats)
    return Verdict(status=VerdictStatus.PASS, **stats)


def image_columns(F: FiberedMap, columns: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """F applied to sample columns; periodic components land in their window."""
    exprs, periods = F.unwrapped()
    out = {}
    for sym, expr, period in zip(F.target, exprs, periods):
        values = evaluate_batch(expr, columns)
        if period:
            axis = F.target_axes.get(sym.name)
            start = axis.start if isinstance(axis, Periodic) else 0.0
            values = start + np.mod(values - start, period)
        out[sym.name] = values
    return out


def verify_section(F: FiberedMap, section: Sequence[sp.Expr], dom: Domain, samples: int = DEFAULT_SAMPLES,
                   tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED) -> Verdict:
    """F(section(w)) = w on images of sampled source points, modulo target periods."""
    columns = sample(dom, min(samples, 256), seed + 3)
    target = image_columns(F, columns)
    back = {s.name: evaluate_batch(e, target) for s, e in zip(F.source, section)}
    exprs, periods = F.unwrapped()
    verdicts = []
    for sym, expr, period in zip(F.target, exprs, periods):
        diff = evaluate_batch(expr, back) - target[sym.name]
        if period:
            diff = diff - period * np.round(diff / period)
        verdicts.append(compare_values(diff, np.zeros_like(diff), target, tol, seed))
    return Verdict.combine(verdicts)


def _solve_for(equations, unknowns: Sequence[sp.Symbol]) -> List[Dict[sp.Symbol, sp.Expr]]:
    if not unknowns:
        return [{}]
    solutions = sp.solve(equations, list(unknowns), dict=True)
    keep = []
    for solution in solutions[:4]:
        if all(s in solution for s in unknowns):
            if not any(solution[s].free_symbols & set(unknowns) for s in unknowns):
                keep.append(solution)
    return keep


def solve_section(F: FiberedMap, dom: Domain, samples: int = DEFAULT_SAMPLES, tol: float = DEFAULT_TOL,
                  seed: int = DEFAULT_SEED) -> Optional[List[sp.Expr]]:
    """
    Triangular symbolic solve: tau for t, then y for x, then v for u. The
    first solution branch that verifies numerically wins.
    """
    if F.m != F.n:
        return None
    exprs, _ = F.unwrapped()
    t, xs, u = F.source[0], F.source[1:-1], F.source[-1]
    tau_s, y_s, v_s = F.target[0], F.target[1:-1], F.target[-1]
    try:
        for t_sol in _solve_for(exprs[0] - tau_s, [t]):
            y_eqs = [g.xreplace(t_sol) - y for g, y in zip(exprs[1:-1], y_s)]
            for x_sol in _solve_for(y_eqs, xs):
                binding = {**t_sol, **x_sol}
                for u_sol in _solve_for(exprs[-1].xreplace(binding) - v_s, [u]):
                    section = [tidy(t_sol[t]), *[tidy(x_sol[x]) for x in xs], tidy(u_sol[u])]
                    if verify_section(F, section, dom, samples, tol, seed).passed:
                        logger.info(f"solved section of {F.name}: {', '.join(to_text(e) for e in section)}")
                        return section
    except Exception as e:
        logger.debug(f"symbolic section of {F.name} failed: {e}")
    return None


def _limit(expr: sp.Expr, s: sp.Symbol, value: float, direction: str) -> Optional[float]:
    point = sp.oo if value == math.inf else (-sp.oo if value == -math.inf else sp.nsimplify(value))
    try:
        result = sp.limit(expr, s, point, dir=direction)
    except Exception:
        return None
    if result in (sp.oo, -sp.oo):
        return math.inf if result == sp.oo else -math.inf
    if result.is_real and result.is_finite:
        return float(result)
    return None


def _image_axis(expr: sp.Expr, F: FiberedMap, dom: Domain, columns: Dict[str, np.ndarray]):
    used = expr.free_symbols & set(F.source)
    if len(used) == 1:
        s = next(iter(used))
        axis = dom.axis(s.name)
        if expr == s:
            return axis
        if isinstance(axis, Interval):
            slope = evaluate_batch(sp.diff(expr, s), columns)
            if np.isfinite(slope).all() and (np.all(slope > 0) or np.all(slope < 0)):
                ends = [_limit(expr, s, axis.lo, "+"), _limit(expr, s, axis.hi, "-")]
                if None not in ends:
                    lo, hi = sorted(ends)
                    if lo < hi:
                        return Interval(lo, hi)
    values = evaluate_batch(expr, columns)
    values = values[np.isfinite(values)]
    if not len(values):
        return Interval()
    lo, hi = float(values.min()), float(values.max())
    if not lo < hi:
        lo, hi = lo - 1.0, hi + 1.0
    return Interval(lo, hi, True, True)


def target_domain(F: FiberedMap, dom: Domain, samples: int = DEFAULT_SAMPLES,
                  seed: int = DEFAULT_SEED) -> Domain:
    """
    Domain of the quotient: declared target axes first, then periods of
    mod components, then the image of the source domain.
    """
    exprs, periods = F.unwrapped()
    columns = sample(dom, samples, seed + 1)
    axes = {}
    for sym, expr, period in zip(F.target, exprs, periods):
        declared = F.target_axes.get(sym.name)
        if declared is not None:
            axes[sym.name] = declared
        elif period:
            axes[sym.name] = Periodic(period)
        else:
            axes[sym.name] = _image_axis(expr, F, dom, columns)
    return Domain(axes)


def _positive(axis) -> bool:
    return isinstance(axis, Interval) and axis.lo >= 0


def quotient_names(m: int) -> List[str]:
    return ["t", *(["x"] if m == 1 else [f"x{k + 1}" for k in range(m)]), "u"]


def build_quotient_equation(eq: ParabolicEquation, F: FiberedMap, quotient: Dict[str, sp.Expr],
                            target_dom: Domain) -> ParabolicEquation:
    """The quotient as an equation in canonical variables (t, x..., u)."""
    m = F.m
    names = quotient_names(m)
    axes = [target_dom.axis(s.name) for s in F.target]
    ctx = VariableContext()
    ctx.functions = dict(eq.context.functions)
    if F.context is not None:
        ctx.functions.update(F.context.functions)
    t = ctx.declare(names[0], VarRole.TIME, positive=_positive(axes[0]))
    xs = [ctx.declare(names[k + 1], VarRole.BASE, index=k + 1, positive=_positive(axes[k + 1])) for k in range(m)]
    u = ctx.declare(names[-1], VarRole.FIBER, positive=_positive(axes[-1]))
    rename = dict(zip(F.target, [t.symbol, *[x.symbol for x in xs], u.symbol]))

    def get(key: str) -> sp.Expr:
        return tidy(quotient[key].xreplace(rename))

    b = sp.zeros(m, m)
    c = sp.zeros(m, m)
    for k, l in index_pairs(m):
        b[k, l] = b[l, k] = get(f"b.{k + 1}.{l + 1}")
        c[k, l] = c[l, k] = get(f"c.{k + 1}.{l + 1}")
    bvec = [get(f"b.{k + 1}") for k in range(m)]
    dom = Domain({name: axis for name, axis in zip(names, axes)})
    compact = m > 0 and all(isinstance(a, Periodic) for a in axes[1:-1])
    return ParabolicEquation(name=f"{eq.name}/{F.name}", context=ctx, t=t, xs=xs, u=u, dom=dom,
                             b=b, c=c, bvec=bvec, q=get("q"), compact=compact)


def gauge_view(F: FiberedMap) -> Optional[Dict[str, str]]:
    """phi, psi and their inverses when v = phi u + psi."""
    u = F.source[-1]
    if not _is_zero(sp.diff(F.v, u, 2)):
        return None
    phi = tidy(sp.diff(F.v, u))
    psi = tidy(F.v - phi * u)
    return {
        "phi": to_text(phi),
        "psi": to_text(psi),
        "phibar": to_text(tidy(1 / phi)),
        "psibar": to_text(tidy(-psi / phi)),
    }


def _tabulate_implicit(F: FiberedMap, candidates: Dict[str, sp.Expr], dom: Domain, target_dom: Domain,
                       seed: int, count: int = 16) -> List[Dict[str, float]]:
    exprs, periods = F.unwrapped()
    points = sample(target_dom, count, seed + 4)
    table = []
    for i in range(count):
        target = [float(points[s.name][i]) for s in F.target]
        try:
            preimage = newton_invert(exprs, F.source, target, dom, seed, periods)
        except NewtonError:
            continue
        columns = {k: np.array([v]) for k, v in preimage.items()}
        entry = {s.name: value for s, value in zip(F.target, target)}
        for key, cand in candidates.items():
            entry[key] = float(evaluate_batch(cand, columns)[0])
        table.append(entry)
    return table


def pushforward(eq: ParabolicEquation, F: FiberedMap, target_dom: Optional[Domain] = None,
                samples: int = DEFAULT_SAMPLES, tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED,
                pairs: int = DEFAULT_PAIRS, submersion_tol: float = SUBMERSION_TOL) -> MorphismReport:
    """
    Decide whether F is a morphism out of eq and, if so, compute the
    quotient equation.
    """
    F = F.bind(source=eq.symbols)
    report = MorphismReport(verdict=MorphismVerdict.INCONCLUSIVE, seed=seed, shape=F.shape,
                            tolerances={"tol": tol, "submersion": submersion_tol})

    submersion = check_submersion(F, eq.dom, samples, submersion_tol, seed)
    report.checks["submersion"] = submersion
    if not submersion.passed:
        if submersion.status == VerdictStatus.FAIL:
            report.verdict = MorphismVerdict.REJECTED
            report.failing_candidate = "submersion"
            report.witness = submersion.witness
        report.notes.append(f"not a submersion: {submersion.detail}")
        logger.info(f"{F.name} on {eq.name}: {report.verdict.value} ({submersion.detail})")
        return report

    candidates = quotient_candidates(eq, F)
    report.candidates = {key: to_text(expr) for key, expr in candidates.items()}
    pair_set = map_fiber_pairs(F, eq.dom, pairs, tol, seed)
    if pair_set.discrete:
        report.notes.append("discrete fiber: every candidate descends")

    for key, cand in candidates.items():
        verdict = fiber_constancy(cand, F, eq.dom, pairs, tol, seed, pair_set)
        report.checks[key] = verdict
        if verdict.status == VerdictStatus.FAIL and report.failing_candidate is None:
            report.failing_candidate = key
            report.witness = verdict.witness
    if report.failing_candidate is not None:
        report.verdict = MorphismVerdict.REJECTED
        logger.info(f"{F.name} on {eq.name}: Rejected, {report.failing_candidate} is not fiber-constant")
        return report
    stuck = [k for k, v in report.checks.items() if v.status == VerdictStatus.INCONCLUSIVE]
    if stuck:
        report.notes.append(f"fiber-constancy inconclusive for {', '.join(stuck)}")
        logger.warning(f"{F.name} on {eq.name}: Inconclusive ({report.checks[stuck[0]].detail})")
        return report

    report.gauge = gauge_view(F)
    target_dom = target_dom or target_domain(F, eq.dom, samples, seed)
    F = F.bind(target=[make_symbol(s.name, positive=_positive(target_dom.axis(s.name))) for s in F.target])

    section = F.section
    if section is not None:
        check = verify_section(F, section, eq.dom, samples, tol, seed)
        if not check.passed:
            report.notes.append(f"supplied section does not invert the map: {check.detail}")
            section = None
    if section is None:
        section = solve_section(F, eq.dom, samples, tol, seed)
        if section is not None:
            report.notes.append("section solved symbolically")

    fiber_stats = Verdict.combine([v for k, v in report.checks.items() if k != "submersion"])
    if section is None:
        report.implicit_quotient = True
        report.implicit_table = _tabulate_implicit(F, candidates, eq.dom, target_dom, seed)
        report.notes.append("no section: the quotient is known on samples only")
        report.residuals = ResidualStats(max=fiber_stats.max_residual, mean=fiber_stats.mean_residual,
                                         count=fiber_stats.samples)
        report.verdict = MorphismVerdict.ACCEPTED
        logger.info(f"{F.name} on {eq.name}: Accepted (implicit quotient)")
        return report

    binding = dict(zip(F.source, section))
    quotient = {key.lower(): tidy(expr.xreplace(binding)) for key, expr in candidates.items()}

    columns = sample(eq.dom, samples, seed + 2)
    images = image_columns(F, columns)
    verdicts = []
    for key, cand in candidates.items():
        verdict = compare_values(evaluate_batch(quotient[key.lower()], images), evaluate_batch(cand, columns),
                                 columns, tol, seed)
        if verdict.status == VerdictStatus.FAIL and report.failing_candidate is None:
            report.failing_candidate = key
            report.witness = verdict.witness
        verdicts.append(verdict)
    cross = Verdict.combine(verdicts)
    report.checks["quotient"] = cross
    report.quotient = {key: to_text(expr) for key, expr in quotient.items()}
    report.residuals = ResidualStats(max=cross.max_residual, mean=cross.mean_residual, count=cross.samples)
    if cross.status == VerdictStatus.FAIL:
        report.verdict = MorphismVerdict.REJECTED
        report.notes.append(f"quotient does not reproduce {report.failing_candidate}: {cross.detail}")
        return report
    if cross.status == VerdictStatus.INCONCLUSIVE:
        report.notes.append(f"quotient cross-check inconclusive: {cross.detail}")
        return report

    report.quotient_equation = build_quotient_equation(eq, F, quotient, target_dom)
    report.verdict = MorphismVerdict.ACCEPTED
    logger.info(f"{F.name} on {eq.name}: Accepted, max residual {cross.max_residual:.3g}")
    return report


def compose(F: FiberedMap, G: FiberedMap) -> FiberedMap:
    """G after F: G's source variables are fed F's components by position."""
    if len(G.source) != len(F.target):
        raise InputError(f"cannot compose {F.name} (to {F.m} base variables) with "
                         f"{G.name} (from {G.n} base variables)")
    binding = dict(zip(G.source, F.components))
    components = [tidy(c.xreplace(binding)) for c in G.components]
    section = None
    if F.section is not None and G.section is not None:
        inner = dict(zip(F.target, G.section))
        section = [tidy(e.xreplace(inner)) for e in F.section]
    context = None
    if F.context is not None or G.context is not None:
        context = VariableContext()
        for part in (F.context, G.context):
            if part is not None:
                context.functions.update(part.functions)
    composite = FiberedMap(name=f"{G.name}*{F.name}", source=list(F.source), target=list(G.target),
                           tau=components[0], ys=components[1:-1], v=components[-1], section=section,
                           target_axes=dict(G.target_axes), context=context)
    weakest = min(F.shape, G.shape, key=SHAPE_ORDER.index)
    if SHAPE_ORDER.index(weakest) <= SHAPE_ORDER.index(composite.shape):
        composite.declared_shape = weakest
    return composite


def is_isomorphism(F: FiberedMap, dom: Domain, target_dom: Optional[Domain] = None,
                   samples: int = DEFAULT_SAMPLES, tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED,
                   pairs: int = DEFAULT_PAIRS) -> IsomorphismReport:
    """
    True iff dimensions agree, no two sampled points share an image and a
    section exists (supplied, solved, or by Newton on samples of target_dom,
    or of the image when no target domain is given).
    """
    submersion = check_submersion(F, dom, samples, SUBMERSION_TOL, seed)
    if not submersion.passed:
        return IsomorphismReport(is_isomorphism=False, status=submersion.status,
                                 evidence=f"not a submersion: {submersion.detail}")
    if F.m != F.n:
        return IsomorphismReport(is_isomorphism=False, status=VerdictStatus.FAIL,
                                 evidence=f"dimension drops from {F.n} to {F.m}")
    pair_set = map_fiber_pairs(F, dom, pairs, tol, seed)
    if pair_set.pairs:
        pair = pair_set.pairs[0]
        return IsomorphismReport(is_isomorphism=False, status=VerdictStatus.FAIL, collision=pair,
                                 evidence=f"{pair.p1} and {pair.p2} have the same image")
    if not pair_set.discrete:
        return IsomorphismReport(is_isomorphism=False, status=VerdictStatus.INCONCLUSIVE,
                                 evidence="fiber search did not settle injectivity")

    if F.section is not None and verify_section(F, F.section, dom, samples, tol, seed).passed:
        return IsomorphismReport(is_isomorphism=True, status=VerdictStatus.PASS,
                                 evidence="injective on samples; supplied section verified")
    if solve_section(F, dom, samples, tol, seed) is not None:
        return IsomorphismReport(is_isomorphism=True, status=VerdictStatus.PASS,
                                 evidence="injective on samples; section solved symbolically")

    exprs, periods = F.unwrapped()
    if target_dom is not None:
        images = sample(target_dom, min(samples, 32), seed + 5)
    else:
        images = image_columns(F, sample(dom, min(samples, 32), seed + 5))
    count = len(next(iter(images.values())))
    for i in range(count):
        target = [float(images[s.name][i]) for s in F.target]
        try:
            newton_invert(exprs, F.source, target, dom, seed, periods)
        except NewtonError as e:
            return IsomorphismReport(is_isomorphism=False, status=VerdictStatus.INCONCLUSIVE,
                                     evidence=f"no numeric section: {e}")
    return IsomorphismReport(is_isomorphism=True, status=VerdictStatus.PASS,
                             evidence=f"injective on samples; Newton section at {count} image points")
