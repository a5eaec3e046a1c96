"""
Canonical normalizations of parabolic equations and their morphisms:
classification of the diffusion law a(u), time reparametrization,
quasilinearization, drift removal along characteristics and gauge
canonicalization of quotients.

Each construction returns the isomorphism it built together with the
target equation, after checking the isomorphism with pushforward.
"""
import hashlib
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from parafact.core.config import (
    ACLASS_GRID,
    ACLASS_MAX_U0,
    ACLASS_MIN_WINDOW,
    ACLASS_SCAN,
    ACLASS_TOL,
    ACLASS_WINDOW_RADIUS,
    DEFAULT_PAIRS,
    DEFAULT_SAMPLES,
    DEFAULT_SEED,
    DEFAULT_TOL,
    RK4_STEPS,
)
from parafact.core.exceptions import DomainError, InconclusiveError, NormalizationError
from parafact.domain import Domain, Interval, Periodic
from parafact.equation import ParabolicEquation, equivalent, factor_pe1, factor_pe2, factor_qpe2
from parafact.expr import compare_on_samples, evaluate_batch, make_symbol, tidy, to_text
from parafact.morphism import (
    FiberedMap,
    _is_zero,
    compose,
    fiber_constancy,
    gauge_view,
    is_isomorphism,
    map_fiber_pairs,
    pushforward,
    solve_section,
    verify_section,
)
from parafact.opaque import OpaqueSpec, compile_numeric, inverse_function, opaque_nodes, quadrature_function
from parafact.oracle import integrate_flow, rk4_path, row, sample
from parafact.schemas import (
    AClass,
    AClassKind,
    MorphismReport,
    MorphismVerdict,
    Verdict,
    VerdictStatus,
)
from parafact.services.cache_service import Table, cache_service

logger = logging.getLogger(__name__)


# Diffusion-law classification

def _nice(value: float) -> float:
    """Snap to a nearby simple rational."""
    snapped = sp.nsimplify(round(float(value), 9), rational=True, tolerance=1e-8)
    return float(snapped)


def _log_a(a: sp.Expr, u: sp.Symbol) -> Callable[[np.ndarray], np.ndarray]:
    fn = compile_numeric(a, [u])

    def alpha(values: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            out = np.broadcast_to(np.asarray(fn(values), dtype=float), np.shape(values))
            if np.any(~np.isfinite(out)) or np.any(out <= 0):
                raise DomainError("a must be positive and finite on the classification window")
            return np.log(out)
    return alpha


def _linear(xs: np.ndarray, values: np.ndarray, tol: float) -> Tuple[bool, float]:
    slope, intercept = np.polyfit(xs, values, 1)
    resid = values - (slope * xs + intercept)
    spread = np.max(np.abs(values - values.mean()))
    return bool(np.max(np.abs(resid)) <= tol * (1.0 + spread)), float(slope)


def _detect_period(fn: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
                   grid: int, scan: int, tol: float) -> Optional[Tuple[float, float, float]]:
    """
    Smallest h with fn(s + h) - fn(s) constant in s, as (h, slope, residual).
    The objective is the variance of the difference over the detrended
    variance of fn; candidate h are scanned log-spaced and refined.
    """
    length = hi - lo
    xs = np.linspace(lo, hi, grid)
    values = fn(xs)
    slope, intercept = np.polyfit(xs, values, 1)
    scale = float(np.var(values - (slope * xs + intercept))) + 1e-300

    def objective(h: float) -> Tuple[float, float]:
        s = np.linspace(lo, hi - h, grid)
        d = fn(s + h) - fn(s)
        return float(np.var(d) / scale), float(np.mean(d))

    hs = np.geomspace(length / 256.0, length / 2.0, scan)
    scores = np.array([objective(h)[0] for h in hs])
    found = []
    for i in range(1, len(hs) - 1):
        if scores[i] <= scores[i - 1] and scores[i] <= scores[i + 1]:
            result = minimize_scalar(lambda h: objective(h)[0], bounds=(hs[i - 1], hs[i + 1]),
                                     method="bounded", options={"xatol": 1e-10})
            if result.fun < tol:
                found.append((float(result.x), float(result.fun)))
    if not found:
        return None
    h, residual = min(found)
    return h, objective(h)[1] / h, residual


def _u0_candidates(alpha, omega: Interval, lo: float, hi: float, hints: Sequence[float]) -> List[float]:
    candidates = [float(h) for h in hints]
    candidates += [end for end in (omega.lo, omega.hi) if math.isfinite(end)]
    xs = np.linspace(lo, hi, 257)
    slope = np.abs(np.gradient(alpha(xs), xs))
    peaks = [i for i in range(1, len(xs) - 1) if slope[i] >= slope[i - 1] and slope[i] >= slope[i + 1]]
    peaks.sort(key=lambda i: -slope[i])
    candidates += [float(xs[i]) for i in peaks]
    unique: List[float] = []
    for c in candidates:
        if all(abs(c - other) > 1e-9 for other in unique):
            unique.append(c)
    return unique[:ACLASS_MAX_U0]


def classify_a(a: sp.Expr, omega: Interval, u: Optional[sp.Symbol] = None, grid: int = ACLASS_GRID,
               scan: int = ACLASS_SCAN, tol: float = ACLASS_TOL, seed: int = DEFAULT_SEED,
               u0_hints: Sequence[float] = ()) -> AClass:
    """
    Class of a(u) > 0 on omega:
    Const / AexpExt when ln a is affine, Aexp when ln a(u + h) - ln a(u) is
    constant for some h, Adeg / AdegExt for the same tests in s = ln|u - u0|,
    None otherwise.
    """
    a = sp.sympify(a)
    if u is None:
        free = sorted(a.free_symbols, key=lambda s: s.name)
        if len(free) > 1:
            raise DomainError(f"a must depend on u only, got {', '.join(s.name for s in free)}")
        u = free[0] if free else make_symbol("u")
    alpha = _log_a(a, u)
    lo, hi = omega.window(ACLASS_WINDOW_RADIUS)
    inset = 1e-6 * (hi - lo)
    lo = lo + inset if math.isfinite(omega.lo) else lo
    hi = hi - inset if math.isfinite(omega.hi) else hi
    length = hi - lo
    xs = np.linspace(lo, hi, grid)

    linear, lam = _linear(xs, alpha(xs), tol)
    if linear:
        if abs(lam) * length <= tol:
            return AClass(kind=AClassKind.CONST, lam=0.0, h_expr=to_text(a))
        lam = _nice(lam)
        return AClass(kind=AClassKind.AEXP_EXT, lam=lam, h_expr=to_text(tidy(a * sp.exp(-sp.nsimplify(lam) * u))))

    period = _detect_period(alpha, lo, hi, grid, scan, tol)
    if period is not None:
        h, lam, residual = period
        lam = _nice(lam)
        logger.info(f"a = {to_text(a)}: exponential-periodic, lambda {lam}, period {h:.6f}")
        return AClass(kind=AClassKind.AEXP, lam=lam, period=h, residual=residual,
                      h_expr=to_text(tidy(a * sp.exp(-sp.nsimplify(lam) * u))))

    for u0 in _u0_candidates(alpha, omega, lo, hi, u0_hints):
        if u0 <= lo:
            side, near, far = 1.0, lo - u0, hi - u0
        elif u0 >= hi:
            side, near, far = -1.0, u0 - hi, u0 - lo
        elif hi - u0 >= u0 - lo:
            side, near, far = 1.0, 0.0, hi - u0
        else:
            side, near, far = -1.0, 0.0, u0 - lo
        near = max(near, 1e-6 * max(1.0, far))
        if far <= near:
            continue
        s_lo, s_hi = math.log(near), math.log(far)

        def beta(s: np.ndarray, u0=u0, side=side) -> np.ndarray:
            return alpha(u0 + side * np.exp(s))

        ss = np.linspace(s_lo, s_hi, grid)
        linear, lam = _linear(ss, beta(ss), tol)
        u0_nice = _nice(u0)
        power = (side * (u - sp.nsimplify(u0_nice)))
        if linear:
            lam = _nice(lam)
            return AClass(kind=AClassKind.ADEG_EXT, lam=lam, u0=u0_nice,
                          h_expr=to_text(tidy(a * power ** (-sp.nsimplify(lam)))))
        if s_hi - s_lo < ACLASS_MIN_WINDOW:
            continue
        period = _detect_period(beta, s_lo, s_hi, grid, scan, tol)
        if period is not None:
            h, lam, residual = period
            lam = _nice(lam)
            return AClass(kind=AClassKind.ADEG, lam=lam, period=h, u0=u0_nice, residual=residual,
                          h_expr=to_text(tidy(a * power ** (-sp.nsimplify(lam)))))

    if length < ACLASS_MIN_WINDOW:
        raise InconclusiveError(f"window of length {length:.3g} is too short to detect a period")
    return AClass(kind=AClassKind.NONE)


# Normalization results

@dataclass
class NormalizationResult:
    iso: FiberedMap
    source: ParabolicEquation
    target: Optional[ParabolicEquation]
    provenance: str
    composite: Optional[FiberedMap] = None
    report: Optional[MorphismReport] = None
    checks: Dict[str, Verdict] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.checks.values())


def _safe_name(text: str) -> str:
    return re.sub(r"\W", "_", text)


def _target_symbols(n: int) -> List[sp.Symbol]:
    names = ["tau", *(["y"] if n == 1 else [f"y{k + 1}" for k in range(n)]), "v"]
    return [make_symbol(name) for name in names]


def _periodic_targets(eq: ParabolicEquation, target: Sequence[sp.Symbol]) -> Dict[str, object]:
    """Target base axes inherit the periodic identifications of x."""
    out = {}
    for x, y in zip(eq.xs, target[1:-1]):
        axis = eq.dom.axis(x.name)
        if isinstance(axis, Periodic):
            out[y.name] = axis
    return out


def _constant(value: float) -> sp.Expr:
    return sp.Integer(int(value)) if float(value).is_integer() else sp.nsimplify(value)


def _artifacts(iso: FiberedMap) -> Dict[str, str]:
    out = {}
    for expr in [*iso.components, *(iso.section or [])]:
        for node in opaque_nodes(expr):
            out[type(node).__name__] = node._spec.description
    return out


def _finish(source: ParabolicEquation, iso: FiberedMap, provenance: str, samples: int, tol: float,
            seed: int, pairs: int) -> NormalizationResult:
    """Push the source through the constructed isomorphism and record the checks."""
    report = pushforward(source, iso, samples=samples, tol=tol, seed=seed, pairs=pairs)
    if report.verdict != MorphismVerdict.ACCEPTED or report.quotient_equation is None:
        reason = report.failing_candidate or "; ".join(report.notes) or report.verdict.value
        logger.error(f"{provenance} on {source.name}: constructed isomorphism not accepted: {reason}")
        raise NormalizationError(f"{provenance}: constructed isomorphism not accepted ({reason})")
    result = NormalizationResult(iso=iso, source=source, target=report.quotient_equation,
                                 provenance=provenance, report=report, artifacts=_artifacts(iso))
    iso_report = is_isomorphism(iso.bind(source=source.symbols), source.dom, samples=samples, tol=tol,
                                seed=seed, pairs=pairs)
    result.checks["isomorphism"] = Verdict(status=iso_report.status, detail=iso_report.evidence, seed=seed)
    logger.info(f"{provenance} on {source.name}: target {result.target.name}")
    return result


def _identity(eq: ParabolicEquation, name: str) -> FiberedMap:
    target = _target_symbols(eq.n)
    section = list(target)
    return FiberedMap(name=name, source=eq.symbols, target=target, tau=eq.t.symbol,
                      ys=list(eq.base_symbols), v=eq.u.symbol, section=section,
                      target_axes=_periodic_targets(eq, target))


# Time reparametrization

def _time_inverse(tau: sp.Expr, t: sp.Symbol, s: sp.Symbol, t_axis, name: str, seed: int) -> sp.Expr:
    """
    t(s) with tau(t(s)) = s: a verified symbolic solution if sympy finds
    one, otherwise an opaque inverse seeded from a cached spline table.
    """
    lo, hi = t_axis.window()
    inset = 1e-6 * (hi - lo)
    lo, hi = lo + inset, hi - inset
    probe = {t.name: np.linspace(lo, hi, 64)}
    images = {s.name: evaluate_batch(tau, probe)}
    try:
        for solution in sp.solve(tau - s, t):
            back = evaluate_batch(solution, images)
            if np.allclose(back, probe[t.name], rtol=1e-9, atol=1e-9):
                return tidy(solution)
    except Exception as e:
        logger.debug(f"symbolic time inverse of {to_text(tau)} failed: {e}")

    key = cache_service.generate_cache_key("time_inverse", to_text(tau), {"window": [lo, hi]})
    table, origin = cache_service.get_table(key)
    if table is None:
        ts = np.linspace(lo, hi, 257)
        taus = evaluate_batch(tau, {t.name: ts})
        table = Table(axes=[(lo, hi, 257)], values=np.stack([ts, taus]))
        cache_service.set_table(key, table)
    ts, taus = table.values
    order = np.argsort(taus)
    spline = CubicSpline(taus[order], ts[order])
    spec = inverse_function(f"{_safe_name(name)}_tinv", tau, t, (lo, hi),
                            initial_guess=lambda target: spline(np.clip(target, taus.min(), taus.max())))
    return spec(s)


def time_reparam(eq: ParabolicEquation, F: FiberedMap, samples: int = DEFAULT_SAMPLES,
                 tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED,
                 pairs: int = DEFAULT_PAIRS) -> NormalizationResult:
    """
    Isomorphism (tau, y, v) -> (t(tau), y, v) of the quotient of eq by F, so
    that the composite map keeps the time coordinate.
    """
    F = F.bind(source=eq.symbols)
    t = eq.t.symbol
    slope = evaluate_batch(sp.diff(F.tau, t), sample(eq.dom.restrict([t.name]), samples, seed))
    if not (np.all(slope > 0) or np.all(slope < 0)):
        raise NormalizationError(f"tau = {to_text(F.tau)} is not strictly monotone on {eq.dom.axis(t.name)}")

    first = pushforward(eq, F, samples=samples, tol=tol, seed=seed, pairs=pairs)
    quotient = first.quotient_equation
    if first.verdict != MorphismVerdict.ACCEPTED or quotient is None:
        raise NormalizationError(f"{F.name} has no explicit quotient of {eq.name} ({first.verdict.value})")

    s = quotient.t.symbol
    target = _target_symbols(quotient.n)
    t_of_s = _time_inverse(F.tau, t, s, eq.dom.axis(t.name), F.name, seed)
    section = [F.tau.xreplace({t: target[0]}), *target[1:-1], target[-1]]
    iso = FiberedMap(name=f"{F.name}_time", source=quotient.symbols, target=target, tau=t_of_s,
                     ys=list(quotient.base_symbols), v=quotient.u.symbol, section=section,
                     target_axes=_periodic_targets(quotient, target))
    provenance = "identity" if _is_zero(t_of_s - s) else "time_reparam"
    result = _finish(quotient, iso, provenance, samples, tol, seed, pairs)

    composite = compose(F, iso)
    result.composite = composite
    direct = pushforward(eq, composite, samples=samples, tol=tol, seed=seed, pairs=pairs)
    if direct.quotient_equation is not None:
        result.checks["composition"] = equivalent(direct.quotient_equation, result.target, samples, tol, seed)
    else:
        result.notes.append(f"composite map {composite}: {direct.verdict.value}")
    return result


# Quasilinearization

def quasilinearize(eq: ParabolicEquation, u0: Optional[float] = None, samples: int = DEFAULT_SAMPLES,
                   tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED,
                   pairs: int = DEFAULT_PAIRS) -> NormalizationResult:
    """
    v = integral from u0 to u of exp(integral from u0 to w of lambda) dw,
    with lambda = c/b. The target has no gradient-squared terms.
    """
    lam, verdict = factor_pe1(eq, samples, tol, seed)
    if lam is None:
        raise NormalizationError(f"{eq.name}: c is not proportional to b ({verdict.detail})")
    u0 = eq.normalization_point() if u0 is None else float(u0)
    u_axis = eq.dom.axis(eq.u.name)
    if not u_axis.contains(u0):
        raise NormalizationError(f"u0 = {u0} is outside {u_axis}")

    t, xs, u = eq.t.symbol, eq.base_symbols, eq.u.symbol
    target = _target_symbols(eq.n)
    to_target = dict(zip(eq.symbols, target))
    anchor = _constant(u0)
    params = [p for p in (t, *xs) if p in lam.free_symbols]
    name = _safe_name(eq.name)

    if u not in lam.free_symbols and not params:
        if lam == 0:
            v = u - anchor
            section_u = target[-1] + anchor
            provenance = "quasilinearize: shift"
        else:
            v = (sp.exp(lam * (u - anchor)) - 1) / lam
            section_u = anchor + sp.log(1 + lam * target[-1]) / lam
            provenance = "quasilinearize: closed form"
    else:
        w = make_symbol("w")
        z = make_symbol("z")
        if u not in lam.free_symbols:
            inner = lam * (w - anchor)
        elif lam.is_polynomial(u):
            inner = sp.integrate(lam.xreplace({u: z}), (z, anchor, w))
        else:
            inner = quadrature_function(f"{name}_Lam", lam.xreplace({u: z}), z, u0, params)(w, *params)
        outer = quadrature_function(f"{name}_V", sp.exp(inner), w, u0, params)
        v = outer(u, *params)
        lo, hi = u_axis.window()
        inverse = inverse_function(f"{name}_Vinv", outer(w, *params), w, (lo, hi), params)
        section_u = inverse(target[-1], *[to_target[p] for p in params])
        provenance = "quasilinearize: quadrature"

    section = [target[0], *target[1:-1], section_u]
    iso = FiberedMap(name=f"{eq.name}_ql", source=eq.symbols, target=target, tau=t, ys=list(xs), v=v,
                     section=section, target_axes=_periodic_targets(eq, target))
    result = _finish(eq, iso, provenance, samples, tol, seed, pairs)
    columns = sample(result.target.dom, samples, seed)
    entries = [result.target.c[i, j] for i in range(eq.n) for j in range(eq.n)]
    result.checks["C"] = Verdict.combine([compare_on_samples(e, sp.S.Zero, columns, tol, seed) for e in entries])
    return result


# Drift removal

def flow_functions(name: str, xi: Sequence[sp.Expr], s: sp.Symbol, xs: Sequence[sp.Symbol],
                   anchor: float, moving: str, steps: int = RK4_STEPS) -> List[OpaqueSpec]:
    """
    Components of the flow of dX/ds = -xi(s, X) as opaque functions of
    (s', x...):
      moving == "start": X at s = anchor, started from x at s = s'
      moving == "end":   X at s = s', started from x at s = anchor
    x-derivatives up to order 2 come from the variational equations; the
    s'-derivative is rewritten exactly (transport identity, resp. the ODE).
    """
    n = len(xs)
    symbols = [s, *xs]
    field_fns = [compile_numeric(-e, symbols) for e in xi]
    jac_fns = [[compile_numeric(-sp.diff(e, x), symbols) for x in xs] for e in xi]
    hess_fns = [[[compile_numeric(-sp.diff(e, x, y), symbols) for y in xs] for x in xs] for e in xi]

    def evaluate(fns, sv, cols, shape):
        return np.stack([np.broadcast_to(np.asarray(f(sv, *cols), dtype=float), shape) for f in fns], axis=-1)

    def make_rhs(level: int):
        def rhs(sv: np.ndarray, state: np.ndarray) -> np.ndarray:
            count = state.shape[0]
            X = state[:, :n]
            cols = [X[:, j] for j in range(n)]
            with np.errstate(all="ignore"):
                parts = [evaluate(field_fns, sv, cols, (count,))]
                if level >= 1:
                    J = state[:, n:n + n * n].reshape(count, n, n)
                    A = np.stack([evaluate(row_fns, sv, cols, (count,)) for row_fns in jac_fns], axis=1)
                    parts.append(np.einsum("nij,njk->nik", A, J).reshape(count, -1))
                if level >= 2:
                    H = state[:, n + n * n:].reshape(count, n, n, n)
                    B = np.stack([np.stack([evaluate(r, sv, cols, (count,)) for r in plane], axis=1)
                                  for plane in hess_fns], axis=1)
                    dH = np.einsum("nilm,nlj,nmk->nijk", B, J, J) + np.einsum("nil,nljk->nijk", A, H)
                    parts.append(dH.reshape(count, -1))
            return np.concatenate(parts, axis=1)
        return rhs

    def integrate(first: np.ndarray, points: np.ndarray, level: int) -> np.ndarray:
        count = points.shape[0]
        state = [points]
        if level >= 1:
            state.append(np.tile(np.eye(n).ravel(), (count, 1)))
        if level >= 2:
            state.append(np.zeros((count, n ** 3)))
        start = np.concatenate(state, axis=1)
        if moving == "start":
            s0, s1 = first, np.full(count, float(anchor))
        else:
            s0, s1 = np.full(count, float(anchor)), first
        return rk4_path(make_rhs(level), s0, s1, start, steps)

    def factory_for(k: int):
        def factory(order):
            if order[0] or sum(order) > 2:
                return None
            level = sum(order)
            picks = [j for j, m in enumerate(order[1:]) for _ in range(m)]

            def evaluator(first, *values):
                arrays = np.broadcast_arrays(np.asarray(first, dtype=float),
                                             *[np.asarray(v, dtype=float) for v in values])
                shape = arrays[0].shape
                flat = [a.ravel() for a in arrays]
                digest = hashlib.sha1(b"".join(a.tobytes() for a in flat)).hexdigest()
                # one second-order integration serves values, Jacobians and Hessians
                key = ("flow", name, moving, digest)
                state = cache_service.get_local(key)
                if state is None:
                    state = integrate(flat[0], np.stack(flat[1:], axis=1), 2)
                    cache_service.set_local(key, state)
                count = state.shape[0]
                if level == 0:
                    out = state[:, k]
                elif level == 1:
                    out = state[:, n:n + n * n].reshape(count, n, n)[:, k, picks[0]]
                else:
                    out = state[:, n + n * n:].reshape(count, n, n, n)[:, k, picks[0], picks[1]]
                return out.reshape(shape)
            return evaluator
        return factory

    specs: List[OpaqueSpec] = []
    dummies = [make_symbol(f"_d{j}") for j in range(n + 1)]

    def rule_for(k: int):
        def rule(order, index, args):
            if index != 0:
                return None
            d_s, d_x = dummies[0], dummies[1:]
            if moving == "start":
                base = sp.Add(*[xi[i].xreplace(dict(zip(symbols, dummies)))
                                * specs[k].applied_class(_unit(n, i))(*dummies) for i in range(n)])
            else:
                flow = [specs[j](*dummies) for j in range(n)]
                base = -xi[k].xreplace({s: d_s, **dict(zip(xs, flow))})
            for j, m in enumerate(order[1:]):
                if m:
                    base = sp.diff(base, d_x[j], m)
            return base.xreplace(dict(zip(dummies, args)))
        return rule

    for k in range(n):
        specs.append(OpaqueSpec(f"{_safe_name(name)}_{k + 1}", n + 1, factory_for(k), max_order=3,
                                derivative_rule=rule_for(k),
                                description=f"flow of -({', '.join(to_text(e) for e in xi)}) "
                                            f"{'to' if moving == 'start' else 'from'} s={anchor}, component {k + 1}"))
    return specs


def _unit(n: int, i: int) -> Tuple[int, ...]:
    return tuple(1 if j == i + 1 else 0 for j in range(n + 1))


def remove_drift(eq: ParabolicEquation, t0: Optional[float] = None, steps: int = RK4_STEPS,
                 samples: int = DEFAULT_SAMPLES, tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED,
                 pairs: int = DEFAULT_PAIRS) -> NormalizationResult:
    """
    y(t, x) = X(t0; t, x) along dX/ds = -xi(s, X), which removes the
    drift xi of b^i = a bbar^i + xi^i. t0 defaults to the left end of T, or 0.
    """
    factored, verdict = factor_pe2(eq, None, samples, tol, seed)
    if factored is None:
        raise NormalizationError(f"{eq.name}: b does not factor as a(t,x,u) bbar(t,x) ({verdict.detail})")
    split, verdict = factor_qpe2(eq, factored, samples, tol, seed)
    if split is None:
        raise NormalizationError(f"{eq.name}: no drift split b^i = a bbar^i + xi^i ({verdict.detail})")
    xi = [tidy(e) for e in split.xi]
    if all(_is_zero(e) for e in xi):
        result = _finish(eq, _identity(eq, f"{eq.name}_id"), "identity", samples, tol, seed, pairs)
        result.checks["xi"] = Verdict(status=VerdictStatus.PASS, seed=seed, detail="no drift")
        return result

    t, xs = eq.t.symbol, eq.base_symbols
    t_axis = eq.dom.axis(t.name)
    if t0 is None:
        t0 = t_axis.lo if isinstance(t_axis, Interval) and math.isfinite(t_axis.lo) else 0.0
    anchor = _constant(t0)
    target = _target_symbols(eq.n)
    s = make_symbol("s")

    ys, back = None, None
    if all(not (e.free_symbols & set(xs)) for e in xi):
        shifts = [sp.integrate(e.xreplace({t: s}), (s, anchor, t)) for e in xi]
        if not any(sh.has(sp.Integral) for sh in shifts):
            ys = [x + tidy(sh) for x, sh in zip(xs, shifts)]
            back = [y - tidy(sh.xreplace({t: target[0]})) for y, sh in zip(target[1:-1], shifts)]
            provenance = "remove_drift: closed form"
    if ys is None:
        fields = [e.xreplace({t: s}) for e in xi]
        base = eq.base_domain()
        probe = sample(base, 8, seed)
        for i in range(len(next(iter(probe.values())))):
            point = row(probe, i)
            integrate_flow([-f for f in fields], s, xs, point[t.name], float(t0),
                           {x.name: point[x.name] for x in xs}, steps, dom=base)
        name = f"{eq.name}_flow"
        forward = flow_functions(f"{name}_y", fields, s, xs, float(t0), "start", steps)
        inverse = flow_functions(f"{name}_x", fields, s, xs, float(t0), "end", steps)
        ys = [spec(t, *xs) for spec in forward]
        back = [spec(target[0], *target[1:-1]) for spec in inverse]
        provenance = "remove_drift: flow"

    section = [target[0], *back, target[-1]]
    iso = FiberedMap(name=f"{eq.name}_drift", source=eq.symbols, target=target, tau=t, ys=ys,
                     v=eq.u.symbol, section=section, target_axes=_periodic_targets(eq, target))
    result = _finish(eq, iso, provenance, samples, tol, seed, pairs)

    out = result.target
    factored2, _ = factor_pe2(out, None, samples, tol, seed)
    split2 = factor_qpe2(out, factored2, samples, tol, seed)[0] if factored2 is not None else None
    if split2 is None:
        result.checks["xi"] = Verdict(status=VerdictStatus.FAIL, seed=seed, detail="target has no drift split")
    else:
        columns = sample(out.dom, samples, seed)
        result.checks["xi"] = Verdict.combine([compare_on_samples(e, sp.S.Zero, columns, tol, seed)
                                               for e in split2.xi])
    return result


# Gauge canonicalization

def congruence(psi: sp.Expr, F: FiberedMap, dom: Domain, period: float, pairs: int = DEFAULT_PAIRS,
               tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED) -> Verdict:
    """psi(p2) - psi(p1) is an integral multiple of `period` on every fiber pair."""
    pair_set = map_fiber_pairs(F, dom, pairs, tol, seed)
    if not pair_set.pairs:
        status = VerdictStatus.PASS if pair_set.discrete else VerdictStatus.INCONCLUSIVE
        return Verdict(status=status, seed=seed, detail="no fiber pairs")
    names = [s.name for s in F.source]
    first = {n: np.array([p.p1[n] for p in pair_set.pairs]) for n in names}
    second = {n: np.array([p.p2[n] for p in pair_set.pairs]) for n in names}
    d = evaluate_batch(psi, second) - evaluate_batch(psi, first)
    finite = np.isfinite(d)
    k = np.round(d / period)
    scaled = np.zeros_like(d)
    scaled[finite] = np.abs(d[finite] - k[finite] * period) / (1.0 + np.abs(d[finite]))
    bad = np.flatnonzero(finite & (scaled > tol))
    stats = dict(max_residual=float(scaled.max()), mean_residual=float(scaled[finite].mean()),
                 samples=int(finite.sum()), singular=int((~finite).sum()), seed=seed)
    if len(bad):
        pair = pair_set.pairs[int(bad[0])]
        return Verdict(status=VerdictStatus.FAIL, witness=[pair.p1, pair.p2],
                       detail=f"psi difference {d[bad[0]]:.6g} is not a multiple of {period:.6g}", **stats)
    multiples = sorted({int(v) for v in k[finite]})
    return Verdict(status=VerdictStatus.PASS, detail=f"multiples {multiples[:6]}", **stats)


def gauge_canonicalize(eq: ParabolicEquation, F: FiberedMap, report: MorphismReport, aclass: AClass,
                       samples: int = DEFAULT_SAMPLES, tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED,
                       pairs: int = DEFAULT_PAIRS) -> NormalizationResult:
    """
    Isomorphism of the quotient that brings F to its canonical shape:
    (t, y, u + psi) for exponential-periodic a, (t, y, v0 + (u - u0) e^psi)
    for power-periodic a, and an affine map with identity time otherwise.
    """
    quotient = report.quotient_equation
    if report.verdict != MorphismVerdict.ACCEPTED or quotient is None:
        raise NormalizationError(f"{F.name}: gauge canonicalization needs an accepted explicit quotient")
    Fq = F.bind(source=eq.symbols)
    section = Fq.section
    if section is None or not verify_section(Fq, section, eq.dom, samples, tol, seed).passed:
        section = solve_section(Fq, eq.dom, samples, tol, seed)
    if section is None:
        raise NormalizationError(f"{F.name}: no section to express the gauge on the quotient")
    t, u = eq.t.symbol, eq.u.symbol
    onto_quotient = dict(zip(Fq.target, quotient.symbols))
    lift = {s: e.xreplace(onto_quotient) for s, e in zip(Fq.source, section)}
    checks: Dict[str, Verdict] = {}

    def descend(label: str, expr: sp.Expr) -> sp.Expr:
        checks[f"{label} descends"] = fiber_constancy(expr, Fq, eq.dom, pairs, tol, seed)
        return tidy(expr.xreplace(lift))

    gauge = gauge_view(Fq)
    if gauge is None:
        raise NormalizationError(f"{F.name} is not affine in u; inconsistent with the class {aclass.kind.value}")
    phi = tidy(sp.diff(Fq.v, u))
    psi = tidy(Fq.v - phi * u)

    qt, qx, qu = quotient.t.symbol, quotient.base_symbols, quotient.u.symbol
    target = _target_symbols(quotient.n)
    time_changed = not _is_zero(Fq.tau - t)
    tau_iso = _time_inverse(Fq.tau, t, qt, eq.dom.axis(t.name), F.name, seed) if time_changed else qt
    t_back = Fq.tau.xreplace({t: target[0]}) if time_changed else target[0]
    back = {qt: t_back, **dict(zip(qx, target[1:-1]))}

    if aclass.kind == AClassKind.AEXP:
        scale = descend("phi", phi)
        v_iso = qu / scale
        u_back = target[-1] * scale.xreplace(back)
        shift = tidy(psi / phi)
        checks["congruence"] = congruence(shift, Fq, eq.dom, aclass.period, pairs, tol, seed)
        provenance = "gauge: shift (t, y, u + psi)"
    elif aclass.kind == AClassKind.ADEG:
        u0 = _constant(aclass.u0)
        offset = tidy(psi + phi * u0)
        values = evaluate_batch(offset, sample(eq.dom, samples, seed))
        v0 = float(np.nanmean(values))
        lifted = descend("v0 offset", offset)
        v_iso = qu - (lifted - sp.Float(v0))
        u_back = target[-1] + (lifted - sp.Float(v0)).xreplace(back)
        checks["congruence"] = congruence(tidy(sp.log(sp.Abs(phi))), Fq, eq.dom, aclass.period, pairs, tol, seed)
        provenance = f"gauge: power (t, y, v0 + (u - u0) e^psi), v0 = {v0:.6g}"
    else:
        v_iso = qu
        u_back = target[-1]
        provenance = "gauge: affine (t, y, phi u + psi)"

    iso = FiberedMap(name=f"{F.name}_gauge", source=quotient.symbols, target=target, tau=tau_iso,
                     ys=list(qx), v=v_iso, section=[t_back, *target[1:-1], u_back],
                     target_axes=_periodic_targets(quotient, target))
    result = _finish(quotient, iso, provenance, samples, tol, seed, pairs)
    result.checks.update(checks)
    result.composite = compose(F.bind(source=eq.symbols), iso)
    result.notes.append(f"canonical morphism {result.composite} ({result.composite.shape.value})")
    return result
