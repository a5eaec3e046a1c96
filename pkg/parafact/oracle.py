"""
Numeric engine: domain sampling, fiber-pair search, Newton inversion and
ODE integration. Everything is deterministic given the seed.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from scipy.stats import qmc

from parafact.core.config import (
    DEFAULT_PAIRS,
    DEFAULT_SEED,
    DEFAULT_TOL,
    NEWTON_MAX_ITER,
    NEWTON_PATIENCE,
    NEWTON_RESTARTS,
    NEWTON_TOL,
    RK4_STEPS,
    SAMPLING_METHOD,
)
from parafact.core.exceptions import DomainError, FlowError, NewtonError
from parafact.domain import Domain, Periodic
from parafact.expr import evaluate_batch
from parafact.opaque import compile_numeric
from parafact.schemas import FiberPair, FiberPairSet

logger = logging.getLogger(__name__)

# fraction of the window kept clear of open endpoints
_INSET = 1e-6


def _unit_points(d: int, n: int, seed: int, method: str, offset: int = 0) -> np.ndarray:
    if method == "halton":
        engine = qmc.Halton(d, scramble=True, seed=seed)
        if offset:
            engine.fast_forward(offset)
        return engine.random(n)
    rng = np.random.default_rng([seed, offset])
    return rng.random((n, d))


def predicate_mask(dom: Domain, columns: Mapping[str, np.ndarray]) -> np.ndarray:
    n = len(next(iter(columns.values()))) if columns else 0
    mask = np.ones(n, dtype=bool)
    for predicate in dom.predicates:
        values = evaluate_batch(predicate, columns)
        mask &= np.isfinite(values) & (values > 0)
    return mask


def in_domain(dom: Domain, columns: Mapping[str, np.ndarray]) -> np.ndarray:
    n = len(next(iter(columns.values()))) if columns else 0
    mask = np.ones(n, dtype=bool)
    for name, axis in dom.axes.items():
        if name not in columns:
            continue
        col = np.asarray(columns[name], dtype=float)
        if isinstance(axis, Periodic):
            mask &= np.isfinite(col)
            continue
        ok = np.isfinite(col)
        ok &= (col > axis.lo) | ((col == axis.lo) & axis.lo_closed)
        ok &= (col < axis.hi) | ((col == axis.hi) & axis.hi_closed)
        mask &= ok
    return mask & predicate_mask(dom, columns)


def sample(dom: Domain, n: int, seed: int = DEFAULT_SEED,
           method: str = SAMPLING_METHOD) -> Dict[str, np.ndarray]:
    """
    n points of the domain as columns keyed by variable name. Periodic
    variables stay in their fundamental window; predicates are enforced by
    rejection with a budget of 100n trials.
    """
    if n < 1:
        raise DomainError(f"Sample count must be positive, got {n}")
    names = dom.names
    if not names:
        return {}
    windows = dom.windows()
    lows = np.array([lo for lo, _ in windows], dtype=float)
    spans = np.array([hi - lo for lo, hi in windows], dtype=float)
    if np.any(~np.isfinite(spans)) or np.any(spans <= 0):
        raise DomainError(f"Empty sampling window in {windows}")

    accepted: List[np.ndarray] = []
    count = 0
    drawn = 0
    budget = 100 * n
    while count < n:
        if drawn >= budget:
            raise DomainError(f"Rejection budget exhausted: {count} of {n} points after {drawn} trials")
        batch = min(max(2 * (n - count), 64), budget - drawn)
        unit = _unit_points(len(names), batch, seed, method, offset=drawn)
        drawn += batch
        unit = _INSET + (1.0 - 2.0 * _INSET) * unit
        points = lows + unit * spans
        if dom.predicates:
            columns = {name: points[:, i] for i, name in enumerate(names)}
            points = points[predicate_mask(dom, columns)]
        accepted.append(points)
        count += len(points)

    points = np.concatenate(accepted)[:n]
    if drawn > n:
        logger.debug(f"Sampled {n} points with {drawn} trials")
    return {name: points[:, i].copy() for i, name in enumerate(names)}


def row(columns: Mapping[str, np.ndarray], i: int) -> Dict[str, float]:
    return {name: float(col[i]) for name, col in columns.items()}


class BatchMap:
    """
    Compiled unwrapped components g_k of a map and their Jacobian, evaluated
    on (N, d) arrays of source points.
    """

    def __init__(self, components: Sequence[sp.Expr], symbols: Sequence[sp.Symbol]):
        self.components = [sp.sympify(c) for c in components]
        self.symbols = list(symbols)
        self._values = [compile_numeric(c, self.symbols) for c in self.components]
        self._jacobian = [[compile_numeric(sp.diff(c, s), self.symbols) for s in self.symbols]
                          for c in self.components]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        cols = [points[:, j] for j in range(points.shape[1])]
        n = points.shape[0]
        with np.errstate(all="ignore"):
            out = [np.broadcast_to(np.asarray(f(*cols), dtype=float), (n,)) for f in self._values]
        return np.stack(out, axis=1)

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        cols = [points[:, j] for j in range(points.shape[1])]
        n = points.shape[0]
        with np.errstate(all="ignore"):
            rows = [np.stack([np.broadcast_to(np.asarray(f(*cols), dtype=float), (n,)) for f in fs], axis=1)
                    for fs in self._jacobian]
        return np.stack(rows, axis=1)


def _wrap(diff: np.ndarray, periods: Sequence[Optional[float]]) -> np.ndarray:
    out = diff.copy()
    for k, m in enumerate(periods):
        if m:
            out[:, k] = out[:, k] - m * np.round(out[:, k] / m)
    return out


def _image_value(value: float, period: Optional[float]) -> float:
    return float(np.mod(value, period)) if period else float(value)


def _newton_batch(fmap: BatchMap, starts: np.ndarray, targets: np.ndarray,
                  tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER,
                  patience: int = NEWTON_PATIENCE) -> Tuple[np.ndarray, np.ndarray]:
    """
    Minimum-norm Newton iteration g(p) = target from each start.
    Stops early once `patience` iterations neither add a converged point
    nor halve the median residual of the rest.
    Returns (points, converged mask).
    """
    p = starts.copy()
    scale = 1.0 + np.abs(targets).max(axis=1)
    converged = np.zeros(len(p), dtype=bool)
    best_count, best_residual, stalled = -1, np.inf, 0
    for _ in range(max_iter):
        r = fmap(p) - targets
        norm = np.abs(r).max(axis=1)
        converged = np.isfinite(norm) & (norm <= tol * scale)
        if converged.all():
            break
        open_norms = norm[~converged & np.isfinite(norm)]
        residual = float(np.median(open_norms)) if len(open_norms) else 0.0
        count = int(converged.sum())
        if count > best_count or residual < 0.5 * best_residual:
            best_count = max(best_count, count)
            best_residual = min(best_residual, residual)
            stalled = 0
        else:
            stalled += 1
            if stalled >= patience:
                logger.debug(f"newton: stalled with {count}/{len(p)} converged")
                break
        J = fmap.jacobian(p)
        active = ~converged & np.isfinite(norm) & np.isfinite(J).all(axis=(1, 2))
        if not active.any():
            break
        step = np.einsum("nij,nj->ni", np.linalg.pinv(J[active]), r[active])
        # clip wild steps
        size = np.abs(step).max(axis=1, keepdims=True)
        step = np.where(size > 10.0, step * (10.0 / np.maximum(size, 1e-300)), step)
        p[active] = p[active] - step
    return p, converged


def fiber_pairs(fmap: BatchMap, periods: Sequence[Optional[float]], dom: Domain,
                count: int = DEFAULT_PAIRS, tol: float = DEFAULT_TOL,
                seed: int = DEFAULT_SEED, target_names: Optional[Sequence[str]] = None) -> FiberPairSet:
    """
    Pairs (p1, p2) of distinct source points with the same image.

    Periodic target components admit shifts by +-modulus; those pairs are
    solved from p1. The unshifted fiber is explored by Newton from random
    restarts. At most one pair is kept per base point.
    """
    names = [s.name for s in fmap.symbols]
    labels = list(target_names) if target_names is not None else [f"g{k}" for k in range(len(periods))]
    base = sample(dom, count, seed)
    p1 = np.stack([base[n] for n in names], axis=1)
    g1 = fmap(p1)
    source_periods = [dom.axes[n].modulus if isinstance(dom.axes[n], Periodic) else None for n in names]

    shifts = []
    for k, m in enumerate(periods):
        if m:
            for sign in (1.0, -1.0):
                shift = np.zeros(len(periods))
                shift[k] = sign * m
                shifts.append(shift)

    candidates = []
    for shift in shifts:
        points, ok = _newton_batch(fmap, p1, g1 + shift)
        candidates.append((points, ok))

    restart = sample(dom, count, seed + 1)
    starts = np.stack([restart[n] for n in names], axis=1)
    zero_points, zero_ok = _newton_batch(fmap, starts, g1)
    candidates.append((zero_points, zero_ok))

    def separated(p2: np.ndarray) -> np.ndarray:
        gap = np.abs(_wrap(p2 - p1, source_periods)).max(axis=1)
        return gap >= 10.0 * tol

    pairs: List[FiberPair] = []
    taken = np.zeros(count, dtype=bool)
    for points, ok in candidates:
        points = points.copy()
        for j, m in enumerate(source_periods):
            if m:
                lo = dom.axes[names[j]].start
                points[:, j] = lo + np.mod(points[:, j] - lo, m)
        cols = {n: points[:, j] for j, n in enumerate(names)}
        valid = ok & in_domain(dom, cols) & separated(points)
        g2 = fmap(points)
        defect = np.abs(_wrap(g2 - g1, periods)).max(axis=1)
        valid &= defect <= tol
        for i in np.flatnonzero(valid & ~taken):
            if len(pairs) >= count:
                break
            taken[i] = True
            pairs.append(FiberPair(
                p1={n: float(p1[i, j]) for j, n in enumerate(names)},
                p2={n: float(points[i, j]) for j, n in enumerate(names)},
                image={labels[k]: _image_value(g1[i, k], periods[k]) for k in range(g1.shape[1])},
                defect=float(defect[i]),
            ))

    discrete = False
    if not pairs:
        converged = zero_ok & np.isfinite(zero_points).all(axis=1)
        discrete = bool(converged.any()) and not bool(separated(zero_points)[converged].any())
    result = FiberPairSet(pairs=pairs, requested=count, discrete=discrete, partial=len(pairs) < count)
    logger.debug(f"fiber_pairs: {len(pairs)}/{count} pairs (discrete={discrete})")
    return result


def newton_invert(components: Sequence[sp.Expr], symbols: Sequence[sp.Symbol], target: Sequence[float],
                  dom: Domain, seed: int = DEFAULT_SEED, periods: Optional[Sequence[Optional[float]]] = None,
                  tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER,
                  restarts: int = NEWTON_RESTARTS) -> Dict[str, float]:
    """
    Damped Newton with backtracking for g(p) = target, restarted from the
    domain center and then from seeded samples. Residual is wrapped modulo
    the periods of periodic components.
    """
    fmap = BatchMap(components, symbols)
    names = [s.name for s in symbols]
    target = np.asarray(target, dtype=float).reshape(1, -1)
    periods = list(periods) if periods is not None else [None] * target.shape[1]
    scale = 1.0 + float(np.abs(target).max())

    def residual(p: np.ndarray) -> np.ndarray:
        return _wrap(fmap(p) - target, periods)

    center = dom.center()
    starts = [np.array([[center[n] for n in names]])]
    extra = sample(dom, restarts, seed)
    starts += [np.array([[extra[n][i] for n in names]]) for i in range(restarts)]

    for start in starts:
        p = start.copy()
        r = residual(p)
        norm = float(np.abs(r).max())
        for _ in range(max_iter):
            if np.isfinite(norm) and norm <= tol * scale:
                break
            J = fmap.jacobian(p)
            if not np.isfinite(J).all():
                break
            step = np.linalg.pinv(J[0]) @ r[0]
            damping = 1.0
            while damping > 1e-4:
                trial = p - damping * step
                r_trial = residual(trial)
                trial_norm = float(np.abs(r_trial).max())
                if np.isfinite(trial_norm) and trial_norm < norm:
                    break
                damping *= 0.5
            else:
                break
            p, r, norm = trial, r_trial, trial_norm
        if np.isfinite(norm) and norm <= tol * scale:
            point = {n: float(p[0, j]) for j, n in enumerate(names)}
            if dom.contains(point) and predicate_mask(dom, {n: np.array([v]) for n, v in point.items()}).all():
                return point
    raise NewtonError(f"Newton inversion did not converge for target {target.ravel().tolist()}")


def rk4_path(rhs: Callable[[np.ndarray, np.ndarray], np.ndarray], s0, s1, x0: np.ndarray,
             steps: int = RK4_STEPS, record: bool = False):
    """
    Classical RK4 for dx/ds = rhs(s, x) from s0 to s1, vectorized over a batch.
    x0 has shape (N, d); s0 and s1 broadcast against N.
    """
    if steps < 1:
        raise FlowError("Step underflow: at least one step is required")
    x = np.array(x0, dtype=float)
    n = x.shape[0]
    s0 = np.broadcast_to(np.asarray(s0, dtype=float), (n,))
    s1 = np.broadcast_to(np.asarray(s1, dtype=float), (n,))
    h = ((s1 - s0) / steps)[:, None]
    path = [x.copy()] if record else None
    s = s0[:, None].copy()
    for _ in range(steps):
        k1 = rhs(s[:, 0], x)
        k2 = rhs(s[:, 0] + 0.5 * h[:, 0], x + 0.5 * h * k1)
        k3 = rhs(s[:, 0] + 0.5 * h[:, 0], x + 0.5 * h * k2)
        k4 = rhs(s[:, 0] + h[:, 0], x + h * k3)
        x = x + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        s = s + h
        if record:
            path.append(x.copy())
    if record:
        return x, np.stack(path)
    return x


@dataclass
class FlowResult:
    point: Dict[str, float]
    error: float
    steps: int
    trajectory: Optional[List[Dict[str, float]]] = field(default=None)


def integrate_flow(fields: Sequence[sp.Expr], s: sp.Symbol, xs: Sequence[sp.Symbol],
                   s0: float, s1: float, x0: Mapping[str, float],
                   steps: int = RK4_STEPS, dom: Optional[Domain] = None,
                   trajectory: bool = False) -> FlowResult:
    """
    RK4 with a fixed step plus the Richardson estimate |x_2N - x_N| / 15.
    Periodic coordinates of `dom` are wrapped into their window at the end;
    leaving any other coordinate range raises FlowError.
    """
    names = [x.name for x in xs]
    fns = [compile_numeric(sp.sympify(f), [s, *xs]) for f in fields]

    def rhs(sv: np.ndarray, x: np.ndarray) -> np.ndarray:
        cols = [x[:, j] for j in range(x.shape[1])]
        with np.errstate(all="ignore"):
            return np.stack([np.broadcast_to(np.asarray(f(sv, *cols), dtype=float), (x.shape[0],))
                             for f in fns], axis=1)

    start = np.array([[float(x0[n]) for n in names]])
    coarse = rk4_path(rhs, s0, s1, start, steps)
    fine, path = rk4_path(rhs, s0, s1, start, 2 * steps, record=True)
    if not (np.isfinite(fine).all() and np.isfinite(coarse).all()):
        raise FlowError(f"Flow blew up between s={s0} and s={s1}")

    if dom is not None:
        for j, n in enumerate(names):
            axis = dom.axes.get(n)
            if axis is None or isinstance(axis, Periodic):
                continue
            values = path[:, 0, j]
            if not all(axis.contains(float(v)) for v in values):
                raise FlowError(f"Trajectory leaves the chart in {n} (range {axis})")

    error = float(np.abs(fine - coarse).max() / 15.0)
    end = fine[0].copy()
    if dom is not None:
        for j, n in enumerate(names):
            axis = dom.axes.get(n)
            if isinstance(axis, Periodic):
                end[j] = axis.start + np.mod(end[j] - axis.start, axis.modulus)

    recorded = None
    if trajectory:
        recorded = [{n: float(p[0, j]) for j, n in enumerate(names)} for p in path]
    return FlowResult(point={n: float(end[j]) for j, n in enumerate(names)},
                      error=error, steps=2 * steps, trajectory=recorded)
