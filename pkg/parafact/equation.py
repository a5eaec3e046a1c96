"""
Parabolic equations on a chart

    u_t = sum b^ij u_ij + sum c^ij u_i u_j + sum b^i u_i + q

with validation, factorization of the diffusion part, classification into
the subcategory labels and expansion of geometric (metric) presentations.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import sympy as sp

from parafact.core.config import DEFAULT_SAMPLES, DEFAULT_SEED, DEFAULT_TOL, EIG_TOL, SINGULAR_BUDGET
from parafact.core.exceptions import GeometryError, InconclusiveError
from parafact.domain import Domain
from parafact.expr import (
    Var,
    VariableContext,
    compare_on_samples,
    evaluate_batch,
    is_independent_of,
    tidy,
    to_text,
)
from parafact.oracle import row, sample
from parafact.schemas import ClassificationReport, ClassLabel, Verdict, VerdictStatus

logger = logging.getLogger(__name__)


@dataclass
class ParabolicEquation:
    name: str
    context: VariableContext
    t: Var
    xs: List[Var]
    u: Var
    dom: Domain
    b: sp.Matrix
    c: sp.Matrix
    bvec: List[sp.Expr]
    q: sp.Expr
    compact: bool = False
    u0: Optional[float] = None

    @property
    def n(self) -> int:
        return len(self.xs)

    @property
    def base_symbols(self) -> List[sp.Symbol]:
        return [x.symbol for x in self.xs]

    @property
    def symbols(self) -> List[sp.Symbol]:
        return [self.t.symbol, *self.base_symbols, self.u.symbol]

    @property
    def names(self) -> List[str]:
        return [s.name for s in self.symbols]

    def coefficients(self) -> Dict[str, sp.Expr]:
        """Coefficient expressions keyed b.i.j / c.i.j (upper triangle), b.i, q."""
        out = {}
        for i in range(self.n):
            for j in range(i, self.n):
                out[f"b.{i + 1}.{j + 1}"] = self.b[i, j]
        for i in range(self.n):
            for j in range(i, self.n):
                out[f"c.{i + 1}.{j + 1}"] = self.c[i, j]
        for i in range(self.n):
            out[f"b.{i + 1}"] = self.bvec[i]
        out["q"] = self.q
        return out

    def normalization_point(self) -> float:
        if self.u0 is not None:
            return float(self.u0)
        return float(self.dom.axis(self.u.name).midpoint())

    def base_domain(self) -> Domain:
        return self.dom.restrict([self.t.name, *[x.name for x in self.xs]])


@dataclass
class GeometricEquation:
    """u_t = a (Laplace-Beltrami u + eta . grad u) + xi . grad u + q on a metric chart."""
    name: str
    context: VariableContext
    t: Var
    xs: List[Var]
    u: Var
    dom: Domain
    g: sp.Matrix
    a: sp.Expr
    eta: List[sp.Expr]
    xi: List[sp.Expr]
    q: sp.Expr
    compact: bool = False
    u0: Optional[float] = None


@dataclass
class FactoredForm:
    a: sp.Expr
    bbar: sp.Matrix
    u0: float
    lam: Optional[sp.Expr] = None
    bibar: Optional[List[sp.Expr]] = None
    xi: Optional[List[sp.Expr]] = None
    ambiguous: bool = False

    def as_strings(self) -> Dict[str, object]:
        out: Dict[str, object] = {
            "a": to_text(self.a),
            "bbar": [[to_text(e) for e in self.bbar.row(i)] for i in range(self.bbar.rows)],
            "u0": self.u0,
        }
        if self.lam is not None:
            out["lambda"] = to_text(self.lam)
        if self.bibar is not None:
            out["bibar"] = [to_text(e) for e in self.bibar]
        if self.xi is not None:
            out["xi"] = [to_text(e) for e in self.xi]
        if self.ambiguous:
            out["ambiguous"] = True
        return out


def index_pairs(n: int) -> List[Tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i, n)]


def validate(eq: ParabolicEquation, samples: int = DEFAULT_SAMPLES, tol: float = DEFAULT_TOL,
             seed: int = DEFAULT_SEED, eig_tol: float = EIG_TOL) -> Verdict:
    """
    Structural symmetry of b and c, then positive definiteness of b
    (smallest eigenvalue above eig_tol) at every sample.
    """
    for name, matrix in (("b", eq.b), ("c", eq.c)):
        for i, j in index_pairs(eq.n):
            if i != j and sp.simplify(matrix[i, j] - matrix[j, i]) != 0:
                return Verdict(status=VerdictStatus.FAIL, seed=seed,
                               detail=f"{name}.{i + 1}.{j + 1} != {name}.{j + 1}.{i + 1}")

    columns = sample(eq.dom, samples, seed)
    count = len(next(iter(columns.values())))
    values = np.empty((count, eq.n, eq.n))
    for i, j in index_pairs(eq.n):
        entry = evaluate_batch(eq.b[i, j], columns)
        values[:, i, j] = entry
        values[:, j, i] = entry
    finite = np.isfinite(values).all(axis=(1, 2))
    singular = int(count - finite.sum())
    if singular > SINGULAR_BUDGET * count:
        return Verdict(status=VerdictStatus.INCONCLUSIVE, samples=count, singular=singular, seed=seed,
                       detail=f"{singular} of {count} samples singular")
    smallest = np.full(count, np.inf)
    smallest[finite] = np.linalg.eigvalsh(values[finite])[:, 0]
    bad = np.flatnonzero(finite & (smallest <= eig_tol))
    if len(bad):
        i = int(bad[0])
        return Verdict(status=VerdictStatus.FAIL, witness=[row(columns, i)], samples=int(finite.sum()),
                       singular=singular, seed=seed,
                       detail=f"b not positive definite (smallest eigenvalue {smallest[i]:.6g})")
    return Verdict(status=VerdictStatus.PASS, samples=int(finite.sum()), singular=singular, seed=seed,
                   detail=f"smallest eigenvalue {smallest[finite].min():.6g}")


def factor_pe1(eq: ParabolicEquation, samples: int = DEFAULT_SAMPLES, tol: float = DEFAULT_TOL,
               seed: int = DEFAULT_SEED) -> Tuple[Optional[sp.Expr], Verdict]:
    """
    c proportional to b: c^ij b^kl = c^kl b^ij for all index pairs.
    On Pass returns lambda = c^11 / b^11.
    """
    columns = sample(eq.dom, samples, seed)
    pairs = index_pairs(eq.n)
    verdicts = []
    for p, (i, j) in enumerate(pairs):
        for (k, l) in pairs[p + 1:]:
            verdicts.append(compare_on_samples(eq.c[i, j] * eq.b[k, l], eq.c[k, l] * eq.b[i, j],
                                               columns, tol, seed))
    # 1x1 systems are always proportional
    verdict = Verdict.combine(verdicts) if verdicts else Verdict(status=VerdictStatus.PASS, seed=seed)
    if not verdict.passed:
        return None, verdict
    return tidy(eq.c[0, 0] / eq.b[0, 0]), verdict


def factor_pe2(eq: ParabolicEquation, u0: Optional[float] = None, samples: int = DEFAULT_SAMPLES,
               tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED) -> Tuple[Optional[FactoredForm], Verdict]:
    """
    b^ij = a(t,x,u) bbar^ij(t,x) with a = b^11 / b^11(u0) and bbar = b(u0).
    """
    u0 = eq.normalization_point() if u0 is None else float(u0)
    u = eq.u.symbol
    anchor = _constant(u0)
    b11_at = eq.b[0, 0].xreplace({u: anchor})
    a = tidy(eq.b[0, 0] / b11_at)
    bbar = eq.b.xreplace({u: anchor}).applyfunc(tidy)

    columns = sample(eq.dom, samples, seed)
    verdicts = []
    for i, j in index_pairs(eq.n):
        v = compare_on_samples(a * bbar[i, j], eq.b[i, j], columns, tol, seed)
        if v.status == VerdictStatus.FAIL:
            v.detail = f"b.{i + 1}.{j + 1}: {v.detail}"
        verdicts.append(v)
    verdict = Verdict.combine(verdicts)
    if not verdict.passed:
        return None, verdict
    return FactoredForm(a=a, bbar=bbar, u0=u0), verdict


def factor_qpe2(eq: ParabolicEquation, factored: FactoredForm, samples: int = DEFAULT_SAMPLES,
                tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED) -> Tuple[Optional[FactoredForm], Verdict]:
    """
    b^i = a(t,x,u) bbar^i(t,x) + xi^i(t,x).

    Where a genuinely depends on u the split is unique: bbar^i is
    d_u b^i / d_u a at a reference u*. When d_u a vanishes identically the
    split is ambiguous and xi = b^i, bbar^i = 0 is reported.
    """
    u = eq.u.symbol
    a = factored.a
    da = sp.diff(a, u)
    columns = sample(eq.dom, samples, seed)

    flat = compare_on_samples(da, sp.S.Zero, columns, tol, seed)
    if flat.passed:
        verdicts = [is_independent_of(bi, [u], eq.dom, samples, tol, seed) for bi in eq.bvec]
        verdict = Verdict.combine(verdicts) if verdicts else Verdict(status=VerdictStatus.PASS, seed=seed)
        verdict.detail = "ambiguous: a is u-independent, xi := b^i, bbar^i := 0"
        if not verdict.passed:
            return None, verdict
        result = FactoredForm(a=a, bbar=factored.bbar, u0=factored.u0, lam=factored.lam,
                              bibar=[sp.S.Zero] * eq.n, xi=list(eq.bvec), ambiguous=True)
        return result, verdict

    u_star = _reference_u(eq, da)
    anchor = _constant(u_star)
    bibar, xi = [], []
    for bi in eq.bvec:
        ratio = tidy(sp.diff(bi, u) / da)
        bar = tidy(ratio.xreplace({u: anchor}))
        bibar.append(bar)
        xi.append(tidy((bi - a * bar).xreplace({u: anchor})))
    verdicts = []
    for i, bi in enumerate(eq.bvec):
        v = compare_on_samples(a * bibar[i] + xi[i], bi, columns, tol, seed)
        if v.status == VerdictStatus.FAIL:
            v.detail = f"b.{i + 1}: {v.detail}"
        verdicts.append(v)
    verdict = Verdict.combine(verdicts) if verdicts else Verdict(status=VerdictStatus.PASS, seed=seed)
    if not verdict.passed:
        return None, verdict
    return FactoredForm(a=a, bbar=factored.bbar, u0=factored.u0, lam=factored.lam,
                        bibar=bibar, xi=xi), verdict


def _constant(value: float) -> sp.Expr:
    return sp.Integer(int(value)) if float(value).is_integer() else sp.Float(value)


def _reference_u(eq: ParabolicEquation, da: sp.Expr) -> float:
    """A u value where d_u a is clearly nonzero at the base-domain center."""
    center = eq.dom.center()
    lo, hi = eq.dom.axis(eq.u.name).window()
    candidates = [eq.normalization_point(), *np.linspace(lo, hi, 17)[1:-1]]
    best, best_value = candidates[0], -1.0
    for value in candidates:
        point = dict(center)
        point[eq.u.name] = float(value)
        with np.errstate(all="ignore"):
            got = abs(float(evaluate_batch(da, {k: np.array([v]) for k, v in point.items()})[0]))
        if np.isfinite(got) and got > 1e-3:
            return float(value)
        if np.isfinite(got) and got > best_value:
            best, best_value = float(value), got
    return best


def diffusion_nonconstant(eq: ParabolicEquation, a: sp.Expr, samples: int = DEFAULT_SAMPLES,
                          tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED) -> bool:
    """
    A_nc: at every sampled base point a takes different values for different u.
    """
    u = eq.u.symbol
    if u not in a.free_symbols:
        return False
    base = sample(eq.base_domain(), min(samples, 256), seed)
    count = len(next(iter(base.values())))
    lo, hi = eq.dom.axis(eq.u.name).window()
    values = []
    for level in np.linspace(lo, hi, 9)[1:-1]:
        columns = dict(base)
        columns[eq.u.name] = np.full(count, level)
        values.append(evaluate_batch(a, columns))
    table = np.stack(values, axis=1)
    with np.errstate(all="ignore"):
        spread = np.nanmax(table, axis=1) - np.nanmin(table, axis=1)
        scale = 1.0 + np.nanmean(np.abs(table), axis=1)
    return bool(np.all(spread > tol * scale))


# label -> labels it implies
IMPLICATIONS: Dict[str, List[str]] = {
    "PE1": ["PE"],
    "PE2": ["PE"],
    "PE3": ["PE1", "PE2"],
    "PE4": ["PE2"],
    "PE5": ["PE3", "PE4"],
    "QPE": ["PE1"],
    "QPEc": ["QPE"],
    "QPE'": ["QPE", "PE2"],
    "QPE'_n": ["QPE'"],
    "QPE'_1": ["QPE'", "PE5"],
    "QPE''": ["QPE'"],
    "QPE''_0": ["QPE''"],
    "QPE''_n": ["QPE''", "QPE'_n"],
    "QPE''_a": ["QPE''"],
    "QPE''_1": ["QPE''_0", "QPE'_1", "QPE''"],
    "QPE''_1q": ["QPE''_1"],
    "SQPE": ["QPE''"],
    "SQPE_0": ["SQPE", "QPE''_0"],
    "SQPE_n": ["SQPE", "QPE''_n"],
    "SQPE_b": ["SQPE"],
    "SQPE_1": ["SQPE_0", "QPE''_1"],
    "SQPE_a": ["SQPE", "QPE''_a"],
    "AQPE": ["SQPE_b"],
    "AQPE_n": ["AQPE", "SQPE_n"],
    "AQPE_0": ["AQPE", "SQPE_0"],
    "AQPE_1": ["AQPE_0", "SQPE_1"],
    "AQPE_a": ["AQPE", "SQPE_a"],
    "EPE": ["AQPE"],
    "EPE_n": ["EPE", "AQPE_n"],
    "EPE_0": ["EPE", "AQPE_0"],
    "EPE_1": ["EPE_0", "AQPE_1"],
    "EPE_a": ["EPE", "AQPE_a"],
}


def close_labels(labels: List[ClassLabel]) -> List[ClassLabel]:
    """Close a label set under IMPLICATIONS, keeping parameters of the a-families."""
    params = {label.name: label.param for label in labels}
    pending = list(params)
    while pending:
        name = pending.pop()
        for implied in IMPLICATIONS.get(name, []):
            if implied not in params:
                params[implied] = params.get(name) if implied.endswith("_a") else None
                pending.append(implied)
    return [ClassLabel(name=n, param=p) for n, p in sorted(params.items(), key=lambda kv: _label_order(kv[0]))]


def _label_order(name: str) -> Tuple[int, str]:
    order = ["PE", "QPE", "SQPE", "AQPE", "EPE"]
    family = name.split("_")[0].rstrip("'c").rstrip("0123456789")
    return (order.index(family) if family in order else len(order), name)


def classify(eq: ParabolicEquation, samples: int = DEFAULT_SAMPLES, tol: float = DEFAULT_TOL,
             seed: int = DEFAULT_SEED) -> ClassificationReport:
    """
    Every label whose defining identity passes the sampled test, closed
    under implication, with witnesses for the labels that fail.
    """
    report = ClassificationReport()
    validity = validate(eq, samples, tol, seed)
    if not validity.passed:
        report.failed["validate"] = validity
        report.notes.append(f"equation is not parabolic on the sampled domain: {validity.detail}")
        return report

    u, t = eq.u.symbol, eq.t.symbol
    xs = eq.base_symbols
    holds: Dict[str, Optional[str]] = {"PE": None}
    columns = sample(eq.dom, samples, seed)

    def record(label: str, verdict: Verdict, param: Optional[str] = None) -> bool:
        if verdict.passed:
            holds[label] = param
            return True
        report.failed[label] = verdict
        return False

    def independent(exprs, symbols) -> Verdict:
        verdicts = [is_independent_of(e, symbols, eq.dom, samples, tol, seed) for e in exprs]
        return Verdict.combine(verdicts)

    def vanishes(exprs) -> Verdict:
        return Verdict.combine([compare_on_samples(e, sp.S.Zero, columns, tol, seed) for e in exprs])

    b_entries = [eq.b[i, j] for i, j in index_pairs(eq.n)]
    c_entries = [eq.c[i, j] for i, j in index_pairs(eq.n)]

    lam, pe1 = factor_pe1(eq, samples, tol, seed)
    record("PE1", pe1)
    factored, pe2 = factor_pe2(eq, None, samples, tol, seed)
    record("PE2", pe2)
    if factored is not None:
        factored.lam = lam
        report.factored = factored.as_strings()
    if "PE1" in holds and "PE2" in holds:
        holds["PE3"] = None
    record("PE4", independent(b_entries, [u]))
    if "PE4" in holds and "PE1" in holds:
        holds["PE5"] = None

    if not record("QPE", vanishes(c_entries)):
        return _finish(report, holds)
    if eq.compact:
        holds["QPEc"] = None

    if factored is None:
        return _finish(report, holds)
    holds["QPE'"] = None
    report.a_nc = diffusion_nonconstant(eq, factored.a, samples, tol, seed)
    if report.a_nc:
        holds["QPE'_n"] = None
    if "PE4" in holds:
        holds["QPE'_1"] = None

    split, qpe2 = factor_qpe2(eq, factored, samples, tol, seed)
    if not record("QPE''", qpe2):
        return _finish(report, holds)
    report.factored = split.as_strings()
    if split.ambiguous:
        report.notes.append(qpe2.detail)
        holds["QPE''_0"] = None
    else:
        record("QPE''_0", vanishes(split.xi))
    if report.a_nc:
        holds["QPE''_n"] = None

    a_text = to_text(factored.a)
    record("QPE''_a", independent([factored.a], [t, *xs]), a_text)
    if "PE4" in holds and record("QPE''_1", independent(eq.bvec, [u])):
        record("QPE''_1q", vanishes([sp.diff(eq.q, u, 2)]))

    # SQPE objects are the QPE'' objects; its subcategories mirror the QPE'' ones
    holds["SQPE"] = None
    for suffix in ("_0", "_n", "_1"):
        if f"QPE''{suffix}" in holds:
            holds[f"SQPE{suffix}"] = None
    if "QPE''_a" in holds:
        holds["SQPE_a"] = a_text
    ratios = [tidy(factored.bbar[i, j] / factored.bbar[0, 0]) for i, j in index_pairs(eq.n)]
    if record("SQPE_b", independent(ratios, [t])):
        static = independent([*b_entries, *eq.bvec, eq.q], [t])
        if record("AQPE", static):
            for suffix in ("_0", "_n", "_1"):
                if f"QPE''{suffix}" in holds:
                    holds[f"AQPE{suffix}"] = None
            if "QPE''_a" in holds:
                holds["AQPE_a"] = a_text
            # EPE objects coincide with AQPE objects; only morphisms differ
            for label in [k for k in list(holds) if k.startswith("AQPE")]:
                holds["EPE" + label[4:]] = holds[label]
    return _finish(report, holds)


def _finish(report: ClassificationReport, holds: Dict[str, Optional[str]]) -> ClassificationReport:
    report.labels = close_labels([ClassLabel(name=n, param=p) for n, p in holds.items()])
    names = report.names()
    for name in list(report.failed):
        if name in names:
            del report.failed[name]
    logger.info(f"classified: {', '.join(str(label) for label in report.labels)}")
    return report


def expand_geometry(geq: GeometricEquation) -> ParabolicEquation:
    """
    Coordinate form of u_t = a (Delta u + eta.grad u) + xi.grad u + q:
    b^ij = a g^ij, b^i = a(-g^jk Gamma^i_jk + eta^i) + xi^i, c = 0.
    """
    g = geq.g
    n = g.rows
    xs = [x.symbol for x in geq.xs]
    if g.shape != (n, n) or n != len(xs):
        raise GeometryError(f"Metric must be {len(xs)}x{len(xs)}, got {g.shape}")
    for i in range(n):
        for j in range(i + 1, n):
            if sp.simplify(g[i, j] - g[j, i]) != 0:
                raise GeometryError(f"Metric is not symmetric at g.{i + 1}.{j + 1}")

    det = sp.simplify(g.det())
    if det == 0:
        raise GeometryError("Metric is singular")
    ginv = (g.adjugate() / det).applyfunc(lambda e: tidy(sp.expand(e)))

    # Gamma^i_jk = 1/2 g^il (d_j g_lk + d_k g_lj - d_l g_jk)
    dg = [[[sp.diff(g[l, k], xs[j]) for k in range(n)] for l in range(n)] for j in range(n)]
    contracted = []
    for i in range(n):
        total = sp.S.Zero
        for j in range(n):
            for k in range(n):
                if ginv[j, k] == 0:
                    continue
                gamma = sp.S.Zero
                for l in range(n):
                    if ginv[i, l] == 0:
                        continue
                    gamma += ginv[i, l] * (dg[j][l][k] + dg[k][l][j] - dg[l][j][k])
                total += ginv[j, k] * gamma / 2
        contracted.append(tidy(sp.expand(total)))

    b = (geq.a * ginv).applyfunc(tidy)
    bvec = [tidy(geq.a * (-contracted[i] + geq.eta[i]) + geq.xi[i]) for i in range(n)]
    logger.info(f"expanded geometry of {geq.name} ({n}D, det g = {to_text(det)})")
    return ParabolicEquation(
        name=geq.name, context=geq.context, t=geq.t, xs=geq.xs, u=geq.u, dom=geq.dom,
        b=b, c=sp.zeros(n, n), bvec=bvec, q=geq.q, compact=geq.compact, u0=geq.u0,
    )


def equivalent(e1: ParabolicEquation, e2: ParabolicEquation, samples: int = DEFAULT_SAMPLES,
               tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED) -> Verdict:
    """Coefficientwise sampled equality; variables are matched by position."""
    if e1.n != e2.n:
        return Verdict(status=VerdictStatus.FAIL, seed=seed, detail=f"dimensions {e1.n} and {e2.n} differ")
    rename = dict(zip(e2.symbols, e1.symbols))
    first, second = e1.coefficients(), e2.coefficients()
    columns = sample(e1.dom, samples, seed)
    verdicts = []
    for key, expr in first.items():
        verdict = compare_on_samples(expr, second[key].xreplace(rename), columns, tol, seed)
        if verdict.status != VerdictStatus.PASS:
            verdict.detail = f"{key}: {verdict.detail}"
        verdicts.append(verdict)
    return Verdict.combine(verdicts)


def require_valid(eq: ParabolicEquation, samples: int = DEFAULT_SAMPLES, tol: float = DEFAULT_TOL,
                  seed: int = DEFAULT_SEED) -> Verdict:
    verdict = validate(eq, samples, tol, seed)
    if verdict.status == VerdictStatus.INCONCLUSIVE:
        raise InconclusiveError(f"{eq.name}: {verdict.detail}")
    return verdict
