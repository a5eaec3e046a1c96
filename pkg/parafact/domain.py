"""
Sampling domains: per-variable intervals or periodic identifications,
plus optional inequality predicates (expressions required to be > 0).
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import sympy as sp

from parafact.core.config import SAMPLE_RADIUS
from parafact.core.exceptions import DomainError


@dataclass(frozen=True)
class Interval:
    lo: float = -math.inf
    hi: float = math.inf
    lo_closed: bool = False
    hi_closed: bool = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError(f"Empty interval ({self.lo}, {self.hi})")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def window(self, radius: float = SAMPLE_RADIUS) -> Tuple[float, float]:
        """Finite window used for sampling; unbounded sides are cut at +-radius."""
        lo, hi = self.lo, self.hi
        if not math.isfinite(lo) and not math.isfinite(hi):
            return -radius, radius
        if not math.isfinite(lo):
            return min(hi - radius, -radius), hi
        if not math.isfinite(hi):
            return lo, max(lo + radius, radius)
        return lo, hi

    def contains(self, value: float) -> bool:
        if value < self.lo or value > self.hi:
            return False
        if value == self.lo and not self.lo_closed:
            return False
        if value == self.hi and not self.hi_closed:
            return False
        return True

    def midpoint(self) -> float:
        lo, hi = self.window()
        return 0.5 * (lo + hi)

    def __str__(self) -> str:
        left = "[" if self.lo_closed else "("
        right = "]" if self.hi_closed else ")"
        return f"{left}{_fmt(self.lo)},{_fmt(self.hi)}{right}"


def _fmt(value: float) -> str:
    if math.isinf(value):
        return "-inf" if value < 0 else "inf"
    return repr(float(value)) if value != int(value) else str(int(value))


@dataclass(frozen=True)
class Periodic:
    modulus: float
    start: float = 0.0

    def __post_init__(self):
        if not self.modulus > 0:
            raise DomainError(f"Periodic modulus must be positive, got {self.modulus}")

    def window(self, radius: float = SAMPLE_RADIUS) -> Tuple[float, float]:
        return self.start, self.start + self.modulus

    def contains(self, value: float) -> bool:
        return math.isfinite(value)

    def midpoint(self) -> float:
        return self.start + 0.5 * self.modulus

    @property
    def bounded(self) -> bool:
        return True

    def __str__(self) -> str:
        return f"mod {_fmt(self.modulus)}"


@dataclass
class Domain:
    """
    Box (with periodic sides) in the named variables, cut by predicates.
    Variable order is the insertion order of `axes`.
    """
    axes: Dict[str, object] = field(default_factory=dict)
    predicates: List[sp.Expr] = field(default_factory=list)

    @property
    def names(self) -> List[str]:
        return list(self.axes.keys())

    def axis(self, name: str):
        return self.axes[name]

    def periods(self) -> Dict[str, float]:
        return {n: a.modulus for n, a in self.axes.items() if isinstance(a, Periodic)}

    def windows(self) -> List[Tuple[float, float]]:
        return [self.axes[n].window() for n in self.names]

    def restrict(self, names: List[str]) -> "Domain":
        """Sub-domain on some axes; predicates touching other axes are dropped."""
        keep = set(names)
        preds = [p for p in self.predicates if {s.name for s in p.free_symbols} <= keep]
        return Domain({n: self.axes[n] for n in names}, preds)

    def with_axis(self, name: str, axis) -> "Domain":
        axes = dict(self.axes)
        axes[name] = axis
        return Domain(axes, list(self.predicates))

    def center(self) -> Dict[str, float]:
        return {n: a.midpoint() for n, a in self.axes.items()}

    def contains(self, point: Dict[str, float]) -> bool:
        for name, axis in self.axes.items():
            if name in point and not axis.contains(point[name]):
                return False
        return True


def parse_interval(text: str) -> Interval:
    """
    Parse "lo,hi" or "(lo,hi]" style text; inf/-inf allowed, brackets default open.
    """
    s = text.strip()
    lo_closed = s.startswith("[")
    hi_closed = s.endswith("]")
    s = s.strip("[]()")
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 2:
        raise DomainError(f"Interval needs two endpoints: {text!r}")
    try:
        lo, hi = (_parse_endpoint(p) for p in parts)
    except (ValueError, TypeError, sp.SympifyError) as e:
        raise DomainError(f"Bad interval endpoint in {text!r}: {e}")
    return Interval(lo, hi, lo_closed, hi_closed)


def _parse_endpoint(text: str) -> float:
    t = text.lower()
    if t in ("inf", "+inf", "oo", "+oo"):
        return math.inf
    if t in ("-inf", "-oo"):
        return -math.inf
    return float(sp.sympify(t.replace("^", "**")).evalf())


def parse_modulus(text: str) -> Periodic:
    try:
        value = float(sp.sympify(text.strip().replace("^", "**")).evalf())
    except (sp.SympifyError, TypeError) as e:
        raise DomainError(f"Bad modulus {text!r}: {e}")
    return Periodic(value)


def optional_interval(axis) -> Optional[Interval]:
    return axis if isinstance(axis, Interval) else None
