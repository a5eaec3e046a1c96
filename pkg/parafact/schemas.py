from pydantic import BaseModel, Field
from typing import Any, Dict, FrozenSet, List, Optional
from datetime import datetime
from enum import Enum


class VerdictStatus(str, Enum):
    PASS = "Pass"
    FAIL = "Fail"
    INCONCLUSIVE = "Inconclusive"


class Verdict(BaseModel):
    status: VerdictStatus = Field(..., description="Pass, Fail or Inconclusive")
    witness: Optional[List[Dict[str, float]]] = Field(None, description="Witness point(s); always present on Fail")
    detail: Optional[str] = Field(None, description="Human-readable reason")
    max_residual: float = Field(0.0, description="Largest scaled residual over evaluated samples")
    mean_residual: float = Field(0.0, description="Mean scaled residual over evaluated samples")
    samples: int = Field(0, description="Number of evaluated samples")
    singular: int = Field(0, description="Number of singular (NaN/Inf) samples")
    seed: Optional[int] = Field(None, description="Seed of the sample sequence")

    class Config:
        json_schema_extra = {
            "example": {
                "status": "Fail",
                "witness": [{"y": 1.5707963, "v": 1.5707963}],
                "detail": "1 != -1",
                "max_residual": 0.6667,
                "mean_residual": 0.21,
                "samples": 1000,
                "singular": 0,
                "seed": 0
            }
        }

    @property
    def passed(self) -> bool:
        return self.status == VerdictStatus.PASS

    @classmethod
    def combine(cls, verdicts: List["Verdict"]) -> "Verdict":
        """
        Fold several verdicts into one: any Fail wins, then any Inconclusive.
        """
        if not verdicts:
            return cls(status=VerdictStatus.PASS)
        for status in (VerdictStatus.FAIL, VerdictStatus.INCONCLUSIVE):
            for v in verdicts:
                if v.status == status:
                    return v
        return cls(
            status=VerdictStatus.PASS,
            max_residual=max(v.max_residual for v in verdicts),
            mean_residual=sum(v.mean_residual for v in verdicts) / len(verdicts),
            samples=sum(v.samples for v in verdicts),
            singular=sum(v.singular for v in verdicts),
            seed=verdicts[0].seed
        )


class FiberPair(BaseModel):
    p1: Dict[str, float] = Field(..., description="Source point (t, x..., u)")
    p2: Dict[str, float] = Field(..., description="Second source point with the same image")
    image: Dict[str, float] = Field(..., description="Common image point (tau, y..., v)")
    defect: float = Field(..., description="|F(p1) - F(p2)| modulo target periods")


class FiberPairSet(BaseModel):
    pairs: List[FiberPair] = Field(default_factory=list)
    requested: int = 0
    discrete: bool = Field(False, description="No nontrivial fiber point was ever found")
    partial: bool = Field(False, description="Fewer pairs than requested")


class MapShape(str, Enum):
    PE_GENERAL = "PE-general"
    TPE = "TPE"
    QPE_AFFINE = "QPE-affine"
    SQPE = "SQPE"
    AQPE_AFFINE = "AQPE-affine"
    EPE = "EPE"


# Ordered from the most general shape to the most special one
SHAPE_ORDER = [
    MapShape.PE_GENERAL,
    MapShape.TPE,
    MapShape.QPE_AFFINE,
    MapShape.SQPE,
    MapShape.AQPE_AFFINE,
    MapShape.EPE
]


class MorphismVerdict(str, Enum):
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"
    INCONCLUSIVE = "Inconclusive"


class ResidualStats(BaseModel):
    max: float = 0.0
    mean: float = 0.0
    count: int = 0


class MorphismReport(BaseModel):
    verdict: MorphismVerdict = Field(..., description="Accepted, Rejected or Inconclusive")
    failing_candidate: Optional[str] = Field(None, description="Candidate that broke fiber-constancy")
    witness: Optional[List[Dict[str, float]]] = Field(None, description="Fiber witness pair")
    candidates: Dict[str, str] = Field(default_factory=dict, description="B^kl, C^kl, B^k, Q in (t,x,u)")
    quotient: Dict[str, str] = Field(default_factory=dict, description="Quotient coefficients in (tau,y,v)")
    quotient_equation: Optional[Any] = Field(None, exclude=True)
    implicit_quotient: bool = Field(False, description="No section: quotient known only on samples")
    implicit_table: Optional[List[Dict[str, float]]] = Field(
        None, description="Candidate values at Newton-inverted target points when the quotient is implicit")
    checks: Dict[str, Verdict] = Field(default_factory=dict, description="Per-candidate verdicts")
    residuals: ResidualStats = Field(default_factory=ResidualStats)
    gauge: Optional[Dict[str, str]] = Field(None, description="phi, psi, phibar, psibar of affine maps")
    shape: Optional[MapShape] = None
    notes: List[str] = Field(default_factory=list)
    seed: int = 0
    tolerances: Dict[str, float] = Field(default_factory=dict)

    class Config:
        arbitrary_types_allowed = True


class IsomorphismReport(BaseModel):
    is_isomorphism: bool
    status: VerdictStatus
    evidence: str
    collision: Optional[FiberPair] = None


class AClassKind(str, Enum):
    CONST = "Const"
    AEXP = "Aexp"
    ADEG = "Adeg"
    AEXP_EXT = "AexpExt"
    ADEG_EXT = "AdegExt"
    NONE = "None"


class AClass(BaseModel):
    kind: AClassKind = Field(..., description="Diffusion-law class of a(u)")
    lam: Optional[float] = Field(None, description="Exponent lambda")
    period: Optional[float] = Field(None, description="Minimal period of H")
    u0: Optional[float] = Field(None, description="Singular point of the power law (Adeg classes)")
    residual: float = Field(0.0, description="Fit residual of the accepted form")
    h_expr: Optional[str] = Field(None, description="Periodic factor H as an expression")

    class Config:
        json_schema_extra = {
            "example": {"kind": "Aexp", "lam": 0.0, "period": 6.283185, "u0": None, "residual": 1e-12}
        }

    @property
    def exceptional(self) -> bool:
        """a belongs to A_exp or A_deg."""
        return self.kind in (AClassKind.AEXP, AClassKind.ADEG)

    @property
    def extended(self) -> bool:
        """a belongs to one of the ext classes (constants included)."""
        return self.kind != AClassKind.NONE


class ClassLabel(BaseModel):
    name: str
    param: Optional[str] = None

    def __str__(self) -> str:
        return f"{self.name}({self.param})" if self.param is not None else self.name

    def __hash__(self):
        return hash((self.name, self.param))


class ClassificationReport(BaseModel):
    labels: List[ClassLabel] = Field(default_factory=list)
    a_nc: bool = False
    factored: Dict[str, Any] = Field(default_factory=dict, description="a, bbar, lambda, bibar, xi, u0")
    failed: Dict[str, Verdict] = Field(default_factory=dict, description="Witnesses for labels that do not hold")
    notes: List[str] = Field(default_factory=list)

    def names(self) -> set:
        return {label.name for label in self.labels}


class ArrowKind(str, Enum):
    WIDE = "Wide"
    FULL = "Full"
    FULL_ISO = "FullIso"
    CLOSED = "Closed"
    CLOSED_ISO = "ClosedIso"
    DENSE = "Dense"
    PLENTIFUL = "Plentiful"


class LatticeArrow(BaseModel):
    src: str
    dst: str
    kinds: FrozenSet[ArrowKind]
    provenance: str
    guard: Optional[str] = Field(None, description="Condition on a: nonexc, nonext or nonconst")
    user: bool = False

    def __hash__(self):
        return hash((self.src, self.dst, self.kinds, self.provenance, self.guard))


class LatticeIntersection(BaseModel):
    node: str = Field(..., description="Name of the intersection")
    left: str
    right: str
    provenance: str
    guard: Optional[str] = None
    user: bool = False


class LatticeCoincidence(BaseModel):
    left: str
    right: str
    provenance: str
    guard: Optional[str] = None
    user: bool = False


class TraceStep(BaseModel):
    rule: str
    premises: List[str] = Field(default_factory=list)
    conclusion: str


class RelationResult(BaseModel):
    src: str
    dst: str
    kinds: FrozenSet[ArrowKind] = frozenset()
    trace: List[TraceStep] = Field(default_factory=list)


class CanonicalForm(BaseModel):
    guaranteed: bool
    node: Optional[str] = None
    morphism: Optional[str] = None
    quotient: Optional[str] = None
    provenance: List[str] = Field(default_factory=list)
    description: str = "no guarantee known"


class RunReport(BaseModel):
    schema_version: int = Field(1, alias="schema", description="Report schema version")
    command: str = Field(..., description="Subcommand that produced the report")
    inputs: Dict[str, str] = Field(default_factory=dict, description="Input path -> sha256")
    verdicts: Dict[str, str] = Field(default_factory=dict)
    quotient: Optional[Dict[str, str]] = None
    labels: List[str] = Field(default_factory=list)
    aclass: Optional[AClass] = None
    seed: int = 0
    tolerances: Dict[str, float] = Field(default_factory=dict)
    wall_time_ms: float = 0.0
    exit_code: int = 0
    details: Dict[str, Any] = Field(default_factory=dict)
    timestamp: Optional[datetime] = Field(default_factory=datetime.utcnow)

    class Config:
        populate_by_name = True
        json_schema_extra = {
            "example": {
                "schema": 1,
                "command": "check",
                "inputs": {"corpus/equations/heat_circle.eq": "3f0c..."},
                "verdicts": {"morphism": "Accepted"},
                "quotient": {"b.1.1": "1", "c.1.1": "0", "b.1": "0", "q": "0"},
                "seed": 0,
                "tolerances": {"tol": 1e-6, "submersion": 1e-7},
                "wall_time_ms": 412.5,
                "exit_code": 0
            }
        }


class HistoryStatistics(BaseModel):
    total_runs: int
    by_command: Dict[str, int]
    by_exit_code: Dict[str, int]
    average_wall_time_ms: float
    time_period_days: int
