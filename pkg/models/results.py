"""Models for statistic values, tabulated quantiles and screening reports."""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from models.transformation import Transformation


class StatKind(str, Enum):
    T0 = "t0"
    T1 = "t1"
    T2 = "t2"
    T3 = "t3"
    T4A = "t4a"
    T4B = "t4b"
    T4C = "t4c"
    T4 = "t4"  # arbitrary full-rank design

    @property
    def is_linear_model(self) -> bool:
        return self in (StatKind.T4A, StatKind.T4B, StatKind.T4C, StatKind.T4)

    @property
    def model(self) -> Optional["ModelKind"]:
        return {
            StatKind.T4A: ModelKind.A,
            StatKind.T4B: ModelKind.B,
            StatKind.T4C: ModelKind.C,
        }.get(self)


class ModelKind(str, Enum):
    A = "A"
    B = "B"
    C = "C"


def format_value(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))


@dataclass(frozen=True)
class StatResult:
    """
    Value of one test statistic on one sequence.

    `location` is a 1-based index for T0/T1/T3/T4 and a 1-based closed
    interval (a, b) for T2. T0 stores the signed t value. Constant sequences
    and perfect fits have no extreme observation: they carry value 0,
    location None and a note naming the reason.
    """
    kind: StatKind
    value: float
    location: Optional[Any] = None
    df: Optional[int] = None
    dims: Optional[Tuple[int, int]] = None
    notes: Tuple[str, ...] = ()
    extra: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        location = self.location
        if isinstance(location, tuple):
            location = list(location)
        return {
            "kind": self.kind.value,
            "value": format_value(self.value),
            "location": location,
            "df": self.df,
            "dims": list(self.dims) if self.dims else None,
            "notes": list(self.notes),
            **({"extra": {k: format_value(v) for k, v in sorted(self.extra.items())}} if self.extra else {}),
        }


@dataclass(frozen=True)
class DesignMatrix:
    """n x p design matrix of a Gaussian linear model."""
    matrix: np.ndarray
    model: Optional[ModelKind] = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2:
            raise ValueError("design matrix must be two-dimensional")
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def p(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class LeastSquaresFit:
    coefficients: np.ndarray
    residual_variance: float
    fitted: np.ndarray


@dataclass(frozen=True)
class NormalityRow:
    transformation: Transformation
    p_values: Tuple[float, ...]
    num_skipped_degenerate: int
    ks_d: float
    global_p: float

    @property
    def num_sequences_tested(self) -> int:
        return len(self.p_values)


@dataclass(frozen=True)
class NormalityReport:
    rows: Tuple[NormalityRow, ...]
    selected: Transformation
    dropped: Tuple[str, ...] = ()

    def to_records(self) -> List[Dict[str, Any]]:
        return [
            {
                "transformation": row.transformation.name,
                "num_sequences_tested": row.num_sequences_tested,
                "num_skipped_degenerate": row.num_skipped_degenerate,
                "KS_D": row.ks_d,
                "global_p": row.global_p,
                "selected": row.transformation == self.selected,
            }
            for row in self.rows
        ]


@dataclass(frozen=True)
class NullModel:
    """Null model of a Monte Carlo tabulated statistic (iid N(0, 1) noise)."""
    kind: StatKind
    n: int
    d: int = 1
    design: Optional[DesignMatrix] = None


@dataclass(frozen=True)
class QuantileTable:
    kind: StatKind
    n: int
    d: int
    design_hash: str
    alpha: float
    reps: int
    seed: int
    block_size: int
    quantile: float

    @property
    def key(self) -> Tuple:
        return (self.kind.value, self.n, self.d, self.design_hash, repr(float(self.alpha)), self.reps, self.seed,
                self.block_size)


@dataclass(frozen=True)
class Eligibility:
    ok: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class ScreeningResult:
    individual_id: str
    biomarkers: Tuple[str, ...]
    kind: StatKind
    status: str  # "screened" | "ineligible" | "error"
    n: int
    value: Optional[float] = None
    critical_value: Optional[float] = None
    p_value: Optional[float] = None
    flagged: bool = False
    location: Optional[Any] = None
    note: str = ""
    extra: Dict[str, float] = field(default_factory=dict)

    @property
    def screened(self) -> bool:
        return self.status == "screened"

    def to_dict(self) -> Dict[str, Any]:
        location = self.location
        if isinstance(location, tuple):
            location = list(location)
        record = {
            "individual_id": self.individual_id,
            "biomarkers": list(self.biomarkers),
            "kind": self.kind.value,
            "status": self.status,
            "n": self.n,
            "value": None if self.value is None else format_value(self.value),
            "critical_value": None if self.critical_value is None else format_value(self.critical_value),
            "p_value": self.p_value,
            "flagged": self.flagged,
            "location": location,
            "note": self.note,
        }
        if self.extra:
            record["extra"] = {k: format_value(v) for k, v in sorted(self.extra.items())}
        return record


@dataclass(frozen=True)
class ScreeningSummary:
    results: Tuple[ScreeningResult, ...]
    flagged: int
    eligible: int
    note: str = ""
    constants: Optional["ConstantSequenceReport"] = None

    @property
    def proportion(self) -> Optional[float]:
        if self.eligible == 0:
            return None
        return self.flagged / self.eligible


@dataclass(frozen=True)
class GroupReport:
    grouping: str
    group: str
    biomarker: str
    kind: StatKind
    flagged: int
    eligible: int

    @property
    def percentage(self) -> Optional[float]:
        if self.eligible == 0:
            return None
        return 100.0 * self.flagged / self.eligible


@dataclass(frozen=True)
class CorrelationHistogram:
    pair: Tuple[str, str]
    r_values: Tuple[float, ...]
    counts: Tuple[int, ...]
    edges: Tuple[float, ...]
    num_skipped_degenerate: int = 0
    note: str = ""


@dataclass(frozen=True)
class ConstantSequenceReport:
    flagged_ids: Tuple[str, ...]
    eligible: int

    @property
    def proportion(self) -> float:
        if self.eligible == 0:
            return 0.0
        return len(self.flagged_ids) / self.eligible


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration of one command run; embedded in every output."""
    command: str
    input_path: Optional[str] = None
    output_path: Optional[str] = None
    alpha: float = 0.05
    reps: int = 100_000
    seed: Optional[int] = None
    kind: Optional[str] = None
    model: Optional[str] = None
    biomarkers: Tuple[str, ...] = ()
    transform: Optional[str] = None
    family: Tuple[str, ...] = ()
    group_by: Tuple[str, ...] = ()
    pairs: Tuple[Tuple[str, str], ...] = ()
    min_n: Optional[int] = None
    sizes: Tuple[int, ...] = ()
    d: int = 1
    replicates: int = 20_000
    bins: int = 20
    p_values: bool = False
    block_size: int = 1000
    threads: int = 1
    table_path: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        # threads is left out: outputs are identical for any thread count
        return {
            "command": self.command,
            "input_path": self.input_path,
            "output_path": self.output_path,
            "alpha": self.alpha,
            "reps": self.reps,
            "seed": self.seed,
            "kind": self.kind,
            "model": self.model,
            "biomarkers": list(self.biomarkers),
            "transform": self.transform,
            "family": list(self.family),
            "group_by": list(self.group_by),
            "pairs": [list(p) for p in self.pairs],
            "min_n": self.min_n,
            "sizes": list(self.sizes),
            "d": self.d,
            "replicates": self.replicates,
            "bins": self.bins,
            "p_values": self.p_values,
            "block_size": self.block_size,
            "table_path": self.table_path,
        }
