"""Models for cohorts, observations and per-individual biomarker sequences."""
import datetime as dt
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Tuple, Union


class Status(str, Enum):
    AMATEUR = "amateur"
    PROFESSIONAL = "professional"
    MIXED = "mixed"
    UNKNOWN = "unknown"


class SeasonLabel(str, Enum):
    SUMMER = "summer"
    WINTER = "winter"


@dataclass(frozen=True, order=True)
class SeasonTime:
    """A season-coded collection time, e.g. (2011, summer)."""
    year: int
    season: SeasonLabel

    def sort_date(self) -> dt.date:
        # winter collections (Jan/Mar) precede summer ones (Jul/Aug) within a year
        if self.season == SeasonLabel.SUMMER:
            return dt.date(self.year, 8, 1)
        return dt.date(self.year, 2, 1)

    def __str__(self) -> str:
        return f"{self.year}-{self.season.value}"


TimePoint = Union[dt.date, SeasonTime]


def time_sort_key(time: TimePoint) -> dt.date:
    """Date used to order observations regardless of their time encoding."""
    if isinstance(time, SeasonTime):
        return time.sort_date()
    return time


@dataclass(frozen=True)
class Individual:
    id: str
    status: Status = Status.UNKNOWN
    disciplines: FrozenSet[str] = frozenset()


@dataclass(frozen=True)
class Observation:
    individual_id: str
    biomarker: str
    value: float
    time: TimePoint
    collection_index: int  # position in the input file, used for stable ordering of ties


@dataclass(frozen=True)
class Sequence:
    """Time-ordered values of one biomarker for one individual."""
    individual_id: str
    biomarker: str
    values: Tuple[float, ...]
    times: Tuple[TimePoint, ...]

    def __post_init__(self):
        if len(self.values) != len(self.times):
            raise ValueError("values and times must have the same length")
        if len(self.values) < 1:
            raise ValueError("a sequence needs at least one observation")

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def has_calendar_dates(self) -> bool:
        return all(isinstance(t, dt.date) for t in self.times)

    def with_values(self, values) -> "Sequence":
        return Sequence(self.individual_id, self.biomarker, tuple(float(v) for v in values), self.times)


@dataclass(frozen=True)
class VectorSequence:
    """Time-ordered d-dimensional observations (one row per complete collection)."""
    individual_id: str
    biomarkers: Tuple[str, ...]
    values: Tuple[Tuple[float, ...], ...]
    times: Tuple[TimePoint, ...]

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def d(self) -> int:
        return len(self.biomarkers)


@dataclass(frozen=True)
class RejectedRow:
    line_number: int
    reason: str


@dataclass(frozen=True)
class Cohort:
    """Individuals and their observations; immutable once parsed."""
    individuals: Dict[str, Individual]
    observations: Tuple[Observation, ...]
    rejects: Tuple[RejectedRow, ...] = ()

    def __post_init__(self):
        for obs in self.observations:
            if obs.individual_id not in self.individuals:
                raise ValueError(f"observation refers to unknown individual {obs.individual_id!r}")

    @property
    def biomarkers(self) -> List[str]:
        seen: Dict[str, None] = {}
        for obs in self.observations:
            seen.setdefault(obs.biomarker, None)
        return list(seen)

    def individual(self, individual_id: str) -> Optional[Individual]:
        return self.individuals.get(individual_id)
