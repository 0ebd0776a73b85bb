"""
Cohort service module: cohort file ingestion, sequence assembly, season
classification and constant-sequence detection.
"""
import csv
import datetime as dt
import io
import logging
import math
from collections import OrderedDict
from typing import Dict, Iterable, List, Optional, Set, Tuple

import pandas as pd

from models.cohort import (
    Cohort,
    Individual,
    Observation,
    RejectedRow,
    SeasonLabel,
    SeasonTime,
    Sequence,
    Status,
    TimePoint,
    time_sort_key,
)
from models.results import ConstantSequenceReport
from utils.errors import CohortFormatError

logger = logging.getLogger(__name__)

COHORT_COLUMNS = ["individual_id", "biomarker", "value", "date", "season", "year", "status", "discipline"]
MANDATORY_COLUMNS = ["individual_id", "biomarker", "value"]

SUMMER_START = (3, 20)
SUMMER_END = (9, 22)

DISCIPLINE_SEPARATOR = ";"
SPARE_COLUMN_PREFIX = "__extra_"


def classify_season(date: dt.date) -> SeasonLabel:
    """
    Classify a calendar date into the summer or winter season.

    Summer is the closed month-day interval [03-20, 09-22] of every year.
    """
    month_day = (date.month, date.day)
    if SUMMER_START <= month_day <= SUMMER_END:
        return SeasonLabel.SUMMER
    return SeasonLabel.WINTER


def season_of(time: TimePoint) -> SeasonLabel:
    if isinstance(time, SeasonTime):
        return time.season
    return classify_season(time)


def _parse_time(row: Dict[str, str]) -> TimePoint:
    date_text = row.get("date", "").strip()
    season_text = row.get("season", "").strip()
    year_text = row.get("year", "").strip()

    if date_text and (season_text or year_text):
        raise ValueError("ambiguous time: both date and season/year given")
    if date_text:
        try:
            return dt.date.fromisoformat(date_text)
        except ValueError:
            raise ValueError(f"unparseable date {date_text!r}")
    if season_text and year_text:
        try:
            season = SeasonLabel(season_text.lower())
        except ValueError:
            raise ValueError(f"unknown season {season_text!r}")
        try:
            year = int(year_text)
        except ValueError:
            raise ValueError(f"unparseable year {year_text!r}")
        return SeasonTime(year, season)
    if season_text or year_text:
        raise ValueError("season and year must both be given")
    raise ValueError("missing time: neither date nor season/year given")


def _parse_value(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"unparseable value {text!r}")
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def _parse_status(text: str) -> Status:
    text = text.strip().lower()
    if not text:
        return Status.UNKNOWN
    try:
        return Status(text)
    except ValueError:
        raise ValueError(f"unknown status {text!r}")


def _merge_status(statuses: Set[Status]) -> Status:
    known = {s for s in statuses if s != Status.UNKNOWN}
    if not known:
        return Status.UNKNOWN
    if len(known) == 1:
        return next(iter(known))
    # an athlete seen under both statuses switched during follow-up
    return Status.MIXED


def parse_cohort(text: str) -> Cohort:
    """
    Parse delimited cohort text into a Cohort.

    Args:
        text: Comma-separated content with a header row

    Returns:
        A Cohort with every well-formed row; malformed rows are collected in
        `rejects` with their 1-based line number (the header is line 1)

    Raises:
        CohortFormatError: Unreadable header, or a mandatory column is missing
    """
    try:
        header = pd.read_csv(io.StringIO(text), dtype=str, nrows=0, skipinitialspace=True)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise CohortFormatError(f"cannot read cohort file: {e}")
    columns = [str(c).strip().lower() for c in header.columns]
    missing = [c for c in MANDATORY_COLUMNS if c not in columns]
    if missing:
        raise CohortFormatError(f"missing mandatory column(s): {', '.join(missing)}")
    if "date" not in columns and not {"season", "year"} <= set(columns):
        raise CohortFormatError("missing time columns: need 'date' or both 'season' and 'year'")
    if len(set(columns)) != len(columns):
        raise CohortFormatError("duplicate column names in header")

    # spare columns catch rows with more fields than the header
    width = max((len(fields) for fields in csv.reader(io.StringIO(text), skipinitialspace=True)), default=0)
    spare = [f"{SPARE_COLUMN_PREFIX}{k}" for k in range(max(0, width - len(columns)))]
    try:
        frame = pd.read_csv(io.StringIO(text), header=None, skiprows=1, names=columns + spare, dtype=str,
                            keep_default_na=False, skipinitialspace=True, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame(columns=columns + spare)
    except pd.errors.ParserError as e:
        raise CohortFormatError(f"cannot read cohort file: {e}")

    statuses: "OrderedDict[str, Set[Status]]" = OrderedDict()
    disciplines: Dict[str, Set[str]] = {}
    observations: List[Observation] = []
    rejects: List[RejectedRow] = []

    for position, record in enumerate(frame.to_dict(orient="records")):
        line_number = position + 2
        row = {k: (v if isinstance(v, str) else "") for k, v in record.items()}
        try:
            if any(row[c].strip() for c in spare):
                raise ValueError(f"too many fields: the header has {len(columns)}")
            individual_id = row["individual_id"].strip()
            biomarker = row["biomarker"].strip()
            if not individual_id:
                raise ValueError("empty individual_id")
            if not biomarker:
                raise ValueError("empty biomarker")
            value = _parse_value(row["value"].strip())
            time = _parse_time(row)
            status = _parse_status(row.get("status", ""))
        except ValueError as e:
            rejects.append(RejectedRow(line_number, str(e)))
            continue

        statuses.setdefault(individual_id, set()).add(status)
        names = {d.strip() for d in row.get("discipline", "").split(DISCIPLINE_SEPARATOR) if d.strip()}
        disciplines.setdefault(individual_id, set()).update(names)
        observations.append(Observation(individual_id, biomarker, value, time, len(observations)))

    individuals = OrderedDict(
        (ind_id, Individual(ind_id, _merge_status(found), frozenset(disciplines.get(ind_id, ()))))
        for ind_id, found in statuses.items()
    )

    if rejects:
        logger.warning(f"Rejected {len(rejects)} malformed row(s)")
    logger.info(f"Parsed {len(observations)} observations for {len(individuals)} individuals")
    return Cohort(individuals=dict(individuals), observations=tuple(observations), rejects=tuple(rejects))


def load_cohort(path: str) -> Cohort:
    """Read and parse a cohort file; I/O problems surface as CohortFormatError."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except (OSError, UnicodeDecodeError) as e:
        raise CohortFormatError(f"cannot read {path}: {e}")
    return parse_cohort(text)


def rejects_to_csv(cohort: Cohort) -> str:
    """Render the rejected rows as a line_number,reason table."""
    frame = pd.DataFrame(
        [{"line_number": r.line_number, "reason": r.reason} for r in cohort.rejects],
        columns=["line_number", "reason"],
    )
    return frame.to_csv(index=False, lineterminator="\n")


def _ordered(observations: Iterable[Observation]) -> List[Observation]:
    return sorted(observations, key=lambda o: (time_sort_key(o.time), o.collection_index))


def build_sequences(cohort: Cohort, biomarker: str) -> List[Sequence]:
    """
    Build one time-ordered sequence per individual having the biomarker.

    Ties in time keep their input order. Individuals appear in cohort order.
    """
    by_individual: Dict[str, List[Observation]] = OrderedDict()
    for obs in cohort.observations:
        if obs.biomarker == biomarker:
            by_individual.setdefault(obs.individual_id, []).append(obs)

    sequences = []
    for individual_id, found in by_individual.items():
        ordered = _ordered(found)
        sequences.append(Sequence(
            individual_id=individual_id,
            biomarker=biomarker,
            values=tuple(o.value for o in ordered),
            times=tuple(o.time for o in ordered),
        ))
    return sequences


def observations_by_time(cohort: Cohort, individual_id: Optional[str] = None) -> Dict[str, "OrderedDict[TimePoint, Dict[str, float]]"]:
    """
    Group observations per individual and time point into {biomarker: value} maps.

    The first observation of a biomarker at a given time point wins.
    """
    grouped: Dict[str, "OrderedDict[TimePoint, Dict[str, float]]"] = OrderedDict()
    for obs in _ordered(cohort.observations):
        if individual_id is not None and obs.individual_id != individual_id:
            continue
        at_time = grouped.setdefault(obs.individual_id, OrderedDict()).setdefault(obs.time, {})
        at_time.setdefault(obs.biomarker, obs.value)
    return grouped


def is_constant(seq: Sequence) -> bool:
    first = seq.values[0]
    return all(v == first for v in seq.values)


def detect_constant_sequences(sequences: List[Sequence], min_n: int = 3) -> ConstantSequenceReport:
    """
    Flag sequences of at least `min_n` values that are all exactly equal.

    Args:
        sequences: Sequences to inspect
        min_n: Minimum length for a sequence to be eligible (at least 2)

    Returns:
        A ConstantSequenceReport with the sorted flagged individual ids and
        the number of eligible sequences
    """
    if min_n < 2:
        raise ValueError("min_n must be at least 2")
    eligible = [s for s in sequences if s.n >= min_n]
    flagged = sorted(s.individual_id for s in eligible if is_constant(s))
    return ConstantSequenceReport(flagged_ids=tuple(flagged), eligible=len(eligible))


def season_counts(seq: Sequence) -> Tuple[int, int]:
    """Return (summer count, winter count) of a sequence."""
    seasons = [season_of(t) for t in seq.times]
    summer = sum(1 for s in seasons if s == SeasonLabel.SUMMER)
    return summer, len(seasons) - summer
