"""
Screening service module: eligibility rules, per-sequence flagging against
tabulated quantiles, multivariate tuple assembly, correlation histograms and
group-level proportion reports.
"""
import logging
from collections import OrderedDict
from typing import Dict, Iterable, List, Mapping, Optional, Sequence as Seq, Tuple, Union

import numpy as np

from models.cohort import Cohort, Sequence, VectorSequence
from models.results import (
    ConstantSequenceReport,
    CorrelationHistogram,
    Eligibility,
    GroupReport,
    ScreeningResult,
    ScreeningSummary,
    StatKind,
)
from models.transformation import Transformation, TransformationKind
from services.cohort_service import (
    build_sequences,
    detect_constant_sequences,
    observations_by_time,
    season_counts,
)
from services.statistics_service import (
    build_design,
    pearson_r,
    statistic_of,
    student_critical_value,
    student_two_sided_p,
)
from services.tabulation_service import TableStore, mc_p_value, tabulate
from services.transform_service import apply_sequence, apply_values
from utils.errors import DegenerateSampleError, IneligibleError, ZScreenError

logger = logging.getLogger(__name__)

DEFAULT_TUPLES: Tuple[Tuple[str, ...], ...] = (
    ("ferritin", "serum iron"),
    ("erythrocytes", "hemoglobin", "hematocrit"),
)
DEFAULT_PAIRS: Tuple[Tuple[str, str], ...] = (
    ("ferritin", "serum iron"),
    ("erythrocytes", "hemoglobin"),
    ("erythrocytes", "hematocrit"),
    ("hemoglobin", "hematocrit"),
)

GROUPINGS = ("status", "discipline", "all")
MULTIPLE_GROUP = "multiple"
UNKNOWN_GROUP = "unknown"
ALL_GROUP = "all"

SCREENED = "screened"
INELIGIBLE = "ineligible"
ERROR = "error"

CORRELATION_MIN_N = 10
CORRELATION_BINS = 20

IDENTITY = Transformation(TransformationKind.IDENTITY)


def eligible(kind: StatKind, seq: Union[Sequence, VectorSequence]) -> Eligibility:
    """
    Decide whether a sequence (or vector sequence for t3) can be screened with a statistic.

    t0, t1 and t4a need n >= 3, t2 needs n >= 4, t3 needs n >= d + 2, t4b
    needs at least two summer and two winter observations, t4c needs n >= 4
    and calendar dates.
    """
    kind = StatKind(kind)
    n = seq.n
    if kind in (StatKind.T0, StatKind.T1, StatKind.T4A):
        return Eligibility(True) if n >= 3 else Eligibility(False, f"n={n} < 3")
    if kind == StatKind.T2:
        return Eligibility(True) if n >= 4 else Eligibility(False, f"n={n} < 4")
    if kind == StatKind.T3:
        d = seq.d if isinstance(seq, VectorSequence) else 1
        return Eligibility(True) if n >= d + 2 else Eligibility(False, f"n={n} < d + 2 = {d + 2}")
    if kind == StatKind.T4B:
        summer, winter = season_counts(seq)
        if summer >= 2 and winter >= 2:
            return Eligibility(True)
        return Eligibility(False, f"{summer} summer and {winter} winter observation(s), need 2 of each")
    if kind == StatKind.T4C:
        if not seq.has_calendar_dates:
            return Eligibility(False, "no calendar dates")
        return Eligibility(True) if n >= 4 else Eligibility(False, f"n={n} < 4")
    return Eligibility(False, f"{kind.value} is not a screening statistic")


def assemble_tuples(cohort: Cohort, biomarkers: Seq[str]) -> List[VectorSequence]:
    """
    Build one vector sequence per individual from the time points where every
    requested biomarker was measured.

    Raises:
        ValueError: Fewer than two biomarkers requested
    """
    names = tuple(biomarkers)
    if len(names) < 2:
        raise ValueError("a tuple needs at least two biomarkers; use the univariate path for one")
    tuples = []
    for individual_id, by_time in observations_by_time(cohort).items():
        times, rows = [], []
        for time, values in by_time.items():
            if all(name in values for name in names):
                times.append(time)
                rows.append(tuple(values[name] for name in names))
        if rows:
            tuples.append(VectorSequence(individual_id, names, tuple(rows), tuple(times)))
    return tuples


def _transform_vector(seq: VectorSequence, transformations: Mapping[str, Transformation]) -> np.ndarray:
    columns = [
        apply_values(transformations.get(name, IDENTITY), [row[j] for row in seq.values])
        for j, name in enumerate(seq.biomarkers)
    ]
    return np.column_stack(columns)


class _Screener:
    """Per-sequence screening with the tabulation parameters of one run."""

    def __init__(self, kind: StatKind, alpha: float, reps: int, seed: int, store: Optional[TableStore],
                 threads: int, block_size: Optional[int], p_values: bool):
        self.kind = kind
        self.alpha = alpha
        self.reps = reps
        self.seed = seed
        self.store = store
        self.threads = threads
        self.block_size = block_size
        self.p_values = p_values

    def critical(self, n: int, d: int, design) -> float:
        if self.kind == StatKind.T0:
            return student_critical_value(self.alpha, n - 2)
        table = tabulate(self.kind, n, self.alpha, self.reps, self.seed, d=d, design=design,
                         store=self.store, threads=self.threads, block_size=self.block_size)
        return table.quantile

    def p_value(self, value: float, n: int, d: int, design) -> Optional[float]:
        if self.kind == StatKind.T0:
            return student_two_sided_p(value, n - 2)
        if not self.p_values:
            return None
        return mc_p_value(value, self.kind, n, self.reps, self.seed, d=d, design=design,
                          threads=self.threads, block_size=self.block_size)

    def screen_one(self, seq: Union[Sequence, VectorSequence],
                   transformations: Mapping[str, Transformation]) -> ScreeningResult:
        biomarkers = seq.biomarkers if isinstance(seq, VectorSequence) else (seq.biomarker,)
        base = dict(individual_id=seq.individual_id, biomarkers=tuple(biomarkers), kind=self.kind, n=seq.n)

        check = eligible(self.kind, seq)
        if not check:
            return ScreeningResult(status=INELIGIBLE, note=check.reason, **base)

        try:
            design = None
            d = 1
            if isinstance(seq, VectorSequence):
                values = _transform_vector(seq, transformations)
                d = seq.d
            else:
                transformed = apply_sequence(transformations.get(seq.biomarker, IDENTITY), seq)
                values = transformed.values
                if self.kind.is_linear_model:
                    design = build_design(self.kind.model, transformed)
            result = statistic_of(self.kind, values, design)
            magnitude = abs(result.value) if self.kind == StatKind.T0 else result.value
            critical = self.critical(seq.n, d, design)
            p = self.p_value(magnitude, seq.n, d, design)
        except ZScreenError as e:
            logger.debug(f"{seq.individual_id}: {e}")
            return ScreeningResult(status=ERROR, note=str(e), **base)

        return ScreeningResult(
            status=SCREENED,
            value=result.value,
            critical_value=critical,
            p_value=p,
            flagged=bool(magnitude > critical),
            location=result.location,
            note="; ".join(result.notes),
            extra=dict(result.extra),
            **base,
        )


def screen(
    cohort: Cohort,
    biomarkers: Union[str, Seq[str]],
    kind: StatKind,
    alpha: float,
    transformations: Optional[Mapping[str, Transformation]] = None,
    reps: int = 100_000,
    seed: int = 0,
    store: Optional[TableStore] = None,
    threads: int = 1,
    block_size: Optional[int] = None,
    p_values: bool = False,
) -> ScreeningSummary:
    """
    Screen every individual of a cohort for one biomarker (or one tuple for t3).

    Args:
        cohort: Parsed cohort
        biomarkers: A biomarker name, or the tuple of names for t3
        kind: Statistic to screen with
        alpha: Significance level
        transformations: Transformation per biomarker (identity when absent)
        reps, seed, store, threads, block_size: Monte Carlo tabulation parameters
        p_values: Also compute Monte Carlo p-values (t0 always has an exact one)

    Returns:
        A ScreeningSummary; ineligible and failed sequences are kept in the
        results but left out of the denominator

    Raises:
        IneligibleError: t4c on a cohort without calendar dates
    """
    kind = StatKind(kind)
    names = (biomarkers,) if isinstance(biomarkers, str) else tuple(biomarkers)
    transformations = transformations or {}

    constants = None
    if kind == StatKind.T3:
        sequences: List[Union[Sequence, VectorSequence]] = list(assemble_tuples(cohort, names))
    else:
        if len(names) != 1:
            raise ValueError(f"{kind.value} screens one biomarker at a time")
        sequences = list(build_sequences(cohort, names[0]))
        constants = detect_constant_sequences(sequences)
        if kind == StatKind.T4C and sequences and not any(s.has_calendar_dates for s in sequences):
            raise IneligibleError("model C needs calendar dates; season-coded data carries none")

    screener = _Screener(kind, alpha, reps, seed, store, threads, block_size, p_values)
    results = tuple(screener.screen_one(seq, transformations) for seq in sequences)

    screened = [r for r in results if r.screened]
    flagged = sum(1 for r in screened if r.flagged)
    errors = sum(1 for r in results if r.status == ERROR)
    note = "" if screened else "no eligible sequence"
    if errors:
        logger.warning(f"{errors} sequence(s) could not be screened")
    logger.info(f"{kind.value} on {'+'.join(names)}: {flagged}/{len(screened)} flagged, "
                f"{len(results) - len(screened)} excluded")
    return ScreeningSummary(results=results, flagged=flagged, eligible=len(screened), note=note,
                            constants=constants)


def _paired_values(by_time: Mapping, pair: Tuple[str, str]) -> Tuple[List[float], List[float]]:
    xs, ys = [], []
    for values in by_time.values():
        if pair[0] in values and pair[1] in values:
            xs.append(values[pair[0]])
            ys.append(values[pair[1]])
    return xs, ys


def correlation_report(
    cohort: Cohort,
    pairs: Iterable[Tuple[str, str]] = DEFAULT_PAIRS,
    min_n: int = CORRELATION_MIN_N,
    bins: int = CORRELATION_BINS,
) -> List[CorrelationHistogram]:
    """
    Histogram of the per-individual Pearson correlations of biomarker pairs.

    Only individuals with at least `min_n` time points where both biomarkers
    were measured contribute. The histogram covers [-1, 1] with `bins` equal bins.
    """
    grouped = observations_by_time(cohort)
    histograms = []
    for pair in pairs:
        pair = (pair[0], pair[1])
        r_values = []
        skipped = 0
        for by_time in grouped.values():
            xs, ys = _paired_values(by_time, pair)
            if len(xs) < min_n:
                continue
            try:
                r_values.append(pearson_r(xs, ys))
            except DegenerateSampleError:
                skipped += 1
        counts, edges = np.histogram(r_values, bins=bins, range=(-1.0, 1.0))
        note = "" if r_values else f"no individual with at least {min_n} paired observations"
        if skipped:
            logger.warning(f"{pair[0]}/{pair[1]}: skipped {skipped} constant sequence(s)")
        histograms.append(CorrelationHistogram(
            pair=pair,
            r_values=tuple(r_values),
            counts=tuple(int(c) for c in counts),
            edges=tuple(float(e) for e in edges),
            num_skipped_degenerate=skipped,
            note=note,
        ))
    return histograms


def group_of(cohort: Cohort, individual_id: str, grouping: str) -> str:
    """Group label of an individual; several disciplines form the 'multiple' group."""
    if grouping == "all":
        return ALL_GROUP
    individual = cohort.individual(individual_id)
    if grouping == "status":
        return individual.status.value if individual else UNKNOWN_GROUP
    if grouping == "discipline":
        if individual is None or not individual.disciplines:
            return UNKNOWN_GROUP
        if len(individual.disciplines) > 1:
            return MULTIPLE_GROUP
        return next(iter(individual.disciplines))
    raise ValueError(f"unknown grouping {grouping!r}, expected one of {', '.join(GROUPINGS)}")


def group_report(results: Iterable[ScreeningResult], cohort: Cohort, grouping: str) -> List[GroupReport]:
    """
    Flagged/eligible counts per (group, biomarker, kind).

    Only screened results count; the groups of one grouping are disjoint.
    """
    counts: Dict[Tuple[str, str, StatKind], List[int]] = OrderedDict()
    for result in results:
        if not result.screened:
            continue
        key = (group_of(cohort, result.individual_id, grouping), "+".join(result.biomarkers), result.kind)
        entry = counts.setdefault(key, [0, 0])
        entry[0] += int(result.flagged)
        entry[1] += 1
    reports = [
        GroupReport(grouping=grouping, group=group, biomarker=biomarker, kind=kind, flagged=f, eligible=e)
        for (group, biomarker, kind), (f, e) in counts.items()
    ]
    return sorted(reports, key=lambda r: (r.group, r.biomarker, r.kind.value))


def constant_report(cohort: Cohort, biomarker: str, min_n: int = 3) -> ConstantSequenceReport:
    return detect_constant_sequences(build_sequences(cohort, biomarker), min_n)
