"""
Command implementations behind the CLI entry point.

Each cmd_* function takes a resolved RunConfig, writes its outputs to the
output directory and returns the written paths. Errors propagate as
ZScreenError subclasses; main.py turns them into exit codes.
"""
import datetime as dt
import json
import logging
import os
import re
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from models.cohort import Cohort, SeasonLabel, SeasonTime, Sequence
from models.results import DesignMatrix, RunConfig, StatKind
from models.transformation import Transformation
from services.cohort_service import build_sequences, load_cohort, rejects_to_csv
from services.normality_service import select_transformation
from services.screening_service import (
    DEFAULT_PAIRS,
    DEFAULT_TUPLES,
    correlation_report,
    group_report,
    screen,
)
from services.statistics_service import build_design, student_critical_value
from services.tabulation_service import TableStore, null_model, rejection_rate, tabulate
from services.transform_service import default_family, parse_family, parse_transformation
from ui.components import (
    group_table,
    histogram_record,
    histogram_table,
    normality_table,
    provenance_header,
    quantile_table,
    render_document,
    render_table,
    summary_record,
)
from utils.errors import CohortFormatError, IneligibleError, NoApplicableTransformationError
from utils.io import atomic_write_text, read_text

logger = logging.getLogger(__name__)

SELECTION_FILE = "transformations.json"
DEFAULT_OUTPUT = "results"
DEFAULT_SIZES = (10,)
REFERENCE_SPAN_DAYS = 5 * 365
# spawn key of the reference model C dates; disjoint from the block keys (k,) and (1, k)
_REFERENCE_STREAM = (2, 0)


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def _output_dir(config: RunConfig) -> str:
    path = config.output_path or DEFAULT_OUTPUT
    os.makedirs(path, exist_ok=True)
    return path


def _write(config: RunConfig, name: str, content: str) -> str:
    path = os.path.join(_output_dir(config), name)
    atomic_write_text(path, content)
    logger.info(f"Wrote {path}")
    return path


def _load(config: RunConfig) -> Tuple[Cohort, List[str]]:
    if not config.input_path:
        raise CohortFormatError("no input file given")
    cohort = load_cohort(config.input_path)
    written = []
    if cohort.rejects:
        written.append(_write(config, "rejects.csv", provenance_header(config) + rejects_to_csv(cohort)))
    return cohort, written


def _store(config: RunConfig) -> TableStore:
    return TableStore(config.table_path)


def reference_design(kind: StatKind, n: int, seed: int) -> Optional[DesignMatrix]:
    """
    Fixed design used to calibrate and pre-tabulate the linear-model statistics.

    Model A and B alternate winter and summer collections; model C draws n
    distinct collection days over five years from the seed.
    """
    kind = StatKind(kind)
    if not kind.is_linear_model:
        return None
    if kind == StatKind.T4C:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=_REFERENCE_STREAM)))
        offsets = np.sort(rng.choice(REFERENCE_SPAN_DAYS, size=n, replace=False))
        first = dt.date(2010, 1, 1)
        times = tuple(first + dt.timedelta(days=int(o)) for o in offsets)
    else:
        times = tuple(
            SeasonTime(2010 + k // 2, SeasonLabel.WINTER if k % 2 == 0 else SeasonLabel.SUMMER)
            for k in range(n)
        )
    seq = Sequence("reference", "reference", tuple(0.0 for _ in range(n)), times)
    return build_design(kind.model, seq)


def _family(config: RunConfig) -> List[Transformation]:
    return parse_family(config.family) if config.family else default_family()


def cmd_select_transform(config: RunConfig) -> List[str]:
    """
    Select the transformation of each biomarker and write one normality
    table per biomarker plus the selection file reused by `screen`.

    Raises:
        NoApplicableTransformationError: For an explicitly requested biomarker,
            or when no biomarker gets a transformation
    """
    cohort, written = _load(config)
    family = _family(config)
    min_n = config.min_n if config.min_n is not None else 4
    biomarkers = list(config.biomarkers) or cohort.biomarkers

    selected: Dict[str, str] = {}
    for biomarker in biomarkers:
        sequences = build_sequences(cohort, biomarker)
        try:
            report = select_transformation(sequences, family, min_n)
        except NoApplicableTransformationError as e:
            if config.biomarkers:
                raise
            logger.warning(f"{biomarker}: {e}")
            continue
        selected[biomarker] = report.selected.name
        written.append(_write(config, f"normality_{_slug(biomarker)}.csv",
                              render_table(normality_table(report), config)))

    if not selected:
        raise NoApplicableTransformationError("no biomarker could be given a transformation")
    written.append(_write(config, SELECTION_FILE, render_document({"transformations": selected}, config)))
    return written


def load_selection(path: str) -> Dict[str, Transformation]:
    """Read a selection file written by cmd_select_transform."""
    try:
        document = json.loads(read_text(path))
        return {b: parse_transformation(name) for b, name in document["transformations"].items()}
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise CohortFormatError(f"cannot read selection file {path}: {e}")


def _transformations(config: RunConfig, cohort: Cohort) -> Dict[str, Transformation]:
    if config.transform:
        t = parse_transformation(config.transform)
        return {b: t for b in cohort.biomarkers}
    path = os.path.join(config.output_path or DEFAULT_OUTPUT, SELECTION_FILE)
    if os.path.exists(path):
        logger.info(f"Using transformations from {path}")
        return load_selection(path)
    logger.warning("No selection file and no --transform; screening untransformed values")
    return {}


def cmd_screen(config: RunConfig) -> List[str]:
    """Screen the cohort with one statistic; writes per-sequence JSON and a group summary table."""
    cohort, written = _load(config)
    kind = StatKind(config.kind)
    transformations = _transformations(config, cohort)
    store = _store(config)

    if kind == StatKind.T3:
        if config.biomarkers and len(set(config.biomarkers)) < 2:
            raise IneligibleError("t3 needs a tuple of at least two biomarkers")
        targets = [tuple(config.biomarkers)] if config.biomarkers else [
            t for t in DEFAULT_TUPLES if all(b in cohort.biomarkers for b in t)
        ]
    else:
        targets = [(b,) for b in (config.biomarkers or cohort.biomarkers)]

    records = []
    results = []
    for names in targets:
        summary = screen(cohort, names if kind == StatKind.T3 else names[0], kind, config.alpha,
                         transformations, reps=config.reps, seed=config.seed, store=store,
                         threads=config.threads, block_size=config.block_size, p_values=config.p_values)
        records.append(summary_record("+".join(names), summary))
        results.extend(summary.results)

    reports = []
    for grouping in config.group_by or ("all",):
        reports.extend(group_report(results, cohort, grouping))

    written.append(_write(config, f"screening_{kind.value}.json",
                          render_document({"kind": kind.value, "screenings": records}, config)))
    written.append(_write(config, f"summary_{kind.value}.csv", render_table(group_table(reports), config)))
    return written


def _critical_value(config: RunConfig, kind: StatKind, n: int, design, store: TableStore) -> float:
    if kind == StatKind.T0:
        return student_critical_value(config.alpha, n - 2)
    return tabulate(kind, n, config.alpha, config.reps, config.seed, d=config.d, design=design,
                    store=store, threads=config.threads, block_size=config.block_size).quantile


def cmd_calibrate(config: RunConfig) -> List[str]:
    """
    Empirical rejection rate of fresh null samples at the critical value.

    t0 uses the exact Student quantile; the other statistics use the
    tabulated Monte Carlo quantile.
    """
    kind = StatKind(config.kind)
    store = _store(config)
    rows = []
    for n in config.sizes or DEFAULT_SIZES:
        design = reference_design(kind, n, config.seed)
        model = null_model(kind, n, config.d, design)
        critical = _critical_value(config, kind, n, design, store)
        rate = rejection_rate(model, critical, config.replicates, config.seed,
                              threads=config.threads, block_size=config.block_size)
        logger.info(f"{kind.value} n={n}: rejection rate {rate:.4f} at alpha={config.alpha}")
        rows.append({
            "kind": kind.value, "n": n, "d": model.d, "alpha": config.alpha, "reps": config.reps,
            "replicates": config.replicates, "critical_value": critical, "rejection_rate": rate,
        })
    frame = pd.DataFrame(rows, columns=["kind", "n", "d", "alpha", "reps", "replicates",
                                        "critical_value", "rejection_rate"])
    return [_write(config, f"calibration_{kind.value}.csv", render_table(frame, config))]


def cmd_correlate(config: RunConfig) -> List[str]:
    """Histograms of per-individual Pearson correlations for biomarker pairs."""
    cohort, written = _load(config)
    pairs = list(config.pairs) or list(DEFAULT_PAIRS)
    min_n = config.min_n if config.min_n is not None else 10
    histograms = correlation_report(cohort, pairs, min_n=min_n, bins=config.bins)
    written.append(_write(config, "correlation.csv", render_table(histogram_table(histograms), config)))
    written.append(_write(config, "correlation.json", render_document(
        {"histograms": [histogram_record(h) for h in histograms]}, config)))
    return written


def cmd_tabulate(config: RunConfig) -> List[str]:
    """Pre-populate the table store for a kind over a list of sizes."""
    kind = StatKind(config.kind)
    store = _store(config)
    tables = [
        tabulate(kind, n, config.alpha, config.reps, config.seed, d=config.d,
                 design=reference_design(kind, n, config.seed), store=store,
                 threads=config.threads, block_size=config.block_size)
        for n in config.sizes or DEFAULT_SIZES
    ]
    logger.info(f"Table store {store.path} now holds {len(store)} entries")
    return [_write(config, f"tabulate_{kind.value}.csv", render_table(quantile_table(tables), config))]


COMMANDS = {
    "select-transform": cmd_select_transform,
    "screen": cmd_screen,
    "calibrate": cmd_calibrate,
    "correlate": cmd_correlate,
    "tabulate": cmd_tabulate,
}
