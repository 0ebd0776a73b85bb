"""
Normality service module: per-sequence Shapiro-Wilk tests, Kolmogorov-Smirnov
aggregation of the p-values against the uniform law, and selection of the
transformation that makes a biomarker globally closest to Gaussian.
"""
import logging
from typing import List, Optional, Sequence as Seq, Tuple

import numpy as np
from scipy import stats

from models.cohort import Sequence
from models.results import NormalityReport, NormalityRow
from models.transformation import Transformation
from services.transform_service import applicable, apply_values
from utils.errors import DegenerateSampleError, NoApplicableTransformationError

logger = logging.getLogger(__name__)

SHAPIRO_MIN_N = 3
SHAPIRO_MAX_N = 5000


def shapiro_wilk(sample: Seq[float]) -> Tuple[float, float]:
    """
    Shapiro-Wilk W statistic and its p-value (Royston's AS R94 approximation).

    Args:
        sample: Between 3 and 5000 values, not all equal

    Returns:
        Tuple of (W, p)

    Raises:
        DegenerateSampleError: The sample has zero variance
        ValueError: The sample size is out of range
    """
    x = np.asarray(sample, dtype=float)
    if not SHAPIRO_MIN_N <= x.size <= SHAPIRO_MAX_N:
        raise ValueError(f"Shapiro-Wilk needs {SHAPIRO_MIN_N} <= n <= {SHAPIRO_MAX_N}, got n={x.size}")
    if np.ptp(x) == 0:
        raise DegenerateSampleError("degenerate sample: all values are equal")
    result = stats.shapiro(x)
    w = float(min(max(result.statistic, 0.0), 1.0))
    p = float(min(max(result.pvalue, 0.0), 1.0))
    return w, p


def ks_uniform(p_values: Seq[float]) -> Tuple[float, float]:
    """
    One-sample two-sided Kolmogorov-Smirnov test against U[0, 1].

    The p-value comes from the asymptotic Kolmogorov distribution of sqrt(n) * D.

    Args:
        p_values: Non-empty values in [0, 1]

    Returns:
        Tuple of (D, p)
    """
    x = np.sort(np.asarray(p_values, dtype=float))
    if x.size == 0:
        raise ValueError("ks_uniform needs at least one value")
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise ValueError("ks_uniform values must lie in [0, 1]")
    n = x.size
    ranks = np.arange(1, n + 1)
    d_plus = np.max(ranks / n - x)
    d_minus = np.max(x - (ranks - 1) / n)
    d = float(max(d_plus, d_minus))
    p = float(stats.kstwobign.sf(np.sqrt(n) * d))
    return d, min(max(p, 0.0), 1.0)


def _evaluate(t: Transformation, sequences: List[Sequence]) -> Optional[NormalityRow]:
    p_values = []
    skipped = 0
    for seq in sequences:
        values = apply_values(t, seq.values)
        try:
            _, p = shapiro_wilk(values)
        except DegenerateSampleError:
            skipped += 1
            continue
        p_values.append(p)
    if skipped:
        logger.warning(f"{t.name}: skipped {skipped} degenerate sequence(s)")
    if not p_values:
        return None
    d, global_p = ks_uniform(p_values)
    return NormalityRow(t, tuple(p_values), skipped, d, global_p)


def select_transformation(
    sequences: List[Sequence],
    family: List[Transformation],
    min_n: int = 4,
) -> NormalityReport:
    """
    Choose the transformation whose transformed sequences are globally closest to Gaussian.

    Each applicable transformation is applied to every sequence with at least
    `min_n` values; the Shapiro-Wilk p-values are aggregated with a KS test
    against the uniform law and the transformation with the largest global
    p-value wins (ties go to the earlier family member).

    Args:
        sequences: One sequence per individual for a single biomarker
        family: Candidate transformations in preference order
        min_n: Minimum sequence length to take part in the selection

    Returns:
        A NormalityReport with one row per evaluated transformation

    Raises:
        NoApplicableTransformationError: No eligible sequence, no applicable
            transformation, or every sequence degenerate under every candidate
    """
    eligible = [s for s in sequences if s.n >= min_n]
    if not eligible:
        raise NoApplicableTransformationError(f"no sequence with at least {min_n} observations")

    # domain checks cover every sequence of the biomarker, short ones included
    candidates = [t for t in family if applicable(t, sequences)]
    dropped = tuple(t.name for t in family if t not in candidates)
    if dropped:
        logger.info(f"Dropped out-of-domain transformation(s): {', '.join(dropped)}")
    if not candidates:
        raise NoApplicableTransformationError("no transformation of the family applies to every sequence")

    rows = []
    for t in candidates:
        row = _evaluate(t, eligible)
        if row is not None:
            rows.append(row)
    if not rows:
        raise NoApplicableTransformationError("all sequences are degenerate under every transformation")

    best = rows[0]
    for row in rows[1:]:
        if row.global_p > best.global_p:
            best = row
    logger.info(f"Selected {best.transformation.name} (global p = {best.global_p:.3g}) "
                f"over {len(eligible)} sequences")
    return NormalityReport(rows=tuple(rows), selected=best.transformation, dropped=dropped)
