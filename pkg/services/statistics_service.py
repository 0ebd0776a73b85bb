"""
Statistics service module: the Z-score family of test statistics.

T0 compares the last observation with the past ones (exact Student law).
T1 looks for one abnormal observation anywhere in a sequence, T2 for an
abnormal run of consecutive observations, T3 for an abnormal observation of
a vector of correlated biomarkers, and T4 for the largest externally
studentized residual of a Gaussian linear model (designs A, B and C).

Every statistic has a batch kernel operating on a (batch, n) array (or
(batch, n, d) for T3) that the Monte Carlo tabulation reuses, and a
per-sequence function returning a StatResult with location and notes.
"""
import math
from typing import Optional, Sequence as Seq, Tuple

import numpy as np
from scipy import special, stats

from models.cohort import SeasonLabel, Sequence
from models.results import DesignMatrix, LeastSquaresFit, ModelKind, StatKind, StatResult
from services.cohort_service import season_of
from utils.errors import DegenerateSampleError, IneligibleError, SingularCovarianceError

DAYS_PER_YEAR = 365.25

# relative thresholds separating exact degeneracy from rounding noise
PERFECT_FIT_RTOL = 1e-24
DELETED_FIT_RTOL = 1e-10
TIE_RTOL = 1e-12
RANK_RTOL = 1e-12

CONSTANT_NOTE = "constant sequence"
PERFECT_FIT_NOTE = "perfect fit"


def _as_batch(values: Seq[float]) -> np.ndarray:
    return np.asarray(values, dtype=float).reshape(1, -1)


def _first_argmax(terms: np.ndarray) -> int:
    """Index of the maximum; near-ties within TIE_RTOL resolve to the smallest index."""
    best = np.max(terms)
    if math.isinf(best):
        return int(np.argmax(np.isinf(terms)))
    threshold = best - TIE_RTOL * max(1.0, abs(best))
    return int(np.argmax(terms >= threshold))


def _null_fit(x: np.ndarray, rss: np.ndarray) -> np.ndarray:
    """Rows whose residual sum of squares is zero up to rounding (shape (B,))."""
    scale = np.sum(x * x, axis=1)
    return (np.ptp(x, axis=1) == 0) | (rss <= PERFECT_FIT_RTOL * scale)


def _deleted_terms(v: np.ndarray, rss: np.ndarray, df: int, null_rows: np.ndarray) -> np.ndarray:
    """
    sqrt(df * v / (rss - v)) for every candidate.

    `v` is the part of the residual sum of squares removed when a candidate
    (an observation or an interval) gets its own mean; the remainder is the
    residual sum of squares of the deleted fit.
    """
    rss = rss[:, None]
    remainder = rss - v
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.sqrt(df * v / remainder)
    vanished = remainder <= DELETED_FIT_RTOL * rss
    terms = np.where(vanished & (v > 0), np.inf, terms)
    terms = np.where(vanished & ~(v > 0), 0.0, terms)
    terms[null_rows] = 0.0
    return terms


# --- Student distribution and T0 ---

def student_cdf(t: float, df: int) -> float:
    """
    CDF of the Student distribution through the regularized incomplete beta function.

    Args:
        t: Quantile
        df: Degrees of freedom (at least 1)
    """
    if df < 1:
        raise ValueError("df must be at least 1")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return 1.0 - tail if t > 0 else tail


def student_two_sided_p(t: float, df: int) -> float:
    """Two-sided p-value 2 * (1 - cdf(|t|)), computed without cancellation."""
    if math.isinf(t):
        return 0.0
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


def student_critical_value(alpha: float, df: int) -> float:
    """Quantile of order 1 - alpha/2 of Student(df)."""
    return float(stats.t.ppf(1.0 - alpha / 2.0, df))


def t0_batch(x: np.ndarray) -> np.ndarray:
    """Signed T0 for each row of a (B, n) array."""
    n = x.shape[1]
    past = x[:, :-1]
    mean = past.mean(axis=1)
    sd = np.sqrt(np.sum((past - mean[:, None]) ** 2, axis=1) / (n - 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        return (x[:, -1] - mean) / (sd * math.sqrt(1.0 + 1.0 / (n - 1)))


def t0_last(values: Seq[float]) -> StatResult:
    """
    Studentized deviation of the last observation from the mean of the previous ones.

    Args:
        values: x_1..x_n with n >= 3

    Returns:
        StatResult(T0) holding the signed t value, df = n - 2, location n

    Raises:
        DegenerateSampleError: The first n - 1 values are all equal
    """
    x = _as_batch(values)
    n = x.shape[1]
    if n < 3:
        raise IneligibleError(f"T0 needs n >= 3, got n={n}")
    if np.ptp(x[0, :-1]) == 0:
        raise DegenerateSampleError("degenerate sample: the past observations are all equal")
    t = float(t0_batch(x)[0])
    return StatResult(StatKind.T0, t, location=n, df=n - 2)


# --- T1 ---

def t1_terms(x: np.ndarray) -> np.ndarray:
    """Per-observation leave-one-out Z-scores of a (B, n) array."""
    n = x.shape[1]
    c = x - x.mean(axis=1, keepdims=True)
    ss = np.sum(c * c, axis=1)
    v = n * c * c / (n - 1)
    return _deleted_terms(v, ss, n - 2, _null_fit(x, ss))


def t1_batch(x: np.ndarray) -> np.ndarray:
    return t1_terms(x).max(axis=1)


def t1_max_outlier(values: Seq[float]) -> StatResult:
    """
    Largest leave-one-out Z-score of a sequence.

    Each observation is compared with the mean and standard deviation (divisor
    n - 2) of the other n - 1 observations.

    Args:
        values: x_1..x_n with n >= 3

    Returns:
        StatResult(T1) with the 1-based index of the most extreme observation
    """
    x = _as_batch(values)
    n = x.shape[1]
    if n < 3:
        raise IneligibleError(f"T1 needs n >= 3, got n={n}")
    if np.ptp(x) == 0:
        return StatResult(StatKind.T1, 0.0, location=None, df=n - 2, notes=(CONSTANT_NOTE,))
    terms = t1_terms(x)[0]
    i = _first_argmax(terms)
    return StatResult(StatKind.T1, float(terms[i]), location=i + 1, df=n - 2)


# --- T2 ---

def intervals(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """All 0-based closed intervals [a, b] with 1 <= length < n, in lexicographic order."""
    starts, ends = [], []
    for a in range(n):
        for b in range(a, n):
            if b - a + 1 < n:
                starts.append(a)
                ends.append(b)
    return np.asarray(starts), np.asarray(ends)


def t2_terms(x: np.ndarray) -> np.ndarray:
    """Two-group Z-scores of every interval of a (B, n) array (columns follow `intervals`)."""
    n = x.shape[1]
    starts, ends = intervals(n)
    c = x - x.mean(axis=1, keepdims=True)
    ss = np.sum(c * c, axis=1)
    prefix = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(c, axis=1)], axis=1)
    sums = prefix[:, ends + 1] - prefix[:, starts]
    # singletons take the centred value itself so they round like T1
    singles = starts == ends
    sums[:, singles] = c[:, starts[singles]]
    k = (ends - starts + 1).astype(float)
    v = n * sums * sums / (k * (n - k))
    return _deleted_terms(v, ss, n - 2, _null_fit(x, ss))


def t2_batch(x: np.ndarray) -> np.ndarray:
    return t2_terms(x).max(axis=1)


def t2_subsequence(values: Seq[float]) -> StatResult:
    """
    Largest two-group Z-score over all runs of consecutive observations.

    For each interval I (1 <= |I| < n) the mean on I is compared with the mean
    outside I using the pooled within-group variance (divisor n - 2).

    Args:
        values: x_1..x_n with n >= 4

    Returns:
        StatResult(T2) with the 1-based interval (a, b); `extra` carries the
        mean inside and outside the interval
    """
    x = _as_batch(values)
    n = x.shape[1]
    if n < 4:
        raise IneligibleError(f"T2 needs n >= 4, got n={n}")
    if np.ptp(x) == 0:
        return StatResult(StatKind.T2, 0.0, location=None, df=n - 2, notes=(CONSTANT_NOTE,))
    terms = t2_terms(x)[0]
    j = _first_argmax(terms)
    starts, ends = intervals(n)
    a, b = int(starts[j]), int(ends[j])
    inside = np.zeros(n, dtype=bool)
    inside[a:b + 1] = True
    extra = {"mean_inside": float(x[0, inside].mean()), "mean_outside": float(x[0, ~inside].mean())}
    return StatResult(StatKind.T2, float(terms[j]), location=(a + 1, b + 1), df=n - 2, extra=extra)


# --- T3 ---

def _deleted_covariance(rest: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, centered rows and covariance (divisor n - 1 - d) of (B, n - 1, d) arrays."""
    n_minus_1, d = rest.shape[1], rest.shape[2]
    mean = rest.mean(axis=1)
    centered = rest - mean[:, None, :]
    cov = np.einsum("bkd,bke->bde", centered, centered) / (n_minus_1 - d)
    return mean, centered, cov


def _solve_rows(cov: np.ndarray, diff: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(cov, diff[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.full_like(diff, np.nan)
        for row in range(cov.shape[0]):
            try:
                out[row] = np.linalg.solve(cov[row], diff[row])
            except np.linalg.LinAlgError:
                pass
        return out


def t3_terms(x: np.ndarray) -> np.ndarray:
    """Scaled leave-one-out Mahalanobis distances of a (B, n, d) array."""
    n, d = x.shape[1], x.shape[2]
    terms = np.empty((x.shape[0], n))
    for i in range(n):
        rest = np.delete(x, i, axis=1)
        mean, _, cov = _deleted_covariance(rest)
        diff = x[:, i, :] - mean
        terms[:, i] = np.sum(diff * _solve_rows(cov, diff), axis=1)
    return terms * (n - 1) / (n * d)


def t3_batch(x: np.ndarray) -> np.ndarray:
    return t3_terms(x).max(axis=1)


def _check_deleted_rank(x: np.ndarray) -> None:
    n, d = x.shape
    for i in range(n):
        centered = np.delete(x, i, axis=0)
        centered = centered - centered.mean(axis=0)
        norms = np.linalg.norm(centered, axis=0)
        scale = norms.max() if norms.size else 0.0
        if scale == 0 or np.linalg.matrix_rank(centered, tol=RANK_RTOL * scale) < d:
            raise SingularCovarianceError(i + 1)


def t3_multivariate(points: Seq[Seq[float]]) -> StatResult:
    """
    Multivariate extension of T1 with leave-one-out covariance matrices.

    Args:
        points: n observations in dimension d, n >= d + 2

    Returns:
        StatResult(T3) with the 1-based index of the most extreme observation

    Raises:
        SingularCovarianceError: A leave-one-out covariance is not invertible
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < d + 2:
        raise IneligibleError(f"T3 needs n >= d + 2, got n={n}, d={d}")
    _check_deleted_rank(x)
    terms = t3_terms(x[None, :, :])[0]
    i = _first_argmax(terms)
    return StatResult(StatKind.T3, float(terms[i]), location=i + 1, dims=(n, d))


# --- Linear models and T4 ---

def build_design(model: ModelKind, seq: Sequence) -> DesignMatrix:
    """
    Build the design matrix of model A, B or C for a sequence.

    A: intercept only. B: intercept and season indicator (1 summer, 0 winter).
    C: intercept and time in years since the first observation.

    Raises:
        IneligibleError: Model C on a sequence without calendar dates
    """
    model = ModelKind(model)
    n = seq.n
    ones = np.ones(n)
    if model == ModelKind.A:
        return DesignMatrix(ones[:, None], ModelKind.A)
    if model == ModelKind.B:
        summer = np.array([1.0 if season_of(t) == SeasonLabel.SUMMER else 0.0 for t in seq.times])
        return DesignMatrix(np.column_stack([ones, summer]), ModelKind.B)
    if not seq.has_calendar_dates:
        raise IneligibleError("model C needs calendar dates; season-coded data carries none")
    first = seq.times[0]
    years = np.array([(t - first).days / DAYS_PER_YEAR for t in seq.times])
    return DesignMatrix(np.column_stack([ones, years]), ModelKind.C)


def fit_least_squares(values: Seq[float], design: DesignMatrix) -> LeastSquaresFit:
    """Ordinary least squares fit with residual variance RSS / (n - p)."""
    x = np.asarray(values, dtype=float)
    m = design.matrix
    coefficients, _, _, _ = np.linalg.lstsq(m, x, rcond=None)
    fitted = m @ coefficients
    dof = design.n - design.p
    residual = x - fitted
    variance = float(residual @ residual / dof) if dof > 0 else float("nan")
    return LeastSquaresFit(coefficients=coefficients, residual_variance=variance, fitted=fitted)


def leverages(design: DesignMatrix) -> np.ndarray:
    """Diagonal of the hat matrix M (M'M)^-1 M'."""
    q, _ = np.linalg.qr(design.matrix)
    return np.sum(q * q, axis=1)


def design_rank(design: DesignMatrix) -> int:
    m = design.matrix
    norms = np.linalg.norm(m, axis=0)
    scale = norms.max() if norms.size else 0.0
    if scale == 0:
        return 0
    return int(np.linalg.matrix_rank(m, tol=RANK_RTOL * scale))


def check_design(design: DesignMatrix) -> np.ndarray:
    """
    Validate a design for T4 and return its leverages.

    Raises:
        IneligibleError: Rank-deficient design, too few observations, or a
            deleted design M_(i) that loses rank
    """
    n, p = design.n, design.p
    if n < p + 2:
        raise IneligibleError(f"T4 needs n >= p + 2, got n={n}, p={p}")
    if design_rank(design) < p:
        raise IneligibleError("rank-deficient design matrix")
    h = leverages(design)
    if np.any(1.0 - h <= DELETED_FIT_RTOL):
        i = int(np.argmax(1.0 - h <= DELETED_FIT_RTOL)) + 1
        raise IneligibleError(f"deleting observation {i} leaves a rank-deficient design")
    return h


def _t4_kind(design: DesignMatrix) -> StatKind:
    return {ModelKind.A: StatKind.T4A, ModelKind.B: StatKind.T4B, ModelKind.C: StatKind.T4C}.get(
        design.model, StatKind.T4)


def _intercept_only(design: DesignMatrix) -> bool:
    if design.p != 1:
        return False
    column = design.matrix[:, 0]
    return np.ptp(column) == 0 and column[0] != 0


def _residual_parts(
    x: np.ndarray, design: DesignMatrix, h: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Removed sums of squares v (B, n) and residual sums of squares (B,) of a (B, n) array."""
    n = design.n
    if _intercept_only(design):
        # mirrors t1_terms operation for operation
        c = x - x.mean(axis=1, keepdims=True)
        return n * c * c / (n - 1), np.sum(c * c, axis=1)
    q, _ = np.linalg.qr(design.matrix)
    if h is None:
        h = np.sum(q * q, axis=1)
    residuals = x - (x @ q) @ q.T
    return residuals * residuals / (1.0 - h), np.sum(residuals * residuals, axis=1)


def t4_terms(x: np.ndarray, design: DesignMatrix, h: Optional[np.ndarray] = None) -> np.ndarray:
    """Absolute externally studentized residuals of each row of a (B, n) array."""
    v, rss = _residual_parts(x, design, h)
    return _deleted_terms(v, rss, design.n - design.p - 1, _null_fit(x, rss))


def t4_batch(x: np.ndarray, design: DesignMatrix) -> np.ndarray:
    return t4_terms(x, design).max(axis=1)


def t4_linear_model(values: Seq[float], design: DesignMatrix) -> StatResult:
    """
    Largest absolute externally studentized residual of a Gaussian linear model.

    Each residual compares x_i with its prediction from the fit that leaves
    observation i out, scaled by that fit's residual standard deviation; the
    leave-one-out quantities come from the hat-matrix identities instead of
    n separate refits.

    Args:
        values: x_1..x_n
        design: n x p full-rank design matrix, n >= p + 2

    Returns:
        StatResult(T4A/T4B/T4C) with the 1-based index of the largest residual
    """
    x = np.asarray(values, dtype=float)
    if x.size != design.n:
        raise ValueError("design and sequence lengths differ")
    h = check_design(design)
    kind = _t4_kind(design)
    dims = (design.n, design.p)
    df = design.n - design.p - 1

    v, rss = _residual_parts(x[None, :], design, h)
    if np.ptp(x) == 0:
        return StatResult(kind, 0.0, df=df, dims=dims, notes=(CONSTANT_NOTE,))
    if rss[0] <= PERFECT_FIT_RTOL * float(x @ x):
        return StatResult(kind, 0.0, df=df, dims=dims, notes=(PERFECT_FIT_NOTE,))

    terms = _deleted_terms(v, rss, df, np.array([False]))[0]
    i = _first_argmax(terms)
    return StatResult(kind, float(terms[i]), location=i + 1, df=df, dims=dims)


# --- Correlation ---

def pearson_r(x: Seq[float], y: Seq[float]) -> float:
    """
    Pearson product-moment correlation of two equally long lists.

    Raises:
        DegenerateSampleError: One of the lists is constant
    """
    a = np.asarray(x, dtype=float)
    b = np.asarray(y, dtype=float)
    if a.size != b.size:
        raise ValueError("x and y must have the same length")
    if a.size < 2:
        raise ValueError("pearson_r needs at least two pairs")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateSampleError("degenerate sample: constant input")
    r = float(stats.pearsonr(a, b)[0])
    return min(1.0, max(-1.0, r))


def batch_statistic(kind: StatKind, draws: np.ndarray, design: Optional[DesignMatrix] = None) -> np.ndarray:
    """Statistic values of a batch of draws (|T0| for T0), one per row."""
    kind = StatKind(kind)
    if kind == StatKind.T0:
        return np.abs(t0_batch(draws))
    if kind == StatKind.T1:
        return t1_batch(draws)
    if kind == StatKind.T2:
        return t2_batch(draws)
    if kind == StatKind.T3:
        return t3_batch(draws)
    if design is None:
        raise ValueError(f"{kind.value} needs a design matrix")
    return t4_batch(draws, design)


def statistic_of(kind: StatKind, values, design: Optional[DesignMatrix] = None) -> StatResult:
    """Per-sequence dispatch used by the screening service."""
    kind = StatKind(kind)
    if kind == StatKind.T0:
        return t0_last(values)
    if kind == StatKind.T1:
        return t1_max_outlier(values)
    if kind == StatKind.T2:
        return t2_subsequence(values)
    if kind == StatKind.T3:
        return t3_multivariate(values)
    if design is None:
        raise ValueError(f"{kind.value} needs a design matrix")
    return t4_linear_model(values, design)
