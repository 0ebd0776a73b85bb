import math

import numpy as np
import pytest

from models.cohort import Sequence
from models.transformation import Transformation, TransformationKind
from services.normality_service import ks_uniform, select_transformation, shapiro_wilk
from services.transform_service import default_family
from utils.errors import DegenerateSampleError, NoApplicableTransformationError

IDENTITY = Transformation(TransformationKind.IDENTITY)
LOG = Transformation(TransformationKind.LOG)


def _seq(individual_id, values):
    return Sequence(individual_id, "ferritin", tuple(float(v) for v in values), tuple(range(len(values))))


def test_shapiro_wilk_closed_form_for_three_values():
    # n = 3: W = (x(3) - x(1))^2 / (2 SS), p = 6/pi (asin(sqrt(W)) - asin(sqrt(3/4)))
    w, p = shapiro_wilk([1.0, 2.0, 4.0])
    expected_w = (3.0 ** 2 / 2.0) / (42.0 / 9.0)
    assert w == pytest.approx(expected_w, abs=1e-5)
    expected_p = 6.0 / math.pi * (math.asin(math.sqrt(expected_w)) - math.asin(math.sqrt(0.75)))
    assert p == pytest.approx(expected_p, rel=1e-3)


def test_shapiro_wilk_affine_invariance(rng):
    x = rng.normal(size=25)
    w1, _ = shapiro_wilk(x)
    w2, _ = shapiro_wilk(3.7 * x - 11.2)
    assert w1 == pytest.approx(w2, abs=1e-5)


def test_shapiro_wilk_detects_skewed_sample(rng):
    _, p = shapiro_wilk(rng.lognormal(sigma=1.5, size=200))
    assert p < 1e-6


def test_shapiro_wilk_errors():
    with pytest.raises(DegenerateSampleError):
        shapiro_wilk([5, 5, 5, 5])
    with pytest.raises(ValueError):
        shapiro_wilk([1.0, 2.0])


def test_ks_uniform_single_value():
    d, _ = ks_uniform([0.5])
    assert d == 0.5


def test_ks_uniform_all_zero():
    d, p = ks_uniform([0.0] * 20)
    assert d == 1.0
    assert p < 1e-10


def test_ks_uniform_near_perfect_fit():
    n = 400
    d, p = ks_uniform([k / (n + 1) for k in range(1, n + 1)])
    assert d < 0.01
    assert p > 0.99


@pytest.mark.parametrize("critical,level", [(1.2238, 0.10), (1.3581, 0.05), (1.6276, 0.01)])
def test_ks_uniform_asymptotic_critical_values(critical, level):
    # four equal values v give D = max(v, 1 - v) = v for v > 1/2
    v = critical / 2.0
    d, p = ks_uniform([v] * 4)
    assert d == pytest.approx(v)
    assert p == pytest.approx(level, abs=1e-3)


def test_ks_uniform_lower_bound(rng):
    values = rng.uniform(size=37)
    d, _ = ks_uniform(values)
    assert 1.0 / (2 * 37) <= d <= 1.0


def test_ks_uniform_errors():
    with pytest.raises(ValueError):
        ks_uniform([])
    with pytest.raises(ValueError):
        ks_uniform([0.2, 1.5])


def test_select_single_candidate(rng):
    sequences = [_seq(f"i{k}", rng.normal(size=6)) for k in range(10)]
    report = select_transformation(sequences, [IDENTITY])
    assert report.selected == IDENTITY
    assert report.rows[0].num_sequences_tested == 10


def test_select_log_for_lognormal_data(rng):
    sequences = [_seq(f"i{k}", rng.lognormal(mean=3.0, sigma=0.8, size=10)) for k in range(500)]
    report = select_transformation(sequences, [IDENTITY, LOG])
    assert report.selected == LOG
    records = report.to_records()
    assert [r["selected"] for r in records] == [False, True]
    assert records[1]["global_p"] > records[0]["global_p"]


def test_select_is_deterministic(rng):
    sequences = [_seq(f"i{k}", rng.lognormal(size=8)) for k in range(40)]
    family = default_family()
    assert select_transformation(sequences, family) == select_transformation(sequences, family)


def test_zero_value_drops_positive_only_candidates(rng):
    sequences = [_seq(f"i{k}", rng.uniform(1, 5, size=6)) for k in range(5)]
    sequences.append(_seq("zero", [0.0, 1.0, 2.0, 3.0, 4.5, 2.0]))
    report = select_transformation(sequences, default_family())
    evaluated = {row.transformation.name for row in report.rows}
    assert evaluated == {"identity", "square", "lambertw0"}
    assert "log" in report.dropped
    assert "root2" in report.dropped
    assert "boxcox(-0.0606)" in report.dropped


def test_short_and_degenerate_sequences(rng):
    sequences = [_seq(f"i{k}", rng.normal(10, 1, size=5)) for k in range(6)]
    sequences.append(_seq("short", [1.0, 2.0, 3.0]))
    sequences.append(_seq("flat", [4.0, 4.0, 4.0, 4.0]))
    row = select_transformation(sequences, [IDENTITY]).rows[0]
    assert row.num_sequences_tested == 6
    assert row.num_skipped_degenerate == 1


def test_selection_errors():
    with pytest.raises(NoApplicableTransformationError):
        select_transformation([_seq("a", [1.0, 2.0, 3.0])], [IDENTITY])
    with pytest.raises(NoApplicableTransformationError):
        select_transformation([_seq("a", [-1.0, 2.0, 3.0, 4.0])], [LOG])
    with pytest.raises(NoApplicableTransformationError):
        select_transformation([_seq("a", [2.0] * 5), _seq("b", [3.0] * 4)], [IDENTITY])


def test_global_p_roughly_uniform_under_gaussian_null(rng):
    passes = 0
    for _ in range(20):
        sequences = [_seq(f"i{k}", rng.normal(size=10)) for k in range(500)]
        if select_transformation(sequences, [IDENTITY]).rows[0].global_p > 0.01:
            passes += 1
    assert passes >= 17


def test_empty_family_member_list_raises():
    with pytest.raises(NoApplicableTransformationError):
        select_transformation([_seq("a", np.arange(1.0, 6.0))], [])


def test_short_sequence_with_zero_drops_positive_only_candidates(rng):
    sequences = [_seq(f"i{k}", rng.uniform(1, 5, size=5)) for k in range(6)]
    sequences.append(_seq("short", [0.0, 1.0, 2.0]))
    report = select_transformation(sequences, default_family())
    assert {"log", "root2", "boxcox(-0.0606)"} <= set(report.dropped)
    assert report.selected.name in {"identity", "square", "lambertw0"}
    assert report.rows[0].num_sequences_tested == 6


# closed form of the n = 3 case: W = (x(3) - x(1))^2 / (2 SS)
THREE_POINT_CASES = [
    (m, scale, shift)
    for m, scale, shift in zip(
        [0.05, 0.08, 0.1, 0.12, 0.15, 0.18, 0.2, 0.22, 0.25, 0.3,
         0.7, 0.75, 0.78, 0.8, 0.82, 0.85, 0.88, 0.9, 0.92, 0.95],
        [1.0, 2.5, 0.01, 40.0, 3.0, 7.5, 0.2, 100.0, 1.5, 12.0,
         1.0, 0.5, 9.0, 2.0, 60.0, 0.03, 4.0, 1.0, 25.0, 5.0],
        [0.0, -3.0, 10.0, 2.0, -50.0, 0.5, 7.0, -1.0, 100.0, 3.3,
         0.0, 1.0, -2.0, 45.0, 0.0, 9.0, -7.5, 300.0, 1.0, -0.4],
    )
]


@pytest.mark.parametrize("m,scale,shift", THREE_POINT_CASES)
def test_shapiro_wilk_three_point_table(m, scale, shift):
    x = [scale * v + shift for v in (1.0, 0.0, m)]
    ordered = sorted(x)
    mean = sum(x) / 3
    ss = sum((v - mean) ** 2 for v in x)
    expected_w = (ordered[2] - ordered[0]) ** 2 / (2.0 * ss)
    expected_p = 6.0 / math.pi * (math.asin(math.sqrt(expected_w)) - math.asin(math.sqrt(0.75)))
    w, p = shapiro_wilk(x)
    assert w == pytest.approx(expected_w, abs=1e-3)
    assert p == pytest.approx(expected_p, rel=0.1)


def _kolmogorov_sf(t, terms=1000):
    return 2.0 * sum((-1) ** (k - 1) * math.exp(-2.0 * k * k * t * t) for k in range(1, terms + 1))


def _golden_points(n, power):
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    return [((k * phi) % 1.0) ** power for k in range(1, n + 1)]


KS_CASES = [(n, power) for n in (10, 25, 50, 100, 400) for power in (0.7, 1.0, 1.15, 1.5)]


@pytest.mark.parametrize("n,power", KS_CASES)
def test_ks_uniform_table(n, power):
    values = _golden_points(n, power)
    u = sorted(values)
    expected_d = max(max((k + 1) / n - v, v - k / n) for k, v in enumerate(u))
    d, p = ks_uniform(values)
    assert d == pytest.approx(expected_d, abs=1e-12)
    expected_p = min(max(_kolmogorov_sf(math.sqrt(n) * expected_d), 0.0), 1.0)
    assert p == pytest.approx(expected_p, rel=0.1, abs=1e-12)


def _selection_rate(rng, draw, expected, cohorts=200):
    family = [IDENTITY, LOG]
    hits = 0
    for _ in range(cohorts):
        sequences = [_seq(f"i{k}", draw(rng)) for k in range(500)]
        hits += select_transformation(sequences, family).selected == expected
    return hits / cohorts


@pytest.mark.slow
def test_selector_prefers_identity_on_gaussian_cohorts(rng):
    rate = _selection_rate(rng, lambda r: np.abs(r.normal(10.0, 3.0, size=10)), IDENTITY)
    assert rate >= 0.90


@pytest.mark.slow
def test_selector_prefers_log_on_lognormal_cohorts(rng):
    rate = _selection_rate(rng, lambda r: r.lognormal(3.0, 0.8, size=10), LOG)
    assert rate >= 0.95
