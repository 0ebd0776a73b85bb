import logging

import numpy as np
import pytest

from models.results import DesignMatrix, ModelKind, StatKind
from services.statistics_service import student_critical_value
from services.tabulation_service import (
    TABLE_HEADER,
    TableStore,
    clear_draw_cache,
    design_hash,
    mc_p_value,
    null_model,
    order_statistic,
    quantiles,
    rejection_rate,
    simulate_draws,
    simulate_null,
    table_key,
    tabulate,
)
from ui.commands import reference_design
from utils.errors import TabulationError

REPS = 10_000


@pytest.fixture(autouse=True)
def _fresh_cache():
    clear_draw_cache()
    yield
    clear_draw_cache()


def _intercept(n):
    return DesignMatrix(np.ones((n, 1)), ModelKind.A)


def test_design_hash():
    assert design_hash(None) == "none"
    m = np.column_stack([np.ones(5), np.arange(5.0)])
    h = design_hash(DesignMatrix(m))
    assert len(h) == 16
    assert h == design_hash(DesignMatrix(m * (1 + 1e-14)))
    assert h != design_hash(DesignMatrix(m.T.copy()))
    assert h != design_hash(DesignMatrix(m * 2))
    bumped = m.copy()
    bumped[3, 1] += 1e-6
    assert h != design_hash(DesignMatrix(bumped))


def test_null_model_validation():
    with pytest.raises(TabulationError):
        null_model(StatKind.T2, 3)
    with pytest.raises(TabulationError):
        null_model(StatKind.T3, 4, d=3)
    with pytest.raises(TabulationError):
        null_model(StatKind.T4A, 5)
    with pytest.raises(TabulationError):
        null_model(StatKind.T4A, 6, design=_intercept(5))
    assert null_model(StatKind.T1, 8, d=4).d == 1


def test_tabulate_rejects_bad_requests(table_store):
    with pytest.raises(TabulationError):
        tabulate(StatKind.T1, 10, 0.05, 9_999, seed=1)
    with pytest.raises(TabulationError):
        tabulate(StatKind.T1, 10, 0.0, REPS, seed=1)
    with pytest.raises(TabulationError):
        tabulate(StatKind.T1, 10, 1.0, REPS, seed=1)
    with pytest.raises(TabulationError):
        tabulate(StatKind.T0, 10, 0.05, REPS, seed=1)
    assert len(table_store) == 0


def test_simulate_null_is_deterministic():
    model = null_model(StatKind.T2, 7)
    a = simulate_null(model, np.random.default_rng(5))
    b = simulate_null(model, np.random.default_rng(5))
    assert a == b
    assert a >= 0


def test_draws_independent_of_thread_count():
    model = null_model(StatKind.T1, 9)
    one = simulate_draws(model, 12_345, seed=42, threads=1, block_size=1000)
    four = simulate_draws(model, 12_345, seed=42, threads=4, block_size=1000)
    assert one.shape == (12_345,)
    assert np.array_equal(one, four)


def test_intercept_model_matches_t1_draws():
    t1 = simulate_draws(null_model(StatKind.T1, 8), 2_000, seed=3)
    t4a = simulate_draws(null_model(StatKind.T4A, 8, design=_intercept(8)), 2_000, seed=3)
    assert np.allclose(t1, t4a, rtol=0, atol=1e-10)


def test_order_statistic_median():
    draws = simulate_draws(null_model(StatKind.T1, 6), REPS, seed=11)
    assert order_statistic(draws, 0.5) == np.sort(draws)[4999]
    assert order_statistic(draws, 0.05) == np.sort(draws)[9499]


def test_quantiles_are_monotone():
    draws = simulate_draws(null_model(StatKind.T2, 8), REPS, seed=2)
    values = quantiles(draws, [0.1, 0.05, 0.01, 0.001])
    assert values == sorted(values)


def test_tabulate_uses_store(table_store, caplog):
    first = tabulate(StatKind.T1, 10, 0.05, REPS, seed=7, store=table_store)
    assert len(table_store) == 1
    with open(table_store.path, encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    assert lines[0] == TABLE_HEADER
    assert lines[1] == "kind,n,d,design_hash,alpha,reps,seed,block_size,quantile"

    reloaded = TableStore(table_store.path)
    assert reloaded.tables() == [first]
    with caplog.at_level(logging.INFO):
        again = tabulate(StatKind.T1, 10, 0.05, REPS, seed=7, store=reloaded)
    assert again == first
    assert "cache hit" in caplog.text


def test_store_ignores_other_seed(table_store, caplog):
    table = tabulate(StatKind.T1, 10, 0.05, REPS, seed=7, store=table_store)
    key = table_key(null_model(StatKind.T1, 10), 0.05, REPS, 8)
    with caplog.at_level(logging.WARNING):
        assert table_store.lookup(key) is None
    assert "other reps/seed" in caplog.text
    assert table_store.lookup(table.key) == table


def test_store_save_merges_concurrent_writers(tmp_path):
    path = str(tmp_path / "tables.csv")
    a, b = TableStore(path), TableStore(path)
    tabulate(StatKind.T1, 6, 0.05, REPS, seed=1, store=a)
    tabulate(StatKind.T2, 6, 0.05, REPS, seed=1, store=b)
    assert {t.kind for t in TableStore(path).tables()} == {StatKind.T1, StatKind.T2}


def test_store_rejects_unknown_header(tmp_path):
    path = tmp_path / "tables.csv"
    path.write_text("kind,n\n", encoding="utf-8")
    with pytest.raises(TabulationError):
        TableStore(str(path))


def test_mc_p_value():
    kwargs = dict(kind=StatKind.T1, n=10, reps=REPS, seed=9)
    assert mc_p_value(float("inf"), **kwargs) == 1 / (REPS + 1)
    assert mc_p_value(-1.0, **kwargs) == 1.0
    q = tabulate(StatKind.T1, 10, 0.05, REPS, seed=9).quantile
    assert mc_p_value(q, **kwargs) == pytest.approx(502 / (REPS + 1))
    with pytest.raises(ValueError):
        mc_p_value(float("nan"), **kwargs)


def test_t0_exact_law_rejection_rate():
    n = 10
    critical = student_critical_value(0.05, n - 2)
    rate = rejection_rate(null_model(StatKind.T0, n), critical, 100_000, seed=17)
    assert 0.045 <= rate <= 0.055


def test_block_size_is_part_of_the_table_key(table_store, caplog):
    first = tabulate(StatKind.T1, 8, 0.05, REPS, seed=7, store=table_store, block_size=1000)
    with caplog.at_level(logging.WARNING):
        second = tabulate(StatKind.T1, 8, 0.05, REPS, seed=7, store=table_store, block_size=500)
    assert "other reps/seed/block size" in caplog.text
    assert (first.block_size, second.block_size) == (1000, 500)
    assert first.key != second.key
    assert len(table_store) == 2
    assert {t.block_size for t in TableStore(table_store.path).tables()} == {500, 1000}


def test_store_rejects_previous_format(tmp_path):
    path = tmp_path / "tables.csv"
    path.write_text("# zscreen quantile table v1\nkind,n,d,design_hash,alpha,reps,seed,quantile\n", encoding="utf-8")
    with pytest.raises(TabulationError):
        TableStore(str(path))


def test_reference_dates_use_their_own_stream():
    design = reference_design(StatKind.T4C, 10, seed=13)
    assert np.array_equal(design.matrix, reference_design(StatKind.T4C, 10, seed=13).matrix)
    block_two = np.random.Generator(np.random.PCG64(np.random.SeedSequence(13, spawn_key=(2,))))
    offsets = np.sort(block_two.choice(5 * 365, size=10, replace=False))
    shared = (offsets - offsets[0]) / 365.25
    assert not np.allclose(design.matrix[:, 1], shared)


@pytest.mark.slow
@pytest.mark.parametrize("kind,n,d", [
    (StatKind.T1, 5, 1), (StatKind.T1, 10, 1), (StatKind.T1, 20, 1),
    (StatKind.T2, 5, 1), (StatKind.T2, 10, 1), (StatKind.T2, 20, 1),
    (StatKind.T3, 6, 2), (StatKind.T3, 10, 3),
])
def test_tabulated_quantile_calibration(kind, n, d):
    table = tabulate(kind, n, 0.05, 100_000, seed=21, d=d)
    rate = rejection_rate(null_model(kind, n, d), table.quantile, 20_000, seed=21)
    assert 0.04 <= rate <= 0.06


@pytest.mark.slow
@pytest.mark.parametrize("kind", [StatKind.T4A, StatKind.T4B, StatKind.T4C])
def test_linear_model_calibration(kind):
    design = reference_design(kind, 10, seed=13)
    table = tabulate(kind, 10, 0.05, 100_000, seed=13, design=design)
    rate = rejection_rate(null_model(kind, 10, design=design), table.quantile, 20_000, seed=13)
    assert 0.04 <= rate <= 0.06


def test_reference_seasonal_design_is_balanced():
    design = reference_design(StatKind.T4B, 10, seed=13)
    assert int(design.matrix[:, 1].sum()) == 5
