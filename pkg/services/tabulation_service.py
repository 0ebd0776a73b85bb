"""
Tabulation service module: Monte Carlo null laws of the T1-T4 statistics.

The statistics are distribution-free under iid Gaussian noise, so their null
quantiles are simulated once per (kind, size, design) with mu = 0 and
sigma = 1 and kept in a TableStore file.

Replicates are drawn in fixed-size blocks; block k uses the random stream
SeedSequence(seed, spawn_key=(k,)), so a table depends only on
(kind, params, reps, seed, block size) and never on the thread count.
"""
import hashlib
import io
import logging
import math
import os
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from config.settings import MIN_REPS, TABLE_FORMAT_VERSION, TOOL_NAME, get_settings
from models.results import DesignMatrix, NullModel, QuantileTable, StatKind
from services.statistics_service import batch_statistic, check_design
from utils.errors import TabulationError
from utils.io import atomic_write_text

logger = logging.getLogger(__name__)

NO_DESIGN = "none"
TABLE_COLUMNS = ["kind", "n", "d", "design_hash", "alpha", "reps", "seed", "block_size", "quantile"]
TABLE_HEADER = f"# {TOOL_NAME} quantile table v{TABLE_FORMAT_VERSION}"

# stream prefix of the fresh null draws used for calibration
FRESH_STREAM = 1

_DRAW_CACHE_SIZE = 8
_draw_cache: "OrderedDict[Tuple, np.ndarray]" = OrderedDict()
_draw_cache_lock = threading.Lock()


def design_hash(design: Optional[DesignMatrix]) -> str:
    """
    64-bit hash (16 hex digits) of a design matrix.

    The canonical form is the dimensions followed by every entry rounded to
    12 significant digits, row-major.
    """
    if design is None:
        return NO_DESIGN
    m = design.matrix
    if not np.all(np.isfinite(m)):
        raise ValueError("design matrix entries must be finite")
    canonical = f"{m.shape[0]}x{m.shape[1]}:" + ",".join("%.12g" % v for v in m.ravel(order="C"))
    return hashlib.blake2b(canonical.encode("utf-8"), digest_size=8).hexdigest()


def null_model(kind: StatKind, n: int, d: int = 1, design: Optional[DesignMatrix] = None) -> NullModel:
    """
    Build and validate the null model of a statistic.

    Raises:
        TabulationError: Parameters break the statistic's eligibility rules
    """
    kind = StatKind(kind)
    if kind in (StatKind.T0, StatKind.T1) and n < 3:
        raise TabulationError(f"{kind.value} needs n >= 3, got n={n}")
    if kind == StatKind.T2 and n < 4:
        raise TabulationError(f"t2 needs n >= 4, got n={n}")
    if kind == StatKind.T3 and (d < 1 or n < d + 2):
        raise TabulationError(f"t3 needs d >= 1 and n >= d + 2, got n={n}, d={d}")
    if kind != StatKind.T3:
        d = 1
    if kind.is_linear_model:
        if design is None:
            raise TabulationError(f"{kind.value} needs a design matrix")
        if design.n != n:
            raise TabulationError(f"design has {design.n} rows, expected n={n}")
        check_design(design)
    else:
        design = None
    return NullModel(kind=kind, n=n, d=d, design=design)


def validate_request(alpha: Optional[float], reps: int) -> None:
    if alpha is not None and not (0.0 < alpha < 1.0):
        raise TabulationError(f"alpha must lie in (0, 1), got {alpha}")
    if reps < MIN_REPS:
        raise TabulationError(f"reps must be at least {MIN_REPS}, got {reps}")


def _shape(model: NullModel) -> Tuple[int, ...]:
    if model.kind == StatKind.T3:
        return (model.n, model.d)
    return (model.n,)


def _statistic(model: NullModel, draws: np.ndarray) -> np.ndarray:
    return batch_statistic(model.kind, draws, model.design)


def _generator(seed: int, block: int, stream: Tuple[int, ...] = ()) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=stream + (block,))))


def simulate_null(model: NullModel, rng: np.random.Generator) -> float:
    """
    Draw one iid N(0, 1) sample of the model's shape and return its statistic.

    Degenerate draws (non-finite statistic) are redrawn.
    """
    while True:
        value = float(_statistic(model, rng.standard_normal((1,) + _shape(model)))[0])
        if math.isfinite(value):
            return value
        logger.debug(f"Redrawing a degenerate {model.kind.value} null sample")


def _simulate_block(model: NullModel, seed: int, block: int, size: int,
                    stream: Tuple[int, ...] = ()) -> Tuple[np.ndarray, int]:
    rng = _generator(seed, block, stream)
    values = _statistic(model, rng.standard_normal((size,) + _shape(model)))
    bad = np.flatnonzero(~np.isfinite(values))
    for row in bad:
        values[row] = simulate_null(model, rng)
    return values, len(bad)


def simulate_draws(
    model: NullModel,
    reps: int,
    seed: int,
    threads: int = 1,
    block_size: Optional[int] = None,
    stream: Tuple[int, ...] = (),
) -> np.ndarray:
    """
    Simulate `reps` null statistic values in replicate order.

    Args:
        model: Validated null model
        reps: Number of replicates
        seed: Master seed
        threads: Worker threads; has no effect on the values
        block_size: Replicates per random stream block (defaults to settings)
        stream: Extra spawn-key prefix separating independent uses of a seed

    Returns:
        Array of shape (reps,)
    """
    block_size = block_size or get_settings().block_size
    num_blocks = math.ceil(reps / block_size)
    sizes = [min(block_size, reps - k * block_size) for k in range(num_blocks)]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        blocks = list(executor.map(
            lambda k: _simulate_block(model, seed, k, sizes[k], stream), range(num_blocks)))

    redraws = sum(r for _, r in blocks)
    if redraws:
        logger.debug(f"Redrew {redraws} degenerate {model.kind.value} null sample(s)")
    return np.concatenate([values for values, _ in blocks])


def _cached_draws(model: NullModel, reps: int, seed: int, threads: int, block_size: Optional[int]) -> np.ndarray:
    block_size = block_size or get_settings().block_size
    key = (model.kind.value, model.n, model.d, design_hash(model.design), reps, seed, block_size)
    with _draw_cache_lock:
        if key in _draw_cache:
            _draw_cache.move_to_end(key)
            return _draw_cache[key]
    draws = simulate_draws(model, reps, seed, threads, block_size)
    draws.setflags(write=False)
    with _draw_cache_lock:
        _draw_cache[key] = draws
        while len(_draw_cache) > _DRAW_CACHE_SIZE:
            _draw_cache.popitem(last=False)
    return draws


def clear_draw_cache() -> None:
    with _draw_cache_lock:
        _draw_cache.clear()


def order_statistic(draws: np.ndarray, alpha: float) -> float:
    """Order statistic of rank ceil((1 - alpha) * reps) of the draws (no interpolation)."""
    reps = draws.size
    rank = math.ceil(round((1.0 - alpha) * reps, 9))
    rank = min(max(rank, 1), reps)
    return float(np.partition(draws, rank - 1)[rank - 1])


class TableStore:
    """
    On-disk map from tabulation keys to QuantileTable records.

    The file is a version header line followed by a CSV table with the
    columns kind,n,d,design_hash,alpha,reps,seed,block_size,quantile. Saves
    go through a temporary file renamed over the target.
    """

    def __init__(self, path: Optional[str] = None):
        self.path = path or get_settings().table_path
        self._tables: Dict[Tuple, QuantileTable] = {}
        self._lock = threading.Lock()
        self._tables.update(self._read())

    def _read(self) -> Dict[Tuple, QuantileTable]:
        if not os.path.exists(self.path):
            return {}
        with open(self.path, "r", encoding="utf-8") as handle:
            header = handle.readline().rstrip("\n")
            body = handle.read()
        if header != TABLE_HEADER:
            raise TabulationError(f"{self.path}: unsupported table file header {header!r}")
        if not body.strip():
            return {}
        frame = pd.read_csv(io.StringIO(body), dtype=str, keep_default_na=False)
        tables = {}
        for record in frame.to_dict(orient="records"):
            table = QuantileTable(
                kind=StatKind(record["kind"]),
                n=int(record["n"]),
                d=int(record["d"]),
                design_hash=record["design_hash"],
                alpha=float(record["alpha"]),
                reps=int(record["reps"]),
                seed=int(record["seed"]),
                block_size=int(record["block_size"]),
                quantile=float(record["quantile"]),
            )
            tables[table.key] = table
        return tables

    def __len__(self) -> int:
        return len(self._tables)

    def tables(self) -> List[QuantileTable]:
        return sorted(self._tables.values(), key=lambda t: t.key)

    def lookup(self, key: Tuple) -> Optional[QuantileTable]:
        """Exact lookup; entries that differ only in reps, seed or block size are reported and ignored."""
        with self._lock:
            table = self._tables.get(key)
            if table is None:
                stale = [k for k in self._tables if k[:5] == key[:5]]
                if stale:
                    logger.warning(f"Ignoring {len(stale)} table entr(ies) for {key[0]} n={key[1]} "
                                   f"with other reps/seed/block size")
            return table

    def put(self, table: QuantileTable) -> None:
        with self._lock:
            self._tables[table.key] = table

    def save(self) -> None:
        """Merge with the current file content and write the store atomically."""
        with self._lock:
            merged = self._read()
            merged.update(self._tables)
            self._tables = merged
            rows = [
                {
                    "kind": t.kind.value,
                    "n": t.n,
                    "d": t.d,
                    "design_hash": t.design_hash,
                    "alpha": repr(float(t.alpha)),
                    "reps": t.reps,
                    "seed": t.seed,
                    "block_size": t.block_size,
                    "quantile": repr(float(t.quantile)),
                }
                for t in sorted(merged.values(), key=lambda t: t.key)
            ]
            frame = pd.DataFrame(rows, columns=TABLE_COLUMNS)
            atomic_write_text(self.path, TABLE_HEADER + "\n" + frame.to_csv(index=False, lineterminator="\n"))


def table_key(model: NullModel, alpha: float, reps: int, seed: int, block_size: Optional[int] = None) -> Tuple:
    block_size = block_size or get_settings().block_size
    return QuantileTable(model.kind, model.n, model.d, design_hash(model.design), alpha, reps, seed,
                         block_size, 0.0).key


def tabulate(
    kind: StatKind,
    n: int,
    alpha: float,
    reps: int,
    seed: int,
    d: int = 1,
    design: Optional[DesignMatrix] = None,
    store: Optional[TableStore] = None,
    threads: int = 1,
    block_size: Optional[int] = None,
) -> QuantileTable:
    """
    Estimate the (1 - alpha) null quantile of a statistic by Monte Carlo.

    Args:
        kind: t1, t2, t3 or a t4 kind (t0 has an exact Student law)
        n: Sequence length
        alpha: Significance level in (0, 1)
        reps: Number of replicates, at least 10000
        seed: Master seed
        d: Dimension (t3 only)
        design: Design matrix (t4 kinds only)
        store: Table cache; served from it when the exact key is present, and
            updated and saved otherwise
        threads: Worker threads
        block_size: Replicates per random stream block; part of the table key

    Returns:
        The QuantileTable for the request

    Raises:
        TabulationError: Invalid alpha, reps or parameters
    """
    kind = StatKind(kind)
    validate_request(alpha, reps)
    if kind == StatKind.T0:
        raise TabulationError("t0 follows an exact Student law; no tabulation needed")
    model = null_model(kind, n, d, design)
    block_size = block_size or get_settings().block_size
    key = table_key(model, alpha, reps, seed, block_size)

    if store is not None:
        cached = store.lookup(key)
        if cached is not None:
            logger.info(f"Table cache hit: {kind.value} n={model.n} d={model.d} alpha={alpha}")
            return cached
        logger.info(f"Table cache miss: {kind.value} n={model.n} d={model.d} alpha={alpha}, simulating {reps} replicates")

    draws = _cached_draws(model, reps, seed, threads, block_size)
    table = QuantileTable(
        kind=kind,
        n=model.n,
        d=model.d,
        design_hash=key[3],
        alpha=float(alpha),
        reps=reps,
        seed=seed,
        block_size=block_size,
        quantile=order_statistic(draws, alpha),
    )
    if store is not None:
        store.put(table)
        store.save()
    return table


def mc_p_value(
    observed: float,
    kind: StatKind,
    n: int,
    reps: int,
    seed: int,
    d: int = 1,
    design: Optional[DesignMatrix] = None,
    threads: int = 1,
    block_size: Optional[int] = None,
) -> float:
    """
    Monte Carlo p-value (1 + #{simulated >= observed}) / (reps + 1).

    The draw set is shared with `tabulate` for the same (kind, params, reps, seed).
    """
    if math.isnan(observed):
        raise ValueError("observed statistic is NaN")
    validate_request(None, reps)
    model = null_model(kind, n, d, design)
    draws = _cached_draws(model, reps, seed, threads, block_size)
    exceed = int(np.count_nonzero(draws >= observed))
    return (1 + exceed) / (reps + 1)


def quantiles(draws: np.ndarray, alphas: Iterable[float]) -> List[float]:
    return [order_statistic(draws, a) for a in alphas]


def rejection_rate(
    model: NullModel,
    critical_value: float,
    replicates: int,
    seed: int,
    threads: int = 1,
    block_size: Optional[int] = None,
) -> float:
    """Share of fresh null samples whose statistic exceeds `critical_value`."""
    fresh = simulate_draws(model, replicates, seed, threads, block_size, stream=(FRESH_STREAM,))
    return float(np.count_nonzero(fresh > critical_value)) / replicates
