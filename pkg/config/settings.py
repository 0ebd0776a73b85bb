"""
Runtime settings loaded from the environment (and an optional .env file).
"""
import os
from dataclasses import dataclass
from functools import lru_cache

import psutil
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

TOOL_NAME = "zscreen"
TOOL_VERSION = "1.0.0"
SCHEMA_VERSION = 1
TABLE_FORMAT_VERSION = 2

MIN_REPS = 10_000


@dataclass(frozen=True)
class Settings:
    table_path: str
    reps: int
    alpha: float
    threads: int
    log_level: str
    block_size: int


def _default_threads() -> int:
    cores = psutil.cpu_count(logical=False)
    return cores if cores else 1


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Read settings from ZSCREEN_* environment variables, falling back to the defaults."""
    return Settings(
        table_path=os.environ.get("ZSCREEN_TABLE_PATH", os.path.join("data", "quantile_tables.csv")),
        reps=int(os.environ.get("ZSCREEN_REPS", 100_000)),
        alpha=float(os.environ.get("ZSCREEN_ALPHA", 0.05)),
        threads=int(os.environ.get("ZSCREEN_THREADS", _default_threads())),
        log_level=os.environ.get("ZSCREEN_LOG_LEVEL", "INFO"),
        block_size=int(os.environ.get("ZSCREEN_BLOCK_SIZE", 1000)),
    )
