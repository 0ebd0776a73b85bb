import datetime as dt
import os
import sys

import numpy as np
import pytest

# Repository root on the import path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from services.cohort_service import parse_cohort  # noqa: E402
from services.tabulation_service import TableStore  # noqa: E402

HEADER = "individual_id,biomarker,value,date,season,year,status,discipline"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte Carlo calibration checks")


def cohort_text(rows):
    """Build cohort CSV text from (id, biomarker, value, date, season, year, status, discipline) tuples."""
    lines = [HEADER]
    for row in rows:
        lines.append(",".join("" if v is None else str(v) for v in row))
    return "\n".join(lines) + "\n"


def dated_rows(individual_id, biomarker, values, start=dt.date(2012, 1, 10), step_days=120,
               status="amateur", discipline="road"):
    return [
        (individual_id, biomarker, v, (start + dt.timedelta(days=step_days * k)).isoformat(), "", "", status, discipline)
        for k, v in enumerate(values)
    ]


def season_rows(individual_id, biomarker, values, first_year=2010, status="professional", discipline=""):
    rows = []
    for k, v in enumerate(values):
        season = "winter" if k % 2 == 0 else "summer"
        rows.append((individual_id, biomarker, v, "", season, first_year + k // 2, status, discipline))
    return rows


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_cohort():
    rows = (
        dated_rows("a1", "ferritin", [40.0, 42.5, 39.0, 41.0])
        + dated_rows("a2", "ferritin", [80.0, 75.5, 77.0, 90.0], status="professional", discipline="mtb")
    )
    return parse_cohort(cohort_text(rows))


@pytest.fixture
def table_store(tmp_path):
    return TableStore(str(tmp_path / "tables.csv"))
