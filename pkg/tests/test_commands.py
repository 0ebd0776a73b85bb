import json

import numpy as np
import pytest

from main import main
from services.tabulation_service import clear_draw_cache
from utils.errors import EXIT_IO, EXIT_OK, EXIT_STATISTICAL

from conftest import cohort_text, dated_rows, season_rows


@pytest.fixture(autouse=True)
def _fresh_cache():
    clear_draw_cache()
    yield
    clear_draw_cache()


@pytest.fixture
def cohort_file(tmp_path):
    rng = np.random.default_rng(12)
    rows = []
    for k in range(12):
        status = "amateur" if k % 2 else "professional"
        values = [round(float(v), 4) for v in rng.lognormal(3.0, 0.3, size=6)]
        rows += dated_rows(f"i{k}", "ferritin", values, status=status)
    rows += dated_rows("bad", "ferritin", ["oops"])
    path = tmp_path / "cohort.csv"
    path.write_text(cohort_text(rows), encoding="utf-8")
    return path


def _run(*args):
    return main([str(a) for a in args])


def _common(tmp_path, out="out"):
    return ["--output", tmp_path / out, "--table-path", tmp_path / "tables.csv", "--seed", 42, "--reps", 10_000]


def test_missing_input_file(tmp_path):
    code = _run("screen", "--input", tmp_path / "absent.csv", "--kind", "t1", *_common(tmp_path))
    assert code == EXIT_IO


def test_missing_kind_is_a_usage_error(tmp_path, cohort_file):
    with pytest.raises(SystemExit) as excinfo:
        _run("screen", "--input", cohort_file, *_common(tmp_path))
    assert excinfo.value.code == 2


def test_select_transform_writes_selection(tmp_path, cohort_file):
    code = _run("select-transform", "--input", cohort_file, "--family", "identity", *_common(tmp_path))
    assert code == EXIT_OK
    out = tmp_path / "out"
    selection = json.loads((out / "transformations.json").read_text(encoding="utf-8"))
    assert selection["transformations"] == {"ferritin": "identity"}
    assert selection["seed"] == 42
    table = (out / "normality_ferritin.csv").read_text(encoding="utf-8")
    assert table.startswith("# zscreen ")
    assert "transformation,num_sequences_tested" in table
    rejects = (out / "rejects.csv").read_text(encoding="utf-8")
    assert "unparseable value" in rejects


def test_screen_uses_selection_file(tmp_path, cohort_file):
    assert _run("select-transform", "--input", cohort_file, "--family", "log", *_common(tmp_path)) == EXIT_OK
    code = _run("screen", "--input", cohort_file, "--kind", "t1", "--group-by", "status", "all", *_common(tmp_path))
    assert code == EXIT_OK
    out = tmp_path / "out"
    document = json.loads((out / "screening_t1.json").read_text(encoding="utf-8"))
    screening = document["screenings"][0]
    assert screening["biomarkers"] == "ferritin"
    assert screening["eligible"] == 12
    summary = (out / "summary_t1.csv").read_text(encoding="utf-8").splitlines()
    assert summary[4] == "grouping,group,biomarker,kind,flagged,eligible,percentage,cell"
    assert any(line.startswith("all,all,ferritin,t1,") for line in summary)


def test_screen_model_c_on_season_data(tmp_path):
    path = tmp_path / "seasons.csv"
    path.write_text(cohort_text(season_rows("s1", "ferritin", [1.0, 2.0, 3.0, 2.5, 1.5])), encoding="utf-8")
    code = _run("screen", "--input", path, "--model", "C", "--transform", "identity", *_common(tmp_path))
    assert code == EXIT_STATISTICAL


def test_outputs_do_not_depend_on_thread_count(tmp_path, cohort_file):
    outputs = []
    for threads in (1, 4):
        clear_draw_cache()
        table = tmp_path / "tables.csv"
        if table.exists():
            table.unlink()
        code = _run("screen", "--input", cohort_file, "--kind", "t2", "--transform", "identity",
                    "--p-values", "--threads", threads, *_common(tmp_path))
        assert code == EXIT_OK
        outputs.append((
            (tmp_path / "out" / "screening_t2.json").read_bytes(),
            (tmp_path / "out" / "summary_t2.csv").read_bytes(),
            table.read_bytes(),
        ))
    assert outputs[0] == outputs[1]


def test_calibrate_exact_student_statistic(tmp_path):
    code = _run("calibrate", "--kind", "t0", "--n", 6, 12, "--replicates", 20_000, *_common(tmp_path))
    assert code == EXIT_OK
    lines = (tmp_path / "out" / "calibration_t0.csv").read_text(encoding="utf-8").splitlines()
    rows = [line.split(",") for line in lines if not line.startswith("#")]
    assert rows[0] == ["kind", "n", "d", "alpha", "reps", "replicates", "critical_value", "rejection_rate"]
    assert [r[1] for r in rows[1:]] == ["6", "12"]
    for r in rows[1:]:
        assert 0.04 <= float(r[-1]) <= 0.06


def test_tabulate_fills_store(tmp_path):
    code = _run("tabulate", "--model", "A", "--n", 5, 6, *_common(tmp_path))
    assert code == EXIT_OK
    store = (tmp_path / "tables.csv").read_text(encoding="utf-8").splitlines()
    assert len(store) == 4
    assert all(line.startswith("t4a,") for line in store[2:])


def test_tabulate_rejects_t0(tmp_path):
    with pytest.raises(SystemExit):
        _run("tabulate", "--kind", "t0", *_common(tmp_path))


def test_correlate_without_paired_data(tmp_path, cohort_file):
    code = _run("correlate", "--input", cohort_file, "--pairs", "hemoglobin,hematocrit", *_common(tmp_path))
    assert code == EXIT_OK
    document = json.loads((tmp_path / "out" / "correlation.json").read_text(encoding="utf-8"))
    histogram = document["histograms"][0]
    assert histogram["pair"] == ["hemoglobin", "hematocrit"]
    assert histogram["num_individuals"] == 0
    assert histogram["note"] == "no individual with at least 10 paired observations"


@pytest.mark.parametrize("option", [["--transform", "bogus"], ["--seed", "-1"], ["--seed", "abc"]])
def test_invalid_screen_options_are_usage_errors(tmp_path, cohort_file, option):
    args = ["--output", tmp_path / "out", "--table-path", tmp_path / "tables.csv", "--reps", 10_000]
    if option[0] != "--seed":
        args += ["--seed", 42]
    with pytest.raises(SystemExit) as excinfo:
        _run("screen", "--input", cohort_file, "--kind", "t1", *option, *args)
    assert excinfo.value.code == 2


def test_unknown_family_member_is_a_usage_error(tmp_path, cohort_file):
    with pytest.raises(SystemExit) as excinfo:
        _run("select-transform", "--input", cohort_file, "--family", "identity", "cuberoot", *_common(tmp_path))
    assert excinfo.value.code == 2


def test_transform_names_are_normalized(tmp_path, cohort_file):
    code = _run("screen", "--input", cohort_file, "--kind", "t1", "--transform", "LOG", *_common(tmp_path))
    assert code == EXIT_OK


def test_tuple_statistic_needs_two_biomarkers(tmp_path, cohort_file):
    code = _run("screen", "--input", cohort_file, "--kind", "t3", "--biomarker", "ferritin", *_common(tmp_path))
    assert code == EXIT_STATISTICAL
