"""
Rendering helpers for command outputs: count cells, delimited tables with a
provenance header and versioned JSON documents.
"""
import json
from typing import Any, Dict, Iterable, List

import pandas as pd

from config.settings import SCHEMA_VERSION, TOOL_NAME, TOOL_VERSION
from models.results import (
    CorrelationHistogram,
    GroupReport,
    NormalityReport,
    QuantileTable,
    RunConfig,
    ScreeningSummary,
    format_value,
)


def format_count_cell(flagged: int, eligible: int) -> str:
    """Render 'flagged/eligible (percentage)', e.g. '30/75 (40.00)'; empty groups render '0/0'."""
    if eligible == 0:
        return f"{flagged}/{eligible}"
    return f"{flagged}/{eligible} ({100.0 * flagged / eligible:.2f})"


def provenance_header(config: RunConfig) -> str:
    """Comment lines naming the tool version and the resolved configuration."""
    lines = [
        f"# {TOOL_NAME} {TOOL_VERSION}",
        f"# schema_version: {SCHEMA_VERSION}",
        f"# seed: {config.seed}",
        f"# config: {json.dumps(config.to_dict(), sort_keys=True)}",
    ]
    return "\n".join(lines) + "\n"


def render_table(frame: pd.DataFrame, config: RunConfig) -> str:
    return provenance_header(config) + frame.to_csv(index=False, lineterminator="\n")


def render_document(payload: Dict[str, Any], config: RunConfig) -> str:
    document = {
        "tool": TOOL_NAME,
        "tool_version": TOOL_VERSION,
        "schema_version": SCHEMA_VERSION,
        "seed": config.seed,
        "config": config.to_dict(),
        **payload,
    }
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


def normality_table(report: NormalityReport) -> pd.DataFrame:
    return pd.DataFrame(report.to_records(), columns=[
        "transformation", "num_sequences_tested", "num_skipped_degenerate", "KS_D", "global_p", "selected",
    ])


def group_table(reports: Iterable[GroupReport]) -> pd.DataFrame:
    rows = [
        {
            "grouping": r.grouping,
            "group": r.group,
            "biomarker": r.biomarker,
            "kind": r.kind.value,
            "flagged": r.flagged,
            "eligible": r.eligible,
            "percentage": "" if r.percentage is None else f"{r.percentage:.2f}",
            "cell": format_count_cell(r.flagged, r.eligible),
        }
        for r in reports
    ]
    return pd.DataFrame(rows, columns=["grouping", "group", "biomarker", "kind", "flagged", "eligible",
                                       "percentage", "cell"])


def summary_record(label: str, summary: ScreeningSummary) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "biomarkers": label,
        "flagged": summary.flagged,
        "eligible": summary.eligible,
        "cell": format_count_cell(summary.flagged, summary.eligible),
        "proportion": summary.proportion,
        "note": summary.note,
        "results": [r.to_dict() for r in summary.results],
    }
    if summary.constants is not None:
        record["constant_sequences"] = {
            "flagged_ids": list(summary.constants.flagged_ids),
            "eligible": summary.constants.eligible,
            "proportion": summary.constants.proportion,
        }
    return record


def histogram_table(histograms: Iterable[CorrelationHistogram]) -> pd.DataFrame:
    rows: List[Dict[str, Any]] = []
    for h in histograms:
        for j, count in enumerate(h.counts):
            rows.append({
                "biomarker_x": h.pair[0],
                "biomarker_y": h.pair[1],
                "bin_left": h.edges[j],
                "bin_right": h.edges[j + 1],
                "count": count,
            })
    return pd.DataFrame(rows, columns=["biomarker_x", "biomarker_y", "bin_left", "bin_right", "count"])


def histogram_record(h: CorrelationHistogram) -> Dict[str, Any]:
    return {
        "pair": list(h.pair),
        "r_values": [format_value(r) for r in h.r_values],
        "counts": list(h.counts),
        "num_individuals": len(h.r_values),
        "num_skipped_degenerate": h.num_skipped_degenerate,
        "note": h.note,
    }


def quantile_table(tables: Iterable[QuantileTable]) -> pd.DataFrame:
    rows = [
        {
            "kind": t.kind.value, "n": t.n, "d": t.d, "design_hash": t.design_hash,
            "alpha": repr(float(t.alpha)), "reps": t.reps, "seed": t.seed, "block_size": t.block_size,
            "quantile": format_value(t.quantile),
        }
        for t in tables
    ]
    columns = ["kind", "n", "d", "design_hash", "alpha", "reps", "seed", "block_size", "quantile"]
    return pd.DataFrame(rows, columns=columns)
