"""Run outputs: the JSON report and the per-window KPI table."""
from __future__ import annotations

import csv
import json
from pathlib import Path

from .domain import KPI_FIELDS

KPI_COLUMNS = ("stid", "mno", "window_index", "window_end_us") + KPI_FIELDS


def report_json(report) -> str:
    return json.dumps(report.to_doc(), indent=2, sort_keys=True, allow_nan=False, default=str) + "\n"


def write_report(report, path: str | Path) -> None:
    Path(path).write_text(report_json(report), encoding="utf-8")


def write_kpi_csv(report, path: str | Path) -> None:
    """One row per (stid, window); untargeted or unmeasured KPIs are left empty."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(KPI_COLUMNS), lineterminator="\n")
        w.writeheader()
        for row in report.kpi_rows:
            w.writerow({k: ("" if row.get(k) is None else row[k]) for k in KPI_COLUMNS})
