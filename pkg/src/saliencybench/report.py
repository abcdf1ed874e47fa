"""Metric report rows and their CSV / JSON serializations.

Rows carry full provenance (dataset, model, method, metric, seed) plus either
a per-sample value or an aggregate. Formatting is fixed (9 significant
digits, empty string for excluded values) so identical runs write identical
bytes regardless of worker count.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import IOFormatError

CSV_COLUMNS = ("dataset", "model_id", "method", "metric", "sample_id",
               "value", "n_included", "n_excluded", "seed")


@dataclass(frozen=True)
class MetricRow:
    dataset: str
    model_id: str
    method: str
    metric: str
    sample_id: str        # empty for aggregate rows
    value: float | None   # None marks an excluded sample
    n_included: int
    n_excluded: int
    seed: int

    @property
    def is_aggregate(self) -> bool:
        return self.sample_id == ""


def format_value(value: float | None) -> str:
    if value is None:
        return ""
    if value != value:  # NaN
        return "nan"
    return format(float(value), ".9g")


def write_report_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([
                row.dataset, row.model_id, row.method, row.metric,
                row.sample_id, format_value(row.value),
                row.n_included, row.n_excluded, row.seed,
            ])


def write_report_json(rows, path) -> None:
    payload = [
        {
            "dataset": row.dataset, "model_id": row.model_id,
            "method": row.method, "metric": row.metric,
            "sample_id": row.sample_id,
            "value": None if row.value is None else float(format_value(row.value)),
            "n_included": row.n_included, "n_excluded": row.n_excluded,
            "seed": row.seed,
        }
        for row in rows
    ]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_report_csv(path) -> list:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise IOFormatError(f"{path} does not have the report header")
        for rec in reader:
            rows.append(MetricRow(
                dataset=rec["dataset"], model_id=rec["model_id"],
                method=rec["method"], metric=rec["metric"],
                sample_id=rec["sample_id"],
                value=None if rec["value"] == "" else float(rec["value"]),
                n_included=int(rec["n_included"]),
                n_excluded=int(rec["n_excluded"]), seed=int(rec["seed"]),
            ))
    return rows


def write_curve_csv(path, columns, rows) -> None:
    """Generic numeric curve export (insertion curves, sensitivity sweeps)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(v) if isinstance(v, float) else v
                             for v in row])
