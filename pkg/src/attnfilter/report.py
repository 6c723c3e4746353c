"""Metric report assembly and serialization.

A report holds one row per (image, method, K) with whatever metrics could be
computed (missing ones stay None), plus mean/std/n aggregates per metric per
(method, K) group. Serialization is deterministic: rows and aggregates are
sorted, JSON keys are sorted, and the generation timestamp lives in its own
top-level field so the rest of the document is byte-stable for fixed inputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

METRIC_COLUMNS = [
    "sim",
    "pcc",
    "auc_judd",
    "nss",
    "iauc",
    "dauc",
    "ad",
    "ai",
    "ag",
    "delta_a_f",
    "lip",
    "lss",
]
CSV_COLUMNS = ["image_id", "method", "k"] + METRIC_COLUMNS

REPORT_SCHEMA_ID = "attnfilter-report/1"


@dataclass
class MetricRow:
    image_id: str
    method: str
    k: float | None = None
    values: dict = field(default_factory=dict)  # metric name -> float | None


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def sorted_rows(self) -> list[MetricRow]:
        return sorted(self.rows, key=lambda r: (r.method, _k_sort(r.k), r.image_id))

    def aggregates(self) -> list[dict]:
        """Per (method, k, metric): mean, population std, and sample count."""
        groups: dict[tuple, dict[str, list[float]]] = {}
        for row in self.sorted_rows():
            bucket = groups.setdefault((row.method, row.k), {})
            for metric, value in row.values.items():
                if value is not None:
                    bucket.setdefault(metric, []).append(float(value))
        out = []
        for (method, k), metrics in sorted(groups.items(), key=lambda kv: (kv[0][0], _k_sort(kv[0][1]))):
            for metric in METRIC_COLUMNS:
                if metric in metrics:
                    vals = np.asarray(metrics[metric])
                    out.append(
                        {
                            "method": method,
                            "k": k,
                            "metric": metric,
                            "mean": float(vals.mean()),
                            "std": float(vals.std()),
                            "n": int(vals.size),
                        }
                    )
        return out

    def to_json_dict(self, timestamp: str | None = None) -> dict:
        return {
            "schema": REPORT_SCHEMA_ID,
            "generated_at": timestamp
            or datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "config": self.config,
            "per_image": [
                {
                    "image_id": row.image_id,
                    "method": row.method,
                    "k": row.k,
                    "metrics": {m: row.values.get(m) for m in METRIC_COLUMNS if m in row.values},
                }
                for row in self.sorted_rows()
            ],
            "aggregate": self.aggregates(),
        }


def _k_sort(k):
    return (0, float(k)) if k is not None else (1, 0.0)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(report: MetricReport, out_dir) -> dict[str, Path]:
    """Write report.json, report.csv, and aggregate.csv; returns the paths."""
    base = Path(out_dir)
    base.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": base / "report.json",
        "csv": base / "report.csv",
        "aggregate": base / "aggregate.csv",
    }
    doc = report.to_json_dict()
    paths["json"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    with paths["csv"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in report.sorted_rows():
            writer.writerow(
                [row.image_id, row.method, _cell(row.k)]
                + [_cell(row.values.get(m)) for m in METRIC_COLUMNS]
            )

    with paths["aggregate"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "k", "metric", "mean", "std", "n"])
        for agg in doc["aggregate"]:
            writer.writerow(
                [agg["method"], _cell(agg["k"]), agg["metric"], _cell(agg["mean"]), _cell(agg["std"]), agg["n"]]
            )
    return paths
