"""Deterministic report assembly and serialization.

Reports are byte-identical for identical config and seed: records are
merge-sorted by (task, dataset, split, head, metric), JSON keys are sorted,
and every float is formatted at 9 significant digits.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .metrics import CurvePoint, MetricRecord

FLOAT_FORMAT = ".9g"


def _norm_float(v: float) -> float:
    return float(format(float(v), FLOAT_FORMAT))


def _normalize(obj):
    if isinstance(obj, float):
        return _norm_float(obj)
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    return obj


def config_hash(config_doc: dict) -> str:
    """Hash of the compute-relevant config.

    The output location and the task selection are excluded: tasks never
    influence one another's records, so reports produced by different
    subcommands over one config file may be aggregated, while runs with
    different data, heads, options, or seeds are refused.
    """
    doc = {k: v for k, v in config_doc.items() if k not in ("out", "tasks")}
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def record_sort_key(rec: MetricRecord):
    return (rec.task, rec.dataset, rec.split, rec.head, rec.metric)


@dataclass
class Report:
    """Evaluation output: metric records, named curves, and provenance."""

    records: list[MetricRecord] = field(default_factory=list)
    curves: dict[str, list[CurvePoint]] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def add(self, record: MetricRecord) -> None:
        self.records.append(record)

    def add_curve(self, name: str, points: list[CurvePoint]) -> None:
        self.curves[name] = points

    def note_skip(self, what: str, reason: str) -> None:
        self.provenance.setdefault("skipped", []).append(f"{what}: {reason}")

    def merge(self, other: "Report") -> None:
        self.records.extend(other.records)
        self.curves.update(other.curves)
        for key, value in other.provenance.items():
            if key == "skipped":
                self.provenance.setdefault("skipped", []).extend(value)
            else:
                self.provenance[key] = value

    def sorted_records(self) -> list[MetricRecord]:
        return sorted(self.records, key=record_sort_key)

    def to_json_obj(self) -> dict:
        records = [
            {
                "task": r.task,
                "dataset": r.dataset,
                "split": r.split,
                "head": r.head,
                "metric": r.metric,
                "value": r.value,
                "higher_is_better": r.higher_is_better,
                "lower_bound": r.lower_bound,
                "upper_bound": r.upper_bound,
                "clamped": r.clamped,
                "flags": list(r.flags),
            }
            for r in self.sorted_records()
        ]
        curves = {
            name: [{"x": p.x, "y": p.y} for p in pts]
            for name, pts in sorted(self.curves.items())
        }
        return _normalize(
            {"records": records, "curves": curves, "provenance": self.provenance}
        )

    def write(self, out_dir) -> list[Path]:
        """Write report.json, records.json (bare array), and records.csv."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        obj = self.to_json_obj()
        paths = []

        report_path = out_dir / "report.json"
        report_path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
        paths.append(report_path)

        records_path = out_dir / "records.json"
        records_path.write_text(json.dumps(obj["records"], indent=1, sort_keys=True) + "\n")
        paths.append(records_path)

        csv_path = out_dir / "records.csv"
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["task", "dataset", "split", "metric", "value"])
            for r in self.sorted_records():
                writer.writerow(
                    [r.task, r.dataset, r.split, r.metric, format(r.value, FLOAT_FORMAT)]
                )
        paths.append(csv_path)
        return paths


def load_report_records(path) -> list[MetricRecord]:
    """Read back the records array of a written report for re-aggregation."""
    doc = json.loads(Path(path).read_text())
    rows = doc["records"] if isinstance(doc, dict) else doc
    return [
        MetricRecord(
            task=row["task"],
            dataset=row["dataset"],
            split=row["split"],
            metric=row["metric"],
            value=float(row["value"]),
            higher_is_better=bool(row["higher_is_better"]),
            lower_bound=float(row["lower_bound"]),
            upper_bound=float(row["upper_bound"]),
            head=row.get("head", ""),
            flags=tuple(row.get("flags", ())),
        )
        for row in rows
    ]
