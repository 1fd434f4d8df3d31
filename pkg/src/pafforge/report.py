"""Schedule report emission: deterministic JSON plus a flat CSV view.

The JSON body under "report" is a pure function of config + seed; anything
time-dependent lives in the "meta" block so two runs of the same config
produce byte-identical report bodies.
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

from .errors import ConfigError, DataError
from .scheduler import ScheduleReport

__all__ = ["emit_report", "read_report", "report_to_csv_rows", "canonical_report_bytes"]

SCHEMA_VERSION = 1


def canonical_report_bytes(report: ScheduleReport) -> bytes:
    """Deterministic serialization of the report body."""
    return json.dumps(report.to_dict(), sort_keys=True,
                      separators=(",", ":")).encode()


def emit_report(report: ScheduleReport, path, fmt: str = "json",
                timestamp: float | None = None):
    """Write a report as JSON (round-trips losslessly) or flat CSV."""
    path = Path(path)
    if fmt == "json":
        doc = {
            "schema_version": SCHEMA_VERSION,
            "meta": {"created_at": time.time() if timestamp is None else timestamp},
            "report": report.to_dict(),
        }
        try:
            path.write_text(json.dumps(doc, sort_keys=True, indent=1))
        except OSError as exc:
            raise DataError(f"cannot write report {path}: {exc}") from exc
    elif fmt == "csv":
        try:
            with open(path, "w", newline="") as f:
                writer = csv.writer(f)
                for row in report_to_csv_rows(report):
                    writer.writerow(row)
        except OSError as exc:
            raise DataError(f"cannot write report {path}: {exc}") from exc
    else:
        raise ConfigError(f"unknown report format {fmt!r} (use json or csv)")
    return path


def report_to_csv_rows(report: ScheduleReport):
    """One row per training group, plus a header."""
    yield [
        "step", "group", "trainable", "dropout", "at_swap", "selected",
        "selected_train_acc", "selected_val_acc", "swa_train_acc",
        "swa_val_acc", "epochs",
    ]
    for step in report.steps:
        for g, rec in enumerate(step.groups):
            yield [
                step.step_index, g, rec.trainable,
                int(rec.techniques.get("dropout", False)),
                int(rec.techniques.get("at_swap", False)),
                rec.selected_id, rec.selected_train_acc, rec.selected_val_acc,
                rec.swa_entry[0], rec.swa_entry[1], len(rec.epoch_entries),
            ]


def read_report(path) -> ScheduleReport:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(
            f"{path}: unsupported report schema {doc.get('schema_version')!r}"
        )
    return ScheduleReport.from_dict(doc["report"])
