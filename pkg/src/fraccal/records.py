"""Result records and their byte-deterministic emission.

A record holds scalar outputs, flat tables and diagnostics.  ``emit``
writes one CSV per table (comma separated, ``.`` decimal point, LF line
endings, floats in shortest round-trip form) plus a JSON summary with
sorted keys.  Wall-clock timings are written to a separate sidecar file so
the main outputs stay identical across runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"row has {len(values)} fields, table has {len(self.columns)}")
        self.rows.append(values)


@dataclass
class ResultRecord:
    experiment_id: str
    subcommand: str
    config_hash: str
    status: str = "ok"
    outputs: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def stem(self) -> str:
        return f"{self.experiment_id}_{self.subcommand}"

    def summary(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "subcommand": self.subcommand,
            "config_hash": self.config_hash,
            "status": self.status,
            "outputs": _plain(self.outputs),
            "diagnostics": _plain(self.diagnostics),
            "tables": sorted(self.tables),
        }


def format_field(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    text = str(value)
    if any(c in text for c in ",\n\r\""):
        raise ValueError(f"CSV field {text!r} needs quoting; identifiers only")
    return text


def render_csv(table: Table) -> str:
    lines = [",".join(table.columns)]
    lines += [",".join(format_field(v) for v in row) for row in table.rows]
    return "\n".join(lines) + "\n"


def _plain(obj):
    """JSON-friendly copy; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else format_field(value)
    return obj


def render_summary(record: ResultRecord) -> str:
    return json.dumps(record.summary(), indent=2, sort_keys=True) + "\n"


def emit(record: ResultRecord, out_dir, fmt: str = "csv") -> list[Path]:
    """Write the record's tables and summary; returns the written paths."""
    if fmt != "csv":
        raise ValueError(f"unsupported output format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in sorted(record.tables):
        path = out / f"{record.stem}_{name}.csv"
        path.write_bytes(render_csv(record.tables[name]).encode())
        written.append(path)
    path = out / f"{record.stem}_summary.json"
    path.write_bytes(render_summary(record).encode())
    written.append(path)
    if record.timings:
        path = out / f"{record.stem}_timings.json"
        path.write_bytes((json.dumps(_plain(record.timings), sort_keys=True) + "\n").encode())
        written.append(path)
    return written


def append_log(record: ResultRecord, out_dir) -> Path:
    """Append one line per run to the append-only ``records.jsonl`` log."""
    path = Path(out_dir) / "records.jsonl"
    entry = {k: record.summary()[k] for k in ("experiment_id", "subcommand", "config_hash", "status")}
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return path
