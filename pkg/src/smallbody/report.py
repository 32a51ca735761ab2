"""Run reports and their JSON / CSV encodings.

Complex numbers are written as ``{"re": .., "im": ..}`` in JSON and as
``<name>_re, <name>_im`` column pairs in CSV.  Floats use the shortest
repr that round-trips exactly.  Wall-clock data lives in a separate
``<name>.meta.json`` so the report itself is reproducible byte for byte.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Table:
    """Named columns of equal length."""

    columns: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows: list[dict], columns: list[str] | None = None) -> "Table":
        names = columns or (list(rows[0]) if rows else [])
        return cls({c: np.array([r[c] for r in rows]) for c in names})

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0


@dataclass
class RunReport:
    scenario: str
    config: dict
    results: dict = field(default_factory=dict)
    tables: dict[str, Table] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def warn(self, message: str) -> None:
        if message not in self.warnings:
            self.warnings.append(message)


def to_plain(value):
    """Recursively convert numpy and complex values to JSON-ready objects."""
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_plain(v) for v in value.tolist()]
    if isinstance(value, Table):
        return {name: to_plain(col) for name, col in value.columns.items()}
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": float(value.real), "im": float(value.imag)}
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def from_plain(value):
    """Inverse of :func:`to_plain` for complex values."""
    if isinstance(value, dict):
        if set(value) == {"re", "im"}:
            return complex(value["re"], value["im"])
        return {k: from_plain(v) for k, v in value.items()}
    if isinstance(value, list):
        return [from_plain(v) for v in value]
    return value


def report_dict(report: RunReport) -> dict:
    return to_plain(
        {
            "scenario": report.scenario,
            "config": report.config,
            "results": report.results,
            "tables": report.tables,
            "warnings": report.warnings,
        }
    )


def dumps(report: RunReport) -> str:
    return json.dumps(report_dict(report), indent=2, sort_keys=False, allow_nan=True) + "\n"


def _fmt(v) -> str:
    return repr(float(v))


def write_csv_table(table: Table, path: Path) -> None:
    header, cols = [], []
    for name, col in table.columns.items():
        col = np.asarray(col)
        if np.iscomplexobj(col):
            header += [f"{name}_re", f"{name}_im"]
            cols += [[_fmt(v) for v in col.real], [_fmt(v) for v in col.imag]]
        elif col.dtype.kind in "fi":
            header.append(name)
            cols.append([_fmt(v) if col.dtype.kind == "f" else str(int(v)) for v in col])
        else:
            header.append(name)
            cols.append([str(v) for v in col])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow(row)


def read_csv_table(path) -> Table:
    """Read a table written by :func:`write_csv_table`, re-joining complex pairs."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    raw = {h: [r[i] for r in body] for i, h in enumerate(header)}

    def num(vals):
        try:
            return np.array([float(v) for v in vals])
        except ValueError:
            return np.array(vals)

    out: dict[str, np.ndarray] = {}
    for h in header:
        if h.endswith("_re") and h[:-3] + "_im" in raw:
            base = h[:-3]
            out[base] = num(raw[h]) + 1j * num(raw[base + "_im"])
        elif h.endswith("_im") and h[:-3] + "_re" in raw:
            continue
        else:
            out[h] = num(raw[h])
    return Table(out)


def _scalar_table(results: dict) -> Table:
    names, values = [], []

    def walk(prefix, v):
        if isinstance(v, dict):
            for k, x in v.items():
                walk(f"{prefix}.{k}" if prefix else k, x)
        elif isinstance(v, (list, tuple, np.ndarray)):
            for i, x in enumerate(np.ravel(np.asarray(v, dtype=object))):
                walk(f"{prefix}[{i}]", x)
        else:
            names.append(prefix)
            values.append(v)

    walk("", results)
    numeric = [complex(v) if isinstance(v, (int, float, complex, np.number, bool, np.bool_)) else np.nan for v in values]
    text = [v if isinstance(v, str) else "" for v in values]
    return Table({"name": np.array(names, dtype=object), "value": np.array(numeric, complex), "text": np.array(text, dtype=object)})


def emit(report: RunReport, out_dir, fmt: str = "json", name: str = "report") -> list[Path]:
    """Write the report; returns the paths written (meta file last)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "json":
        path = out / f"{name}.json"
        path.write_text(dumps(report))
        written.append(path)
    elif fmt == "csv":
        tables = {"results": _scalar_table(report.results), **report.tables}
        tables["warnings"] = Table({"message": np.array(report.warnings, dtype=object)})
        for tname, table in tables.items():
            path = out / f"{name}_{tname}.csv"
            write_csv_table(table, path)
            written.append(path)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    meta = out / f"{name}.meta.json"
    meta.write_text(json.dumps(to_plain(report.meta), indent=2) + "\n")
    written.append(meta)
    return written
