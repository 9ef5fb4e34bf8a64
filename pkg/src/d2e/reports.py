"""CSV and JSON writers with frozen column orders and stable float formatting."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "item"):  # numpy scalar
        return _cell(value.item())
    return str(value)


def _jsonable(value: Any) -> Any:
    if isinstance(value, float):
        return None if math.isnan(value) or math.isinf(value) else value
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return _jsonable(value.tolist())
    return value


def write_csv(path, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])
    return path


def write_json(path, obj: Any) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2) + "\n")
    return path


def write_table(out_dir, stem: str, columns: Sequence[str], rows: Sequence[Mapping[str, Any]], formats: Iterable[str] = ("csv", "json")) -> list[Path]:
    """``<stem>.csv`` and/or ``<stem>.json`` (a list of row objects in column order)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    formats = set(formats)
    if "csv" in formats:
        written.append(write_csv(out_dir / f"{stem}.csv", columns, rows))
    if "json" in formats:
        written.append(write_json(out_dir / f"{stem}.json", [{c: row[c] for c in columns} for row in rows]))
    return written
