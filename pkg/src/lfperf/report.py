"""Bit-stable CSV/JSON report emission."""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from typing import Any, Sequence

SIG_DIGITS = 9


class ReportError(OSError):
    """The destination cannot be written."""


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int,)) and not isinstance(value, bool):
        return str(value)
    if isinstance(value, float) or hasattr(value, "__float__") and not isinstance(value, str):
        x = float(value)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, f".{SIG_DIGITS}g")
    return str(value)


def _json_value(value: Any) -> Any:
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, float) or hasattr(value, "__float__"):
        x = float(value)
        return float(format(x, f".{SIG_DIGITS}g")) if math.isfinite(x) else None
    if isinstance(value, (list, tuple)):
        return [_json_value(v) for v in value]
    return str(value)


def render(rows: Sequence[dict], fmt: str = "csv", columns: Sequence[str] | None = None) -> str:
    if columns is None:
        if not rows:
            raise ValueError("columns required for an empty report")
        columns = list(rows[0])
    columns = list(columns)
    for row in rows:
        if list(row) != columns and set(row) != set(columns):
            raise ValueError("rows do not share a schema")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row[c]) for c in columns])
        return buf.getvalue()
    if fmt == "json":
        objs = [{c: _json_value(row[c]) for c in columns} for row in rows]
        return json.dumps(objs, indent=2) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def write_text(text: str, destination: str | None) -> None:
    if destination in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        with open(destination, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportError(exc.errno, f"cannot write {destination}: {exc.strerror}") from None


def emit_report(rows: Sequence[dict], fmt: str = "csv", destination: str | None = None,
                columns: Sequence[str] | None = None) -> None:
    """Write ``rows`` as CSV (header always present) or a JSON array of objects."""
    write_text(render(rows, fmt, columns), destination)


def write_json(obj: Any, destination: str | None) -> None:
    write_text(json.dumps(_json_value_deep(obj), indent=2, sort_keys=True) + "\n", destination)


def _json_value_deep(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _json_value_deep(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_value_deep(v) for v in obj]
    return _json_value(obj)
