"""Deterministic CSV / JSON serialization of report bundles."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .experiments import ReportBundle

FORMATS = ("csv", "json")


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "item"):
        return _cell(value.item())
    return "" if value is None else str(value)


def render_report(bundle, fmt="json"):
    """The report as text. JSON carries everything; CSV carries the tables only.

    CSV is long format, one value per line: ``table,row,column,value``.
    """
    fmt = str(fmt).lower()
    if fmt == "json":
        return json.dumps(_clean(bundle.as_dict()), sort_keys=True, indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["table", "row", "column", "value"])
    for name in sorted(bundle.tables):
        table = bundle.tables[name]
        for i, row in enumerate(table["rows"]):
            for col, value in zip(table["columns"], row):
                w.writerow([name, i, col, _cell(value)])
    return out.getvalue()


def emit_report(bundle, fmt="json", path=None):
    """Write the rendered report to ``path`` (bytes are identical for identical bundles)."""
    text = render_report(bundle, fmt)
    if path is not None:
        Path(path).write_bytes(text.encode("utf-8"))
    return text


def load_report(path):
    """Read a JSON report back into a ``ReportBundle``."""
    return ReportBundle.from_dict(json.loads(Path(path).read_text()))
