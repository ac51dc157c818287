"""Tables as CSV, Markdown or JSON lines.

CSV and Markdown print floats with 4 decimals; JSON lines keep full
precision.  Column order is the key order of the first row.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from ..errors import DataError
from .experiment import RejectionTable

FORMATS = ("csv", "md", "jsonl")
EXTENSIONS = {"csv": ".csv", "md": ".md", "jsonl": ".jsonl"}


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.4f}"
    return str(v)


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _level_tag(a: float) -> str:
    return f"{100 * a:g}pct"


def table_rows(table: RejectionTable) -> list[dict]:
    """One flat record per grid point."""
    rows = []
    for r in table.rows:
        p = r.point
        rec = {"test": p.test_id, "target": p.target, "n": p.n, "d_lambda": p.d_lambda,
               "d_tau": p.d_tau if p.test_id == "W3" else None, "h": p.h, "basis": p.basis,
               "error": p.error_dist, "alternative": p.alternative, "reps": r.reps,
               "failures": r.failures, "status": "failed" if r.failed else "ok"}
        for a, v in zip(table.plan.levels, r.asy_rates):
            rec[f"asy_{_level_tag(a)}"] = v
        for a, v in zip(table.plan.levels, r.chi_rates):
            rec[f"chi_{_level_tag(a)}"] = v
        for a, v in zip(table.plan.levels, r.chi_se):
            rec[f"se_chi_{_level_tag(a)}"] = v
        rec["stat_mean"] = r.stat_mean
        rec["stat_var"] = r.stat_var
        rows.append(rec)
    return rows


def render(rows: list[dict], fmt: str) -> str:
    if fmt not in FORMATS:
        raise DataError(f"unknown output format {fmt!r}; choose from {FORMATS}")
    if not rows:
        return ""
    cols = list(rows[0])
    if fmt == "jsonl":
        return "".join(json.dumps({k: _json_value(r.get(k)) for k in cols}) + "\n" for r in rows)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(k)) for k in cols])
        return buf.getvalue()
    lines = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
    for r in rows:
        lines.append("| " + " | ".join(_cell(r.get(k)) for k in cols) + " |")
    return "\n".join(lines) + "\n"


def footnotes(table: RejectionTable) -> list[str]:
    notes = []
    for r in table.rows:
        if r.failures:
            p = r.point
            notes.append(f"{p.test_id} n={p.n} d_lambda={p.d_lambda} h={p.h} {p.error_dist}: "
                         f"{r.failures} failed replication(s); first: {r.first_error}")
    return notes


def emit(rows: list[dict], fmt: str, path=None, stream=None, notes=()) -> str:
    """Render ``rows`` and write them to ``path`` (or ``stream``).

    Markdown output carries failure notes as footnotes; other formats leave
    them to the caller.
    """
    text = render(rows, fmt)
    if fmt == "md" and notes:
        text += "\n" + "".join(f"- {n}\n" for n in notes)
    if path is not None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc.strerror}") from exc
    elif stream is not None:
        stream.write(text)
    return text
