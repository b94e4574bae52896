"""Render EvalReports as RAW / PGD / APGD / CW tables (N and S sub-columns)."""

from __future__ import annotations

import csv
import io
import json
from typing import Sequence

from .errors import ValidationError
from .linking import TASKS, EvalReport

COLUMNS = (
    ("RAW", "P"),
    ("PGD", "N"),
    ("PGD", "S"),
    ("APGD", "N"),
    ("APGD", "S"),
    ("CW", "N"),
    ("CW", "S"),
)
COLUMN_NAMES = tuple("RAW" if a == "RAW" else f"{a}-{t}" for a, t in COLUMNS)


def _table(reports: Sequence[EvalReport]):
    if not reports:
        raise ValidationError("no reports to render")
    rows: dict[tuple[str, str, str], dict[str, float]] = {}
    for r in reports:
        if r.task not in TASKS:
            raise ValidationError(f"unknown task {r.task!r}")
        if (r.attack, r.tier) not in COLUMNS:
            raise ValidationError(f"unknown column {r.attack}-{r.tier}")
        col = COLUMN_NAMES[COLUMNS.index((r.attack, r.tier))]
        cells = rows.setdefault((r.dataset, r.model, r.task), {})
        if col in cells and cells[col] != r.accuracy:
            raise ValidationError(
                f"conflicting reports for {r.dataset}/{r.model}/{r.task}/{col}: {cells[col]} vs {r.accuracy}"
            )
        cells[col] = r.accuracy
    order = sorted(rows, key=lambda k: (k[0], k[1], TASKS.index(k[2])))
    return [(key, rows[key]) for key in order]


def render_report(reports: Sequence[EvalReport], fmt: str = "text") -> bytes:
    table = _table(reports)
    if fmt == "text":
        head = ["Dataset", "Model", "Task", *COLUMN_NAMES]
        body = [
            [d, m, t, *(f"{100 * cells[c]:.1f}" if c in cells else "-" for c in COLUMN_NAMES)]
            for (d, m, t), cells in table
        ]
        widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]
        lines = ["  ".join(cell.rjust(w) if i >= 3 else cell.ljust(w) for i, (cell, w) in enumerate(zip(row, widths)))
                 for row in [head, *body]]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return ("\n".join(line.rstrip() for line in lines) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["dataset", "model", "task", *COLUMN_NAMES])
        for (d, m, t), cells in table:
            writer.writerow([d, m, t, *(repr(cells[c]) if c in cells else "" for c in COLUMN_NAMES)])
        return buf.getvalue().encode()
    if fmt == "json":
        doc = {
            "columns": list(COLUMN_NAMES),
            "rows": [{"dataset": d, "model": m, "task": t, "accuracy": cells} for (d, m, t), cells in table],
            "reports": [r.to_dict() for r in reports],
        }
        return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()
    raise ValidationError(f"unknown report format {fmt!r}")


def load_reports(paths) -> list[EvalReport]:
    out = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            doc = json.load(fh)
        items = doc["reports"] if isinstance(doc, dict) and "reports" in doc else doc
        if isinstance(items, dict):
            items = [items]
        out.extend(EvalReport.from_dict(d) for d in items)
    return out
