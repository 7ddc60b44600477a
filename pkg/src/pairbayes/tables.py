"""Column tables with plain-text, CSV and JSON renderings.

The plain-text form is a pandoc simple table: each column is one character
wider than its widest cell, columns are separated by two spaces, text is
left-aligned and numbers right-aligned with two decimals.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _format_column(values: Sequence[Any], digits: int) -> list[str]:
    finite = [v for v in values if _is_number(v) and math.isfinite(v)]
    integral = all(float(v).is_integer() for v in finite)
    out = []
    for v in values:
        if v is None or (_is_number(v) and not math.isfinite(v)):
            out.append("NA")
        elif _is_number(v):
            out.append(f"{v:.0f}" if integral else f"{v:.{digits}f}")
        else:
            out.append(str(v))
    return out


@dataclass
class Table:
    """A titled table of rows keyed by column name."""

    columns: list[str]
    rows: list[list[Any]]
    title: str = ""
    notes: list[str] = field(default_factory=list)

    def column(self, name: str) -> list[Any]:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]

    def records(self) -> list[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]

    def text(self, digits: int = 2) -> str:
        cols = [_format_column([r[k] for r in self.rows], digits) for k in range(len(self.columns))]
        numeric = [bool(self.rows) and all(_is_number(r[k]) or r[k] is None for r in self.rows)
                   for k in range(len(self.columns))]
        widths = [max([len(h)] + [len(c) for c in col]) + 1 for h, col in zip(self.columns, cols)]

        def line(cells):
            parts = [c.rjust(w) if num else c.ljust(w) for c, w, num in zip(cells, widths, numeric)]
            return "  ".join(parts).rstrip()

        out = []
        if self.title:
            out += [f"Table: {self.title}", ""]
        out.append(line(self.columns))
        out.append("  ".join("-" * w for w in widths))
        out += [line([col[i] for col in cols]) for i in range(len(self.rows))]
        out += self.notes
        return "\n".join(out) + "\n"

    def csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for r in self.rows:
            writer.writerow(["NA" if v is None else (f"{v:.12g}" if isinstance(v, float) else v)
                             for v in r])
        return buf.getvalue()

    def json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v

        recs = [{k: clean(v) for k, v in rec.items()} for rec in self.records()]
        return json.dumps({"title": self.title, "rows": recs}, indent=2) + "\n"

    def render(self, fmt: str = "text") -> str:
        if fmt == "text":
            return self.text()
        if fmt == "csv":
            return self.csv()
        if fmt == "json":
            return self.json()
        raise ValueError(f"unknown format {fmt!r}")
