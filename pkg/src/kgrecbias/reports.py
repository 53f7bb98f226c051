"""Report tables: lossless CSV plus aligned text with a ``*`` on the best value."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path


class ReportError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(s: str):
    for kind in (int, float):
        try:
            return kind(s)
        except ValueError:
            pass
    return s


@dataclass
class Table:
    """Rows of ``(label, values)`` under ``columns`` (first column names the row labels)."""

    title: str
    columns: list[str]
    rows: list[tuple[str, list]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for label, values in self.rows:
            writer.writerow([label] + [_fmt(v) for v in values])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, title: str = "") -> "Table":
        reader = csv.reader(io.StringIO(text))
        columns = next(reader, None)
        if not columns:
            raise ReportError("empty table")
        rows = [(row[0], [_parse(v) for v in row[1:]]) for row in reader if row]
        return cls(title, columns, rows)

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def read_csv(cls, path, title: str = "") -> "Table":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"), title)

    def render_text(self, mark: str | None = "row", digits: int = 3, columns: list[int] | None = None) -> str:
        """Plain-text table; ``mark`` puts ``*`` on each row's (or column's) maximum.

        ``columns`` limits which value columns take part in marking.
        """
        if not self.rows:
            raise ReportError(f"table {self.title!r} has no rows")
        ncol = len(self.columns) - 1
        active = set(range(ncol) if columns is None else columns)
        marked: set[tuple[int, int]] = set()

        def numeric(v):
            return isinstance(v, (int, float)) and not isinstance(v, bool)

        if mark == "row":
            for r, (_, vals) in enumerate(self.rows):
                cand = [(v, c) for c, v in enumerate(vals) if c in active and numeric(v)]
                if cand:
                    best = max(v for v, _ in cand)
                    marked |= {(r, c) for v, c in cand if v == best}
        elif mark == "column":
            for c in active:
                cand = [(vals[c], r) for r, (_, vals) in enumerate(self.rows) if numeric(vals[c])]
                if cand:
                    best = max(v for v, _ in cand)
                    marked |= {(r, c) for v, r in cand if v == best}

        cells = [list(self.columns)]
        for r, (label, vals) in enumerate(self.rows):
            line = [label]
            for c, v in enumerate(vals):
                text = f"{v:.{digits}f}" if isinstance(v, float) else str(v)
                line.append(text + ("*" if (r, c) in marked else ""))
            cells.append(line)
        widths = [max(len(row[i]) for row in cells) for i in range(ncol + 1)]
        out = []
        if self.title:
            out.append(self.title)
        for k, row in enumerate(cells):
            out.append("  ".join(s.ljust(widths[0]) if i == 0 else s.rjust(widths[i]) for i, s in enumerate(row)))
            if k == 0:
                out.append("  ".join("-" * w for w in widths))
        return "\n".join(out) + "\n"


def performance_table(reports) -> Table:
    return Table(
        "Performance of the recommender per KG",
        ["kg", "precision", "recall", "f1", "n", "users"],
        [(r.kg, [r.precision, r.recall, r.f1, r.n, r.users]) for r in reports],
    )


def bias_table(report) -> Table:
    kgs = list(report.p)
    return Table(
        f"Fraction of recommendations per {report.feature}",
        [report.feature] + kgs + ["c_e"],
        [(v, [report.p[kg][v] for kg in kgs] + [report.expected[v]]) for v in report.values],
    )


def genre_table(grid: dict[str, dict[str, float]]) -> Table:
    """``grid[genre][kg]`` F1 values as a genre x KG table."""
    if not grid:
        raise ReportError("empty genre grid")
    kgs = list(next(iter(grid.values())))
    return Table("F1 per genre and KG", ["genre"] + kgs, [(g, [grid[g][kg] for kg in kgs]) for g in grid])
