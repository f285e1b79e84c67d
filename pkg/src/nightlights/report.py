"""Cross-scope summary table: growth and persistence per period."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .config import period_tag

NAN_TEXT = "NaN"


def fmt(value: float | None, decimals: int) -> str:
    if value is None or not math.isfinite(value):
        return NAN_TEXT
    text = f"{value:.{decimals}f}"
    # never print a signed zero
    return text[1:] if text.startswith("-") and float(text) == 0 else text


@dataclass(frozen=True)
class ReportRow:
    """One scope's table row; each tuple holds one value per period.

    Persistence values are in percent, growth in percent per year.
    """

    name: str
    y_hat: Sequence[float]
    sigma_y: Sequence[float]
    a_pp: Sequence[float]
    a_mm: Sequence[float]
    a_00: Sequence[float]


def report_header(periods: Sequence[tuple[int, int]]) -> list[str]:
    tags = [period_tag(p) for p in periods]
    cols = ["name"]
    for prefix in ("y", "sy", "app", "amm", "a00"):
        cols += [prefix + t for t in tags]
    return cols


def report_cells(row: ReportRow) -> list[str]:
    cells = [row.name]
    cells += [fmt(v, 2) for v in row.y_hat]
    for group in (row.sigma_y, row.a_pp, row.a_mm, row.a_00):
        cells += [fmt(v, 1) for v in group]
    return cells


def _quote(cell: str) -> str:
    if any(c in cell for c in ',"\n'):
        return '"' + cell.replace('"', '""') + '"'
    return cell


def report_text(rows: Iterable[ReportRow], periods: Sequence[tuple[int, int]]) -> str:
    lines = [",".join(report_header(periods))]
    for row in rows:
        cells = report_cells(row)
        if len(cells) != len(lines[0].split(",")):
            raise ValueError(f"row {row.name!r} does not have one value per period")
        lines.append(",".join(_quote(c) for c in cells))
    return "\n".join(lines) + "\n"


def write_report(path, rows: Iterable[ReportRow], periods: Sequence[tuple[int, int]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(report_text(rows, periods))
