"""Report emitters: results table (markdown + CSV), sweep/gap CSVs and frontier plot data."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable

from .metrics import SweepCurve
from .protocol import GapReport

TABLE_COLUMNS = ("model", "variant", "params", "train_res", "test_res", "top1", "top5")
TABLE_HEADER = ("Model", "Variant", "#params", "train res", "test res", "Top-1 (%)", "Top-5 (%)")
SWEEP_COLUMNS = ("model", "test_res", "top1", "top5", "n")
GAP_COLUMNS = ("model", "params", "top1_A", "top1_B", "gap")
FRONTIER_COLUMNS = ("name", "params", "top1")
VARIANTS = ("baseline", "fixres")


@dataclass(frozen=True)
class TableRecord:
    model: str
    variant: str
    params: int
    train_res: int
    test_res: int
    top1: float  # fraction in [0, 1]
    top5: float


def format_percent(fraction: float) -> str:
    """Percentage with one decimal, halves rounded away from zero."""
    value = Decimal(repr(fraction)) * 100
    return str(value.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def format_params(count: int) -> str:
    for unit, scale in (("M", 10**6), ("K", 10**3)):
        if count >= scale:
            text = str((Decimal(count) / scale).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))
            return text.removesuffix(".0") + unit
    return str(count)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


def emit_table(records: Iterable[TableRecord]) -> tuple[str, str]:
    """Markdown table and CSV with one row per (model, variant)."""
    records = list(records)
    for r in records:
        if r.variant not in VARIANTS:
            raise ValueError(f"unknown variant {r.variant!r}")
    lines = ["| " + " | ".join(TABLE_HEADER) + " |", "|" + "|".join("---" for _ in TABLE_HEADER) + "|"]
    for r in records:
        cells = (r.model, r.variant, format_params(r.params), str(r.train_res), str(r.test_res),
                 format_percent(r.top1), format_percent(r.top5))
        lines.append("| " + " | ".join(cells) + " |")
    markdown = "\n".join(lines) + "\n"
    rows = [(r.model, r.variant, r.params, r.train_res, r.test_res, repr(r.top1), repr(r.top5)) for r in records]
    return markdown, _csv_text(TABLE_COLUMNS, rows)


def parse_table_csv(text: str) -> list[TableRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != TABLE_COLUMNS:
        raise ValueError(f"table CSV columns {reader.fieldnames} != {TABLE_COLUMNS}")
    return [
        TableRecord(row["model"], row["variant"], int(row["params"]), int(row["train_res"]),
                    int(row["test_res"]), float(row["top1"]), float(row["top5"]))
        for row in reader
    ]


def emit_frontier(records: Iterable[tuple[str, int, float]]) -> str:
    """Accuracy-vs-size plot data, sorted by parameter count then name."""
    rows = sorted(records, key=lambda r: (r[1], r[0]))
    return _csv_text(FRONTIER_COLUMNS, [(name, params, repr(top1)) for name, params, top1 in rows])


def sweep_csv(model_name: str, curve: SweepCurve) -> str:
    return sweeps_csv([(model_name, curve)])


def sweeps_csv(curves: Iterable[tuple[str, SweepCurve]]) -> str:
    """Several models' sweeps under one header, in the given order."""
    rows = [(name, r, repr(m.top1), repr(m.top5), m.n) for name, curve in curves for r, m in curve.points]
    return _csv_text(SWEEP_COLUMNS, rows)


def gap_csv(report: GapReport) -> str:
    rows = [(r.name, r.params, repr(r.top1_a), repr(r.top1_b), repr(r.gap)) for r in report.rows]
    return _csv_text(GAP_COLUMNS, rows)
