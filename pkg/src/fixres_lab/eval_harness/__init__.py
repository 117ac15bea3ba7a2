"""Measurement protocol: single-crop metrics, resolution sweeps, dual test sets, reports."""

from .metrics import (
    Metrics,
    SweepCurve,
    argmax_resolution,
    evaluate,
    metrics_from_logits,
    predict_logits,
    resolution_sweep,
    topk_hits,
)
from .protocol import (
    SPLIT_NAMES,
    GapReport,
    GapRow,
    ModelEntry,
    ProtocolViolation,
    Split,
    SplitProtocol,
    make_protocol,
    run_protocol,
)
from .reports import (
    TableRecord,
    emit_frontier,
    emit_table,
    format_params,
    format_percent,
    gap_csv,
    parse_table_csv,
    sweep_csv,
    sweeps_csv,
)

__all__ = [
    "SPLIT_NAMES",
    "GapReport",
    "GapRow",
    "Metrics",
    "ModelEntry",
    "ProtocolViolation",
    "Split",
    "SplitProtocol",
    "SweepCurve",
    "TableRecord",
    "argmax_resolution",
    "emit_frontier",
    "emit_table",
    "evaluate",
    "format_params",
    "format_percent",
    "gap_csv",
    "make_protocol",
    "metrics_from_logits",
    "parse_table_csv",
    "predict_logits",
    "resolution_sweep",
    "run_protocol",
    "sweep_csv",
    "sweeps_csv",
    "topk_hits",
]
