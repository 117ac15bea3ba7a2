"""End-to-end runs: data, baseline training, resolution fix and the dual-test-set report.

One *run seed* ``s`` fixes everything random in a run: the synthetic draw
(``dataset.seed + s``), the split shuffle, model initialisation and the
training/fine-tuning streams (``train.seed + s``, ``finetune.seed + s``).
"""

from __future__ import annotations

import dataclasses
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import ExperimentConfig
from .eval_harness import (
    GapReport,
    GapRow,
    ModelEntry,
    SplitProtocol,
    SweepCurve,
    TableRecord,
    emit_frontier,
    emit_table,
    gap_csv,
    make_protocol,
    resolution_sweep,
    run_protocol,
    sweeps_csv,
)
from .fixres import TrainLog, finetune_fixres, train, worker_threads
from .image_pipeline import LabeledDataset, TestPreproc, read_dataset, synth_dataset
from .model import MicroNet, build_model, num_params

logger = logging.getLogger(__name__)

TEST_B_STREAM = 0x7E57_B


def load_data(cfg: ExperimentConfig, seed: int) -> SplitProtocol:
    p = cfg.protocol
    if cfg.dataset_path is not None:
        data = read_dataset(cfg.dataset_path)
        if data.num_classes != cfg.model.num_classes:
            raise ValueError(f"{cfg.dataset_path} has {data.num_classes} classes, model expects {cfg.model.num_classes}")
        test_b = None
    else:
        spec = dataclasses.replace(cfg.dataset, seed=cfg.dataset.seed + seed)
        data = synth_dataset(spec)
        test_b = None
        if p.test_b_scale_shift > 0:
            lo, hi = spec.object_scale_range
            shift = p.test_b_scale_shift
            test_b = synth_dataset(dataclasses.replace(
                spec,
                seed=spec.seed ^ TEST_B_STREAM,
                samples_per_class=math.ceil(p.test_B / spec.num_classes),
                object_scale_range=(min(1.0, lo + shift), min(1.0, hi + shift)),
            ))
    if test_b is None and p.test_b_scale_shift > 0:
        raise ValueError("test_b_scale_shift needs a synthesized dataset")
    return make_protocol(data, p.sizes, seed, test_b_dataset=test_b)


def model_name(width: float, seed: int) -> str:
    return f"MicroNet-w{width:g}/s{seed}"


def train_baseline(cfg: ExperimentConfig, train_data, seed: int, width: float | None = None):
    model_cfg = cfg.model if width is None else dataclasses.replace(cfg.model, width_mult=width)
    model = build_model(model_cfg, seed=seed)
    return train(model, train_data, dataclasses.replace(cfg.train, seed=cfg.train.seed + seed))


def finetune_at(cfg: ExperimentConfig, model: MicroNet, train_data, target_res: int, seed: int):
    ft_cfg = dataclasses.replace(cfg.finetune, target_res=target_res, seed=cfg.finetune.seed + seed,
                                 crop_ratio=cfg.protocol.crop_ratio)
    return finetune_fixres(model, train_data, ft_cfg)


@dataclass
class ModelRun:
    name: str
    width: float
    baseline: MicroNet
    fixres: MicroNet
    at_train_res: GapRow
    selected: GapRow
    fixed: GapRow
    val_curve: SweepCurve
    train_log: TrainLog
    finetune_log: TrainLog
    finetune_seconds: float  # recalibration plus fine-tuning, wall clock


@dataclass
class SeedRun:
    seed: int
    protocol: SplitProtocol
    train_data: LabeledDataset
    models: list[ModelRun]


def run_seed(cfg: ExperimentConfig, seed: int) -> SeedRun:
    """Train, select on the configured split, fix, and report each model width for one seed."""
    protocol = load_data(cfg, seed)
    train_data = protocol["train"].read()
    preproc = TestPreproc(cfg.protocol.crop_ratio, cfg.model.train_res)
    grid = cfg.protocol.grid_for(cfg.model.train_res)
    p = cfg.protocol
    runs = []
    for width in p.widths:
        name = model_name(width, seed)
        base, train_log = train_baseline(cfg, train_data, seed, width)
        val_curve = resolution_sweep(base, protocol["val"], grid, preproc)
        train_res = base.config.train_res
        at_train, selected = run_protocol(
            [ModelEntry(f"{name}/baseline@train_res", base, grid=(train_res,)), ModelEntry(f"{name}/baseline", base)],
            protocol, grid, preproc, p.selection_split, p.allow_test_selection,
        ).rows
        t0 = time.perf_counter()
        fixed_model, ft_log = finetune_at(cfg, base, train_data, selected.test_res, seed)
        ft_seconds = time.perf_counter() - t0
        (fixed,) = run_protocol(
            [ModelEntry(f"{name}/fixres", fixed_model, grid=(selected.test_res,))],
            protocol, grid, preproc, p.selection_split, p.allow_test_selection,
        ).rows
        logger.info("%s: train_res %d top1_B %.3f | selected %d top1_B %.3f | fixres top1_B %.3f",
                    name, train_res, at_train.top1_b, selected.test_res, selected.top1_b, fixed.top1_b)
        runs.append(ModelRun(name, width, base, fixed_model, at_train, selected, fixed, val_curve,
                             train_log, ft_log, ft_seconds))
    return SeedRun(seed, protocol, train_data, runs)


@dataclass(frozen=True)
class ProtocolOutputs:
    gap_csv: str
    table_md: str
    table_csv: str
    frontier_csv: str
    sweep_csv: str
    summary: str

    FILES = {"gap.csv": "gap_csv", "table.md": "table_md", "table.csv": "table_csv",
             "frontier.csv": "frontier_csv", "sweep.csv": "sweep_csv"}

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for fname, attr in self.FILES.items():
            path = out / fname
            path.write_text(getattr(self, attr))
            paths.append(path)
        return paths


def summarize(runs: list[SeedRun]) -> ProtocolOutputs:
    rows, records, frontier, curves = [], [], [], []
    for run in runs:
        for m in run.models:
            rows += [m.at_train_res, m.selected, m.fixed]
            params = num_params(m.baseline)
            train_res = m.baseline.config.train_res
            for variant, row in (("baseline", m.at_train_res), ("fixres", m.fixed)):
                records.append(TableRecord(m.name, variant, params, train_res, row.test_res,
                                           row.test_a.top1, row.test_a.top5))
                frontier.append((f"{m.name}/{variant}", params, row.test_a.top1))
            curves.append((m.name, m.val_curve))
    markdown, table = emit_table(records)
    gain = statistics.median(m.fixed.top1_b - m.at_train_res.top1_b for r in runs for m in r.models)
    summary = (f"protocol runs={len(runs)} models={len(rows)} "
               f"median_fixres_gain_top1_B={gain:+.4f}")
    return ProtocolOutputs(
        gap_csv=gap_csv(GapReport(tuple(rows))),
        table_md=markdown,
        table_csv=table,
        frontier_csv=emit_frontier(frontier),
        sweep_csv=sweeps_csv(curves),
        summary=summary,
    )


def run_experiment(cfg: ExperimentConfig) -> ProtocolOutputs:
    """All seeds of the protocol; with FIXRES_THREADS > 1 seeds run concurrently, merged in seed order."""
    seeds = list(cfg.protocol.seeds)
    threads = min(worker_threads(), len(seeds))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            runs = list(pool.map(lambda s: run_seed(cfg, s), seeds))
    else:
        runs = [run_seed(cfg, s) for s in seeds]
    return summarize(runs)
