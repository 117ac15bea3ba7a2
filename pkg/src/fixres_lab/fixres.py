"""Initial training and the resolution-fixing fine-tune.

Training samples random resized crops at the model's train resolution. The
fix then adapts a trained network to a (usually larger) test resolution:
batch-norm statistics are recomputed on center crops at that resolution and
only a small scope of parameters (by default the classifier) is re-trained
there, with label smoothing.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .eval_harness.metrics import Metrics, argmax_resolution, center_crops, read_samples, resolution_sweep
from .image_pipeline import (
    AugmentConfig,
    LabeledDataset,
    TestPreproc,
    random_resized_crop,
    round_half_up,
    worker_rng,
    worker_seed,
)
from .model import SCOPES, MicroNet, ResolutionError, images_to_batch, split_scope
from .tensor_core import ContractError, NumericError, backward, no_grad, sgd_step, smoothed_cross_entropy

logger = logging.getLogger(__name__)

LR_SCHEDULES = ("constant", "cosine", "step")
_EPOCH_STREAM = 0x5EED_0F_E90C  # separates shuffling streams from augmentation streams


def default_finetune_augment() -> AugmentConfig:
    # near test-time framing: crops keep 80-100% of the image, so apparent
    # object size stays close to what the center crop shows
    return AugmentConfig(area_fraction_range=(0.8, 1.0))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.1
    lr_schedule: str = "cosine"
    milestones: tuple[int, ...] = ()
    gamma: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    label_smoothing_epsilon: float = 0.1
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs must be >= 0, batch_size >= 1 and lr > 0")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if not 0.0 <= self.label_smoothing_epsilon < 1.0:
            raise ValueError("label_smoothing_epsilon must lie in [0, 1)")
        if not 0.0 <= self.momentum < 1.0 or self.weight_decay < 0:
            raise ValueError("momentum must lie in [0, 1) and weight_decay must be >= 0")


@dataclass(frozen=True)
class FinetuneConfig:
    target_res: int = 40
    scope: str = "classifier"
    epochs: int = 10
    lr: float = 0.01
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    label_smoothing_epsilon: float = 0.1
    recalibrate_bn: bool = True
    recalibration_batches: int | None = None  # None: one pass over the whole training split
    crop_ratio: float = 0.875
    augment: AugmentConfig = field(default_factory=default_finetune_augment)
    seed: int = 0

    def validate(self) -> None:
        if self.scope not in SCOPES:
            raise ValueError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs must be >= 0, batch_size >= 1 and lr > 0")
        if not 0.0 <= self.label_smoothing_epsilon < 1.0:
            raise ValueError("label_smoothing_epsilon must lie in [0, 1)")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    top1: float
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    checkpoint: str | None = None

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "loss", "top1", "seconds"])
            for r in self.records:
                writer.writerow([r.epoch, repr(r.loss), repr(r.top1), f"{r.seconds:.3f}"])


def worker_threads() -> int:
    """Worker thread cap from FIXRES_THREADS (default 1, which keeps everything on one thread)."""
    try:
        return max(1, int(os.environ.get("FIXRES_THREADS", "1")))
    except ValueError:
        return 1


def augment_batch(images: np.ndarray, seed: int, stream: int, config: AugmentConfig) -> np.ndarray:
    """Random resized crops of a batch from its own RNG stream (independent of worker scheduling)."""
    rng = worker_rng(seed, stream)
    s = config.out_size
    out = np.empty((len(images), s, s, images.shape[3]), dtype=np.uint8)
    for i, im in enumerate(images):
        out[i] = random_resized_crop(im, rng, config)
    return out


def _epoch_batches(
    data: LabeledDataset, batch_size: int, seed: int, epoch: int, config: AugmentConfig
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    perm = np.random.default_rng(worker_seed(seed ^ _EPOCH_STREAM, epoch)).permutation(len(data))
    starts = range(0, len(data), batch_size)
    n_batches = len(starts)

    def make(b):
        idx = perm[starts[b] : starts[b] + batch_size]
        return augment_batch(data.images[idx], seed, epoch * n_batches + b, config), data.labels[idx]

    threads = worker_threads()
    if threads == 1:
        for b in range(n_batches):
            yield make(b)
    else:
        with ThreadPoolExecutor(threads) as pool:
            yield from pool.map(make, range(n_batches))


def learning_rate(config: TrainConfig, step: int, total_steps: int, epoch: int) -> float:
    if config.lr_schedule == "constant":
        return config.lr
    if config.lr_schedule == "cosine":
        return 0.5 * config.lr * (1.0 + math.cos(math.pi * step / max(1, total_steps)))
    return config.lr * config.gamma ** sum(epoch >= m for m in config.milestones)


def _run_epochs(model, data, epochs, batch_size, seed, augment, lr_at, params, momentum, weight_decay,
                epsilon, forward, what) -> TrainLog:
    log = TrainLog()
    n_batches = math.ceil(len(data) / batch_size)
    total = epochs * n_batches
    step = 0
    for epoch in range(epochs):
        t0 = time.perf_counter()
        loss_sum, correct, seen = 0.0, 0, 0
        for images, labels in _epoch_batches(data, batch_size, seed, epoch, augment):
            logits = forward(images_to_batch(images, model.dtype))
            try:
                loss = smoothed_cross_entropy(logits, labels, epsilon)
            except NumericError as exc:
                raise NumericError(f"{what}: epoch {epoch} step {step}: {exc}") from exc
            backward(loss)
            sgd_step(params, lr_at(step, total, epoch), momentum, weight_decay)
            loss_sum += loss.item() * len(labels)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
            seen += len(labels)
            step += 1
        rec = EpochRecord(epoch, loss_sum / seen, correct / seen, time.perf_counter() - t0)
        logger.info("%s epoch %d loss %.4f top1 %.3f (%.1fs)", what, epoch, rec.loss, rec.top1, rec.seconds)
        log.records.append(rec)
    return log


def train(model: MicroNet, dataset, config: TrainConfig) -> tuple[MicroNet, TrainLog]:
    """Train a copy of ``model`` on random resized crops at its train resolution."""
    config.validate()
    data = read_samples(dataset)
    if data.num_classes != model.config.num_classes:
        raise ContractError(f"dataset has {data.num_classes} classes, model expects {model.config.num_classes}")
    if len(data) == 0:
        raise ContractError("cannot train on an empty dataset")
    out = model.clone()
    augment = config.augment.with_out_size(out.config.train_res)
    params = out.parameters()
    log = _run_epochs(
        out, data, config.epochs, config.batch_size, config.seed, augment,
        lambda step, total, epoch: learning_rate(config, step, total, epoch),
        params, config.momentum, config.weight_decay, config.label_smoothing_epsilon,
        lambda x: out.forward(x, mode="train"), "train",
    )
    out.set_bn_mode("eval")
    return out, log


def recalibrate_batchnorm(
    model: MicroNet,
    dataset,
    target_res: int,
    num_batches: int | None = None,
    batch_size: int = 128,
    crop_ratio: float = 0.875,
) -> MicroNet:
    """Copy of ``model`` whose BN running stats are the exact statistics at ``target_res``.

    Runs center crops through the network in recalibrate mode (batch
    statistics for normalisation) and installs the aggregate mean and
    population variance of every BN input. Weights are untouched.
    """
    if not model.config.supports(target_res):
        raise ResolutionError(f"target resolution {target_res} is not supported by the model")
    data = read_samples(dataset)
    if len(data) == 0:
        raise ContractError("cannot recalibrate batch-norm on an empty dataset")
    out = model.clone()
    preproc = TestPreproc(crop_ratio, target_res)
    for _, bn in out.bn_layers():
        bn.begin_recalibration()
    starts = list(range(0, len(data), batch_size))
    if num_batches is not None:
        starts = starts[: max(1, num_batches)]
    with no_grad():
        for start in starts:
            crops = center_crops(data.images[start : start + batch_size], preproc)
            out.forward(images_to_batch(crops, out.dtype), mode="recalibrate")
    for _, bn in out.bn_layers():
        bn.finish_recalibration()
    return out


def finetune_fixres(model: MicroNet, dataset, config: FinetuneConfig) -> tuple[MicroNet, TrainLog]:
    """Adapt a trained model to ``config.target_res``; returns a new model.

    Only parameters in ``config.scope`` change. Frozen blocks run outside the
    autodiff graph, so with the classifier scope no backbone gradient is ever
    computed. When batch-norm was recalibrated, trainable blocks keep
    normalising with the recalibrated statistics.
    """
    config.validate()
    if not model.config.supports(config.target_res):
        raise ResolutionError(
            f"target resolution {config.target_res} outside [{model.config.min_res}, {model.config.max_res}]"
        )
    data = read_samples(dataset)
    if config.recalibrate_bn:
        out = recalibrate_batchnorm(model, data, config.target_res, config.recalibration_batches,
                                    crop_ratio=config.crop_ratio)
    else:
        out = model.clone()
    _, trainable = split_scope(out, config.scope)
    frozen_blocks = out.frozen_block_count(config.scope)
    bn_mode = "eval" if config.recalibrate_bn else "train"
    log = _run_epochs(
        out, data, config.epochs, config.batch_size, config.seed, config.augment.with_out_size(config.target_res),
        lambda step, total, epoch: config.lr,
        trainable, config.momentum, config.weight_decay, config.label_smoothing_epsilon,
        lambda x: out.forward_partial(x, frozen_blocks, bn_mode), f"finetune@{config.target_res}",
    )
    out.set_bn_mode("eval")
    return out, log


def select_test_resolution(
    model: MicroNet, val_split, res_grid: Sequence[int], preproc: TestPreproc = TestPreproc()
) -> tuple[int, dict[int, Metrics]]:
    """Best validation top-1 over ``res_grid``; ties go to the smaller resolution."""
    grid = sorted(set(res_grid))
    if not grid:
        raise ValueError("empty resolution grid")
    for r in grid:
        if not model.config.supports(r):
            raise ResolutionError(f"grid resolution {r} is not supported by the model")
    curve = resolution_sweep(model, val_split, grid, preproc)
    per_res = dict(curve.points)
    return argmax_resolution({r: m.top1 for r, m in per_res.items()}), per_res


def default_res_grid(train_res: int) -> list[int]:
    """``train_res`` x {0.75, 1, 1.25, 1.5, 1.75, 2}, rounded to multiples of 8."""
    return sorted({max(8, 8 * round_half_up(train_res * f / 8)) for f in (0.75, 1.0, 1.25, 1.5, 1.75, 2.0)})
