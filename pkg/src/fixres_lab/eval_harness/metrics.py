"""Single-crop top-1/top-5 evaluation and test-resolution sweeps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ..image_pipeline import LabeledDataset, TestPreproc, center_crop_preproc
from ..model import MicroNet, ResolutionError, images_to_batch
from ..tensor_core import no_grad

EVAL_BATCH = 256


@dataclass(frozen=True)
class Metrics:
    top1: float
    top5: float
    n: int

    def __post_init__(self):
        if not (0.0 <= self.top1 <= self.top5 <= 1.0):
            raise ValueError(f"inconsistent metrics top1={self.top1} top5={self.top5}")


@dataclass(frozen=True)
class SweepCurve:
    points: tuple[tuple[int, Metrics], ...]

    def __post_init__(self):
        if not self.points:
            raise ValueError("a sweep curve needs at least one resolution")
        res = [r for r, _ in self.points]
        if any(b <= a for a, b in zip(res, res[1:])):
            raise ValueError(f"sweep resolutions must be strictly increasing, got {res}")

    @property
    def resolutions(self) -> list[int]:
        return [r for r, _ in self.points]

    def top1(self) -> dict[int, float]:
        return {r: m.top1 for r, m in self.points}

    def argmax(self) -> int:
        return argmax_resolution(self.top1())


def argmax_resolution(scores: Mapping[int, float]) -> int:
    """Resolution with the best score; ties go to the smallest (cheapest) one."""
    if not scores:
        raise ValueError("empty resolution grid")
    best = max(scores.values())
    return min(r for r, s in scores.items() if s == best)


def topk_hits(logits: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Boolean hits: the label ranks among the ``k`` largest logits.

    Equal logits are ordered by class index, lower first.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.intp)
    n, num_classes = logits.shape
    true = logits[np.arange(n), labels][:, None]
    idx = np.arange(num_classes)[None, :]
    rank = (logits > true).sum(axis=1) + ((logits == true) & (idx < labels[:, None])).sum(axis=1)
    return rank < k


def metrics_from_logits(logits: np.ndarray, labels: np.ndarray) -> Metrics:
    n = len(labels)
    if n == 0:
        raise ValueError("cannot compute metrics on an empty split")
    top1 = int(topk_hits(logits, labels, 1).sum())
    top5 = int(topk_hits(logits, labels, 5).sum())
    return Metrics(top1 / n, top5 / n, n)


def read_samples(split) -> LabeledDataset:
    """Materialise a split (counting the access) or pass a dataset through."""
    if isinstance(split, LabeledDataset):
        return split
    return split.read()


def center_crops(images: np.ndarray, preproc: TestPreproc) -> np.ndarray:
    return np.stack([center_crop_preproc(im, preproc) for im in images])


def predict_logits(model: MicroNet, images: np.ndarray, preproc: TestPreproc) -> np.ndarray:
    if not model.config.supports(preproc.out_size):
        raise ResolutionError(
            f"test resolution {preproc.out_size} outside [{model.config.min_res}, {model.config.max_res}]"
        )
    chunks = []
    with no_grad():
        for start in range(0, len(images), EVAL_BATCH):
            crops = center_crops(images[start : start + EVAL_BATCH], preproc)
            chunks.append(model.forward(images_to_batch(crops, model.dtype), mode="eval").data)
    return np.concatenate(chunks) if chunks else np.zeros((0, model.config.num_classes))


def evaluate(model: MicroNet, split, test_res: int, preproc: TestPreproc = TestPreproc()) -> Metrics:
    """Top-1/top-5 from one center crop per image at ``test_res``."""
    data = read_samples(split)
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty split")
    logits = predict_logits(model, data.images, preproc.with_out_size(test_res))
    return metrics_from_logits(logits, data.labels)


def resolution_sweep(
    model: MicroNet, split, res_grid: Iterable[int], preproc: TestPreproc = TestPreproc()
) -> SweepCurve:
    grid = list(res_grid)
    if not grid:
        raise ValueError("empty resolution grid")
    data = read_samples(split)  # one access for the whole sweep
    return SweepCurve(tuple((r, evaluate(model, data, r, preproc)) for r in grid))
