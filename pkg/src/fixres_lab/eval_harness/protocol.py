"""Split hygiene and the dual test-set protocol.

Test resolutions are chosen on ``val`` and then reported once on ``test_A``
and once on ``test_B``. ``test_B`` plays the role of a never-tuned-on test
set: each model may read it exactly once, which is enforced at read time.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..image_pipeline import LabeledDataset, TestPreproc
from ..model import MicroNet, num_params
from .metrics import Metrics, evaluate

SPLIT_NAMES = ("train", "val", "test_A", "test_B")


class ProtocolViolation(RuntimeError):
    """The evaluation pipeline broke the split-usage rules."""


@dataclass(eq=False)
class Split:
    name: str
    dataset: LabeledDataset
    indices: np.ndarray
    reads: int = 0
    read_limit: int | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __len__(self) -> int:
        return len(self.indices)

    def read(self) -> LabeledDataset:
        with self._lock:
            if self.read_limit is not None and self.reads >= self.read_limit:
                raise ProtocolViolation(
                    f"split {self.name!r} read {self.reads + 1} times; the protocol allows {self.read_limit}"
                )
            self.reads += 1
        return self.dataset.subset(self.indices)


@dataclass(eq=False)
class SplitProtocol:
    splits: dict[str, Split]

    def __post_init__(self):
        missing = [s for s in SPLIT_NAMES if s not in self.splits]
        if missing:
            raise ValueError(f"protocol is missing split(s) {missing}")
        items = list(self.splits.values())
        for i, a in enumerate(items):
            for b in items[i + 1 :]:
                if a.dataset is b.dataset and np.intersect1d(a.indices, b.indices).size:
                    raise ProtocolViolation(f"splits {a.name!r} and {b.name!r} share samples")

    def __getitem__(self, name: str) -> Split:
        if name not in self.splits:
            raise ValueError(f"unknown split {name!r}; expected one of {tuple(self.splits)}")
        return self.splits[name]


def make_protocol(
    dataset: LabeledDataset,
    sizes: Mapping[str, int],
    seed: int,
    test_b_dataset: LabeledDataset | None = None,
) -> SplitProtocol:
    """Carve disjoint splits out of ``dataset`` after a seeded shuffle.

    With ``test_b_dataset`` (an independent draw of the generator), ``test_B``
    is taken from it instead.
    """
    if any(sizes.get(s, 0) < 1 for s in SPLIT_NAMES):
        raise ValueError(f"every split needs a positive size, got {dict(sizes)}")
    own = [s for s in SPLIT_NAMES if test_b_dataset is None or s != "test_B"]
    total = sum(sizes[s] for s in own)
    if total > len(dataset):
        raise ValueError(f"split sizes sum to {total} but the dataset has {len(dataset)} samples")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    splits, start = {}, 0
    for name in own:
        splits[name] = Split(name, dataset, np.sort(perm[start : start + sizes[name]]))
        start += sizes[name]
    if test_b_dataset is not None:
        if sizes["test_B"] > len(test_b_dataset):
            raise ValueError("test_B dataset is smaller than the requested split")
        splits["test_B"] = Split("test_B", test_b_dataset, np.arange(sizes["test_B"]))
    return SplitProtocol({name: splits[name] for name in SPLIT_NAMES})


@dataclass(frozen=True)
class ModelEntry:
    name: str
    model: MicroNet
    grid: tuple[int, ...] | None = None  # overrides the protocol grid, e.g. (train_res,) for a baseline


@dataclass(frozen=True)
class GapRow:
    name: str
    params: int
    train_res: int
    test_res: int
    selected_on: str
    test_a: Metrics
    test_b: Metrics

    @property
    def top1_a(self) -> float:
        return self.test_a.top1

    @property
    def top1_b(self) -> float:
        return self.test_b.top1

    @property
    def gap(self) -> float:
        return self.test_a.top1 - self.test_b.top1


@dataclass(frozen=True)
class GapReport:
    rows: tuple[GapRow, ...]

    def scatter_rows(self) -> list[tuple[float, float]]:
        return [(r.top1_a, r.top1_b) for r in self.rows]

    def by_name(self) -> dict[str, GapRow]:
        return {r.name: r for r in self.rows}


def run_protocol(
    models: Sequence[ModelEntry],
    protocol: SplitProtocol,
    grid: Sequence[int],
    preproc: TestPreproc = TestPreproc(),
    selection_split: str = "val",
    allow_test_selection: bool = False,
) -> GapReport:
    """Select each model's test resolution, then report it on test_A and test_B.

    Selecting on ``test_A`` inflates its score; it is rejected unless
    ``allow_test_selection`` is set (used to measure that inflation).
    Selecting on ``test_B`` always fails because it would be read twice.
    """
    from ..fixres import select_test_resolution

    if selection_split == "train" or selection_split not in SPLIT_NAMES:
        raise ProtocolViolation(f"test resolution cannot be selected on {selection_split!r}")
    if selection_split == "test_A" and not allow_test_selection:
        raise ProtocolViolation("selecting on test_A and reporting on test_A hides overfitting")
    test_b = protocol["test_B"]
    rows = []
    for entry in models:
        test_b.read_limit = test_b.reads + 1
        try:
            model_grid = list(entry.grid) if entry.grid is not None else list(grid)
            chosen, _ = select_test_resolution(entry.model, protocol[selection_split], model_grid, preproc)
            m_a = evaluate(entry.model, protocol["test_A"], chosen, preproc)
            m_b = evaluate(entry.model, test_b, chosen, preproc)
        finally:
            test_b.read_limit = None
        rows.append(
            GapRow(entry.name, num_params(entry.model), entry.model.config.train_res, chosen, selection_split, m_a, m_b)
        )
    return GapReport(tuple(rows))
