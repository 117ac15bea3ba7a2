"""Experiment configuration: typed TOML with unknown keys rejected.

A config file has optional top-level ``dataset_path`` and ``output_dir`` keys
and the tables ``[dataset]``, ``[model]``, ``[train]`` (with
``[train.augment]``), ``[finetune]`` (with ``[finetune.augment]``) and
``[protocol]``. Every table is optional; omitted keys keep their defaults.
"""

from __future__ import annotations

import dataclasses
import sys
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .eval_harness.protocol import SPLIT_NAMES
from .fixres import FinetuneConfig, TrainConfig, default_res_grid
from .image_pipeline import DatasetSpec
from .model import ModelConfig


class ConfigError(ValueError):
    """Malformed, mistyped or inconsistent configuration."""


@dataclass(frozen=True)
class ProtocolConfig:
    train: int = 8000
    val: int = 1000
    test_A: int = 1000
    test_B: int = 1000
    seeds: tuple[int, ...] = (0,)
    grid: tuple[int, ...] = ()  # empty: the default grid around train_res
    widths: tuple[float, ...] = (1.0,)
    selection_split: str = "val"
    allow_test_selection: bool = False
    crop_ratio: float = 0.875
    # > 0: test_B becomes an independent draw with object scales shifted by this much
    test_b_scale_shift: float = 0.0

    def __post_init__(self):
        if min(self.sizes.values()) < 1:
            raise ValueError(f"every split needs a positive size, got {self.sizes}")
        if not self.seeds:
            raise ValueError("protocol.seeds must list at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("protocol.seeds must be distinct")
        if not self.widths or min(self.widths) <= 0:
            raise ValueError("protocol.widths must be non-empty and positive")
        if self.selection_split not in SPLIT_NAMES:
            raise ValueError(f"selection_split must be one of {SPLIT_NAMES}, got {self.selection_split!r}")
        if not 0.0 < self.crop_ratio <= 1.0:
            raise ValueError("crop_ratio must lie in (0, 1]")

    @property
    def sizes(self) -> dict[str, int]:
        return {"train": self.train, "val": self.val, "test_A": self.test_A, "test_B": self.test_B}

    def grid_for(self, train_res: int) -> list[int]:
        return sorted(set(self.grid)) if self.grid else default_res_grid(train_res)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    dataset_path: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    output_dir: str | None = None

    def validate(self) -> None:
        try:
            self.model.validate()
            self.train.validate()
            self.finetune.validate()
            if self.dataset_path is None:
                self.dataset.validate()
                total = self.dataset.num_classes * self.dataset.samples_per_class
                needed = sum(self.protocol.sizes.values())
                if self.protocol.test_b_scale_shift > 0:
                    needed -= self.protocol.test_B
                if needed > total:
                    raise ConfigError(f"split sizes need {needed} samples but the dataset has {total}")
                if self.dataset.num_classes != self.model.num_classes:
                    raise ConfigError("dataset.num_classes and model.num_classes differ")
                if self.dataset.channels != self.model.in_channels:
                    raise ConfigError("dataset.channels and model.in_channels differ")
            for r in self.protocol.grid_for(self.model.train_res):
                if not self.model.supports(r):
                    raise ConfigError(f"grid resolution {r} is not supported by the model")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _coerce(value: Any, hint: Any, where: str, base: Any = None) -> Any:
    origin, args = typing.get_origin(hint), typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], where)
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{where} must be a table")
        return _from_table(hint, value, where, base)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be an array")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{where} must have {len(args)} elements, got {len(value)}")
        return tuple(_coerce(v, a, f"{where}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    raise TypeError(f"unsupported config field type {hint!r}")  # pragma: no cover


def _from_table(cls, table: Mapping[str, Any], where: str, base=None):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls) if not f.name.startswith("_")}
    unknown = sorted(set(table) - known)
    if unknown:
        prefix = f"[{where}] " if where else ""
        raise ConfigError(f"{prefix}unknown key(s): {', '.join(unknown)}")
    base = cls() if base is None else base
    updates = {}
    for key, value in table.items():
        path = f"{where}.{key}" if where else key
        updates[key] = _coerce(value, hints[key], path, getattr(base, key))
    try:
        return dataclasses.replace(base, **updates)
    except ValueError as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def parse_config(data: Mapping[str, Any]) -> ExperimentConfig:
    cfg = _from_table(ExperimentConfig, data, "")
    if "dataset" in data and "dataset_path" in data:
        raise ConfigError("give either a [dataset] table or dataset_path, not both")
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = parse_config(data)
    if cfg.dataset_path is not None and not Path(cfg.dataset_path).is_absolute():
        cfg = dataclasses.replace(cfg, dataset_path=str(path.parent / cfg.dataset_path))
    return cfg


def load_dataset_spec(path) -> DatasetSpec:
    """A dataset spec file: either a bare set of DatasetSpec keys or a ``[dataset]`` table."""
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read spec {path}: {exc.strerror or exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if set(data) == {"dataset"}:
        data = data["dataset"]
    spec = _from_table(DatasetSpec, data, "dataset")
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return spec
