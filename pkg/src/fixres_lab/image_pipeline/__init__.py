"""Train/test crop pipelines, bilinear resampling and the procedural dataset."""

from .dataset import (
    SHAPE_NAMES,
    BadMagicError,
    DatasetFormatError,
    DatasetSpec,
    DimensionOverflowError,
    LabeledDataset,
    TruncatedError,
    UnsupportedVersionError,
    read_dataset,
    render_shape,
    synth_dataset,
    write_dataset,
)
from .transforms import (
    AugmentConfig,
    RoC,
    TestPreproc,
    center_crop_geometry,
    center_crop_preproc,
    center_crop_roc,
    crop_resize,
    random_resized_crop,
    resize_bilinear,
    round_half_up,
    sample_roc,
    worker_rng,
    worker_seed,
)

__all__ = [
    "SHAPE_NAMES",
    "AugmentConfig",
    "BadMagicError",
    "DatasetFormatError",
    "DatasetSpec",
    "DimensionOverflowError",
    "LabeledDataset",
    "RoC",
    "TestPreproc",
    "TruncatedError",
    "UnsupportedVersionError",
    "center_crop_geometry",
    "center_crop_preproc",
    "center_crop_roc",
    "crop_resize",
    "random_resized_crop",
    "read_dataset",
    "render_shape",
    "resize_bilinear",
    "round_half_up",
    "sample_roc",
    "synth_dataset",
    "worker_rng",
    "worker_seed",
    "write_dataset",
]
