"""Procedural shapes dataset and the FXDS binary container.

FXDS layout (little-endian): ``b"FXDS"``, u32 version (1), u32 count, u32
height, u32 width, u32 channels, u32 num_classes, then per sample a u16 label
followed by ``height * width * channels`` u8 pixels.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"FXDS"
VERSION = 1
_HEADER = struct.Struct("<4s6I")
_MAX_PAYLOAD = 1 << 40

BACKGROUND = 40.0
FOREGROUND = 215.0
NOISE_SCALE = 64.0  # pixel std-dev at noise_level == 1
MAX_TILT = math.radians(15.0)


class DatasetFormatError(ValueError):
    pass


class BadMagicError(DatasetFormatError):
    pass


class TruncatedError(DatasetFormatError):
    pass


class DimensionOverflowError(DatasetFormatError):
    pass


class UnsupportedVersionError(DatasetFormatError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 8
    samples_per_class: int = 100
    base_resolution: int = 64
    object_scale_range: tuple[float, float] = (0.3, 0.7)
    noise_level: float = 0.1
    seed: int = 0
    channels: int = 1

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.num_classes > len(SHAPES):
            raise ValueError(f"num_classes={self.num_classes} exceeds the {len(SHAPES)} available shape generators")
        if self.samples_per_class < 1:
            raise ValueError(f"samples_per_class must be positive, got {self.samples_per_class}")
        # random crops are sampled from images of at least 8x8 and the
        # dataset must support crops at its own resolution
        if self.base_resolution < 16:
            raise ValueError(f"base_resolution must be at least 16, got {self.base_resolution}")
        lo, hi = self.object_scale_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"object_scale_range must satisfy 0 < lo <= hi <= 1, got {self.object_scale_range}")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ValueError(f"noise_level must lie in [0, 1], got {self.noise_level}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(eq=False)
class LabeledDataset:
    images: np.ndarray  # (N, H, W, C) uint8
    labels: np.ndarray  # (N,) int64
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.dtype != np.uint8:
            raise ValueError(f"images must be an (N, H, W, C) uint8 array, got {self.images.dtype} {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("one label per image required")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    def subset(self, indices) -> LabeledDataset:
        indices = np.asarray(indices, dtype=np.intp)
        return LabeledDataset(self.images[indices], self.labels[indices], self.num_classes)

    def equals(self, other: LabeledDataset) -> bool:
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.images, other.images)
            and np.array_equal(self.labels, other.labels)
        )


# Shape masks on object-normalised coordinates (u right, v down, radius 1).
# Areas at unit radius are spread out so equal-scale classes differ in coverage.
def _disk(u, v):
    return u * u + v * v <= 1.0


def _square(u, v):
    return np.maximum(np.abs(u), np.abs(v)) <= 0.85


def _triangle(u, v):
    return (v <= 0.8) & (v >= -1.0 + 2.0 * np.abs(u)) & (np.abs(u) <= 0.9)


def _ring(u, v):
    r2 = u * u + v * v
    return (r2 <= 1.0) & (r2 >= 0.82**2)


def _cross(u, v):
    au, av = np.abs(u), np.abs(v)
    return ((au <= 0.09) & (av <= 1.0)) | ((av <= 0.09) & (au <= 1.0))


def _diamond(u, v):
    return np.abs(u) + np.abs(v) <= 1.0


def _frame(u, v):
    m = np.maximum(np.abs(u), np.abs(v))
    return (m <= 0.95) & (m >= 0.75)


def _hbars(u, v):
    band = np.floor((v + 1.0) * 2.5).astype(int)
    return (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0) & (band % 2 == 0)


def _half_disk(u, v):
    return (u * u + v * v <= 1.0) & (v >= 0.0)


def _ellipse(u, v):
    return (u * u + (v / 0.5) ** 2) <= 1.0


def _xshape(u, v):
    a, b = (u + v) / math.sqrt(2.0), (u - v) / math.sqrt(2.0)
    aa, ab = np.abs(a), np.abs(b)
    return ((aa <= 0.17) & (ab <= 1.0)) | ((ab <= 0.17) & (aa <= 1.0))


SHAPES = {
    "disk": _disk,
    "square": _square,
    "triangle": _triangle,
    "ring": _ring,
    "cross": _cross,
    "diamond": _diamond,
    "frame": _frame,
    "hbars": _hbars,
    "half_disk": _half_disk,
    "ellipse": _ellipse,
    "xshape": _xshape,
}
SHAPE_NAMES = tuple(SHAPES)


def render_shape(name: str, res: int, scale: float, center: tuple[float, float], tilt: float) -> np.ndarray:
    """Anti-aliased coverage in [0, 1] of one shape on a ``res x res`` canvas (2x2 supersampling)."""
    radius = 0.5 * scale * res
    offs = (np.arange(2 * res) + 0.5) / 2.0
    yy, xx = np.meshgrid(offs, offs, indexing="ij")
    dx, dy = (xx - center[1]) / radius, (yy - center[0]) / radius
    c, s = math.cos(tilt), math.sin(tilt)
    u, v = c * dx + s * dy, -s * dx + c * dy
    mask = SHAPES[name](u, v).astype(np.float64)
    return mask.reshape(res, 2, res, 2).mean(axis=(1, 3))


def synth_dataset(spec: DatasetSpec) -> LabeledDataset:
    """Render ``samples_per_class`` images of each class; deterministic in ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.num_classes * spec.samples_per_class
    labels = rng.permutation(np.repeat(np.arange(spec.num_classes), spec.samples_per_class))
    res = spec.base_resolution
    images = np.empty((n, res, res, spec.channels), dtype=np.uint8)
    lo, hi = spec.object_scale_range
    for i, label in enumerate(labels):
        scale = rng.uniform(lo, hi)
        slack = 0.25 * (1.0 - scale) * res
        center = (res / 2 + rng.uniform(-slack, slack), res / 2 + rng.uniform(-slack, slack))
        tilt = rng.uniform(-MAX_TILT, MAX_TILT)
        cover = render_shape(SHAPE_NAMES[label], res, scale, center, tilt)
        img = BACKGROUND + (FOREGROUND - BACKGROUND) * cover
        noise = rng.standard_normal((res, res, spec.channels)) if spec.noise_level > 0 else 0.0
        img = img[:, :, None] + spec.noise_level * NOISE_SCALE * noise
        images[i] = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
    return LabeledDataset(images, labels.astype(np.int64), spec.num_classes)


def write_dataset(dataset: LabeledDataset, path) -> None:
    n, h, w, c = dataset.images.shape
    if dataset.num_classes > 0xFFFF:
        raise DimensionOverflowError(f"num_classes {dataset.num_classes} does not fit the u16 label field")
    record = np.dtype([("label", "<u2"), ("pixels", "u1", (h * w * c,))])
    body = np.empty(n, dtype=record)
    body["label"] = dataset.labels
    body["pixels"] = dataset.images.reshape(n, -1)
    header = _HEADER.pack(MAGIC, VERSION, n, h, w, c, dataset.num_classes)
    Path(path).write_bytes(header + body.tobytes())


def read_dataset(path) -> LabeledDataset:
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedError(f"{path}: header needs {_HEADER.size} bytes, file has {len(buf)}")
    _, version, n, h, w, c, num_classes = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported FXDS version {version}")
    pixels = h * w * c
    if h == 0 or w == 0 or c not in (1, 3) or pixels > 0xFFFFFFFF:
        raise DimensionOverflowError(f"{path}: invalid image dimensions {h}x{w}x{c}")
    expected = n * (2 + pixels)
    if expected > _MAX_PAYLOAD:
        raise DimensionOverflowError(f"{path}: {n} samples of {pixels} pixels overflow the payload limit")
    actual = len(buf) - _HEADER.size
    if actual < expected:
        raise TruncatedError(f"{path}: truncated sample section, expected {expected} bytes, got {actual}")
    if actual > expected:
        raise DatasetFormatError(f"{path}: {actual - expected} trailing bytes after {n} samples")
    record = np.dtype([("label", "<u2"), ("pixels", "u1", (pixels,))])
    body = np.frombuffer(buf, dtype=record, count=n, offset=_HEADER.size)
    labels = body["label"].astype(np.int64)
    if n and labels.max() >= num_classes:
        raise DatasetFormatError(f"{path}: label {labels.max()} out of range for {num_classes} classes")
    images = body["pixels"].reshape(n, h, w, c).copy()
    return LabeledDataset(images, labels, num_classes)
