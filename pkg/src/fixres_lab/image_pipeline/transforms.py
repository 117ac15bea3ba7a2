"""Train-time and test-time crop geometry.

Images are ``(H, W, C)`` uint8 arrays with C in {1, 3}. Training samples a
random Region of Classification (RoC) and resizes it to a fixed square;
testing resizes the shorter side and takes the centred square. The two
pipelines look at regions of different size, which changes the apparent size
of objects between training and testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import kernels

MAX_ROC_ATTEMPTS = 10


@dataclass(frozen=True)
class RoC:
    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h

    def within(self, height: int, width: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.w >= 1 and self.h >= 1 and (
            self.x + self.w <= width and self.y + self.h <= height
        )


@dataclass(frozen=True)
class AugmentConfig:
    area_fraction_range: tuple[float, float] = (0.08, 1.0)
    aspect_ratio_range: tuple[float, float] = (3 / 4, 4 / 3)
    flip_probability: float = 0.5
    out_size: int = 32

    def __post_init__(self):
        lo, hi = self.area_fraction_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"area_fraction_range must satisfy 0 < lo <= hi <= 1, got {self.area_fraction_range}")
        alo, ahi = self.aspect_ratio_range
        if not 0.0 < alo <= 1.0 <= ahi:
            raise ValueError(f"aspect_ratio_range must satisfy lo <= 1 <= hi, got {self.aspect_ratio_range}")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError(f"flip_probability must lie in [0, 1], got {self.flip_probability}")
        if self.out_size < 8:
            raise ValueError(f"out_size must be at least 8, got {self.out_size}")

    def with_out_size(self, out_size: int) -> AugmentConfig:
        return AugmentConfig(self.area_fraction_range, self.aspect_ratio_range, self.flip_probability, out_size)


@dataclass(frozen=True)
class TestPreproc:
    __test__ = False  # not a pytest class

    crop_ratio: float = 0.875
    out_size: int = 32

    def __post_init__(self):
        if not 0.0 < self.crop_ratio <= 1.0:
            raise ValueError(f"crop_ratio must lie in (0, 1], got {self.crop_ratio}")
        if self.out_size < 1:
            raise ValueError(f"out_size must be positive, got {self.out_size}")

    def with_out_size(self, out_size: int) -> TestPreproc:
        return TestPreproc(self.crop_ratio, out_size)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_roc(image_dims: tuple[int, int], rng: np.random.Generator, config: AugmentConfig) -> RoC:
    """Draw a random rectangle: uniform area fraction, log-uniform aspect ratio.

    After ``MAX_ROC_ATTEMPTS`` draws that do not fit, falls back to the largest
    centred square.
    """
    height, width = image_dims
    if height < 8 or width < 8:
        raise ValueError(f"sample_roc needs an image of at least 8x8, got {height}x{width}")
    area = height * width
    lo, hi = config.area_fraction_range
    log_lo, log_hi = math.log(config.aspect_ratio_range[0]), math.log(config.aspect_ratio_range[1])
    for _ in range(MAX_ROC_ATTEMPTS):
        target = rng.uniform(lo, hi) * area
        aspect = math.exp(rng.uniform(log_lo, log_hi))
        w = round_half_up(math.sqrt(target * aspect))
        h = round_half_up(math.sqrt(target / aspect))
        if 0 < w <= width and 0 < h <= height:
            x = int(rng.integers(0, width - w + 1))
            y = int(rng.integers(0, height - h + 1))
            return RoC(x, y, w, h)
    side = min(height, width)
    return RoC((width - side) // 2, (height - side) // 2, side, side)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres and border clamping.

    Source coordinate is ``(dst + 0.5) * in / out - 0.5`` clamped to the image;
    results are rounded to the nearest integer, ties away from zero.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dims must be positive, got {out_h}x{out_w}")
    image = _as_hwc(image)
    h, w = image.shape[:2]
    return kernels.resize_bilinear_u8(image, 0, 0, h, w, out_h, out_w)


def _as_hwc(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"expected an (H, W, C) image with 1 or 3 channels, got {image.shape}")
    return np.ascontiguousarray(image, dtype=np.uint8)


def crop_resize(image: np.ndarray, roc: RoC, out_size: int) -> np.ndarray:
    image = _as_hwc(image)
    if not roc.within(*image.shape[:2]):
        raise ValueError(f"{roc} lies outside a {image.shape[0]}x{image.shape[1]} image")
    return kernels.resize_bilinear_u8(image, roc.y, roc.x, roc.h, roc.w, out_size, out_size)


def random_resized_crop(image: np.ndarray, rng: np.random.Generator, config: AugmentConfig) -> np.ndarray:
    image = _as_hwc(image)
    roc = sample_roc(image.shape[:2], rng, config)
    out = crop_resize(image, roc, config.out_size)
    if rng.random() < config.flip_probability:
        out = np.ascontiguousarray(out[:, ::-1])
    return out


def center_crop_geometry(image_dims: tuple[int, int], preproc: TestPreproc) -> tuple[int, int, int, int]:
    """Resized dims and crop offsets ``(resized_h, resized_w, top, left)``."""
    height, width = image_dims
    short = round_half_up(preproc.out_size / preproc.crop_ratio)
    if height <= width:
        rh, rw = short, round_half_up(width * short / height)
    else:
        rh, rw = round_half_up(height * short / width), short
    rh, rw = max(rh, preproc.out_size), max(rw, preproc.out_size)
    # odd leftovers put the extra pixel on the bottom/right
    return rh, rw, (rh - preproc.out_size) // 2, (rw - preproc.out_size) // 2


def center_crop_roc(image_dims: tuple[int, int], preproc: TestPreproc) -> tuple[float, float]:
    """Extent ``(h, w)`` in source pixels of the region a center crop keeps."""
    height, width = image_dims
    rh, rw, _, _ = center_crop_geometry(image_dims, preproc)
    return preproc.out_size * height / rh, preproc.out_size * width / rw


def center_crop_preproc(image: np.ndarray, preproc: TestPreproc) -> np.ndarray:
    image = _as_hwc(image)
    if image.shape[0] < 2 or image.shape[1] < 2:
        raise ValueError(f"center crop needs at least a 2x2 image, got {image.shape}")
    rh, rw, top, left = center_crop_geometry(image.shape[:2], preproc)
    resized = resize_bilinear(image, rh, rw)
    s = preproc.out_size
    return np.ascontiguousarray(resized[top : top + s, left : left + s])


def worker_seed(seed: int, worker_index: int) -> int:
    """``seed XOR splitmix64(worker_index)``, the per-worker RNG stream seed."""
    mask = (1 << 64) - 1
    z = (worker_index + 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    z ^= z >> 31
    return (seed & mask) ^ z


def worker_rng(seed: int, worker_index: int) -> np.random.Generator:
    return np.random.default_rng(worker_seed(seed, worker_index))
