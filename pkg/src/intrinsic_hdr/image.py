"""Image containers and pixel-level helpers.

Images are numpy arrays laid out as (height, width, channels), row-major and
channel-interleaved. ``LinearImage`` and ``LdrImage`` wrap such arrays with
validation; the free functions accept either a wrapper or a bare array and
return bare float64 arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

# Rec. 709 / sRGB primaries, linear RGB.
LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])


class ImageError(ValueError):
    """Raised for malformed image data or unsupported shapes."""


@dataclass(frozen=True)
class LinearImage:
    """Nonnegative, finite relative-luminance image with 1 or 3 channels."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ImageError(f"expected HxWx1 or HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImageError("image dimensions must be positive")
        if not np.all(np.isfinite(arr)):
            raise ImageError("image contains non-finite values")
        if np.any(arr < 0):
            raise ImageError("image contains negative values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LdrImage:
    """Quantized 3-channel image with integer codes in [0, 2**bit_depth - 1]."""

    data: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        if not 1 <= self.bit_depth <= 16:
            raise ImageError(f"bit depth must be in [1, 16], got {self.bit_depth}")
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ImageError(f"expected HxWx3 codes, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.round(arr)):
                raise ImageError("LDR codes must be integers")
        arr = arr.astype(np.uint16)
        if int(arr.max(initial=0)) > self.max_code or np.any(np.asarray(self.data) < 0):
            raise ImageError(f"code values outside [0, {self.max_code}]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def max_code(self) -> int:
        return (1 << self.bit_depth) - 1


ImageLike = Union[LinearImage, np.ndarray]


def as_array(img: ImageLike) -> np.ndarray:
    """Return ``img`` as a float64 HxWxC array (2-D input gains a channel axis)."""
    arr = img.data if isinstance(img, (LinearImage, LdrImage)) else img
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ImageError(f"expected an HxWxC image, got shape {arr.shape}")
    return arr


def percentile(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: element ``ceil(p/100 * n) - 1`` of the sorted sample."""
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValueError("empty sample")
    if not 0 <= p <= 100:
        raise ValueError(f"percentile must be in [0, 100], got {p}")
    idx = math.ceil(p / 100.0 * x.size) - 1
    idx = min(max(idx, 0), x.size - 1)
    return float(x[idx])


def downsample_half(img: ImageLike) -> np.ndarray:
    """Average non-overlapping 2x2 blocks; an odd trailing row/column is dropped."""
    arr = as_array(img)
    h, w, c = arr.shape
    if h < 2 or w < 2:
        raise ImageError("image too small")
    h2, w2 = h // 2, w // 2
    blocks = arr[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2, c)
    # fixed summation order: (a + b) + (c + d)
    return ((blocks[:, 0, :, 0] + blocks[:, 0, :, 1]) + (blocks[:, 1, :, 0] + blocks[:, 1, :, 1])) / 4.0


def spatial_gradient(img: ImageLike) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences (gx, gy); the last column of gx and last row of gy are 0."""
    arr = as_array(img)
    gx = np.zeros_like(arr)
    gy = np.zeros_like(arr)
    gx[:, :-1] = arr[:, 1:] - arr[:, :-1]
    gy[:-1, :] = arr[1:, :] - arr[:-1, :]
    return gx, gy


def luminance(img: ImageLike) -> np.ndarray:
    """Rec. 709 luminance of a 3-channel linear image, returned as HxWx1."""
    arr = as_array(img)
    if arr.shape[2] != 3:
        raise ImageError(f"luminance needs 3 channels, got {arr.shape[2]}")
    return (arr @ LUMA_WEIGHTS)[:, :, None]
