"""Closed-form transforms of the intrinsic model ``I = A * S``.

Shading is single-channel and unbounded; it is carried to the bounded
inverse domain with ``D = 1 / (S + 1)``. HDR images use the same map per
channel (``J = 1 / (I + 1)``).
"""

from __future__ import annotations

import numpy as np

from .image import ImageError, ImageLike, as_array

EPS = 1e-6
DEFAULT_MASK_THRESHOLD = 0.8


def _check_spatial(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ImageError(f"spatial dims differ: {a.shape[:2]} vs {b.shape[:2]}")


def _check_inverse(x: np.ndarray, what: str) -> None:
    if np.any(x <= 0):
        raise ValueError(f"degenerate {what}: values must be > 0")
    if np.any(x > 1):
        raise ValueError(f"{what} values must be <= 1")


def compose(albedo: ImageLike, shading: ImageLike) -> np.ndarray:
    a, s = as_array(albedo), as_array(shading)
    _check_spatial(a, s)
    return a * s


def shading_to_inverse(shading: ImageLike) -> np.ndarray:
    s = as_array(shading)
    if np.any(s < 0):
        raise ValueError("shading must be nonnegative")
    return 1.0 / (s + 1.0)


def inverse_to_shading(inv_shading: ImageLike) -> np.ndarray:
    d = as_array(inv_shading)
    _check_inverse(d, "inverse shading")
    return (1.0 - d) / d


def image_to_inverse(img: ImageLike) -> np.ndarray:
    i = as_array(img)
    if np.any(i < 0):
        raise ValueError("image must be nonnegative")
    return 1.0 / (i + 1.0)


def inverse_to_image(inv_img: ImageLike) -> np.ndarray:
    j = as_array(inv_img)
    _check_inverse(j, "inverse image")
    return (1.0 - j) / j


def implied_albedo(hdr: ImageLike, inv_shading: ImageLike, eps: float = EPS) -> np.ndarray:
    """Albedo forced by an HDR image and an inverse shading: ``I / max(S, eps)``."""
    i, d = as_array(hdr), as_array(inv_shading)
    _check_spatial(i, d)
    s = (1.0 - d) / d
    return i / np.maximum(s, eps)


def implied_inverse_shading(albedo: ImageLike, hdr: ImageLike, eps: float = EPS) -> np.ndarray:
    """Channel mean of ``A / (I + A + eps)``, returned as HxWx1."""
    a, i = as_array(albedo), as_array(hdr)
    _check_spatial(a, i)
    return np.mean(a / (i + a + eps), axis=2, keepdims=True)


def soft_mask(ldr_linear: ImageLike, threshold: float = DEFAULT_MASK_THRESHOLD) -> np.ndarray:
    """Per-channel ramp that is 0 up to ``threshold`` and reaches 1 at saturation."""
    if not 0 <= threshold < 1:
        raise ValueError(f"mask threshold must be in [0, 1), got {threshold}")
    x = as_array(ldr_linear)
    return np.maximum(0.0, x - threshold) / (1.0 - threshold)


def guidance_mask(ldr_linear: ImageLike, threshold: float = DEFAULT_MASK_THRESHOLD) -> np.ndarray:
    """Single-channel mask fed to the albedo network: the per-channel ramp's maximum.

    A pixel needs colour reconstruction as soon as any channel nears
    saturation; one channel keeps the albedo input at 3 + 3 + 1 = 7.
    """
    return soft_mask(ldr_linear, threshold).max(axis=2, keepdims=True)


def combine_intrinsics(albedo: ImageLike, inv_shading: ImageLike) -> np.ndarray:
    a, d = as_array(albedo), as_array(inv_shading)
    _check_spatial(a, d)
    _check_inverse(d, "inverse shading")
    return a * ((1.0 - d) / d)
