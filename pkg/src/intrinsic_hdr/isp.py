"""Synthetic intrinsic scenes and a known-parameter LDR camera model.

All randomness comes from numpy's PCG64 generator (``np.random.default_rng``)
seeded with a single integer, so a (seed, size) pair regenerates a scene
bit-identically on any platform numpy supports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import LdrImage
from .intrinsic import EPS, compose

EXPOSURE_RANGE = (-3.0, 3.0)

# Scene generator constants. Frozen after checking the shading histogram over
# seeds 0..99 (max >= 2 and 0 < fraction above 1 < 0.5 for every seed).
N_REGIONS = (5, 20)
ALBEDO_RANGE = (0.05, 0.95)
FIELD_RANGE = (0.1, 1.5)
FIELD_COMPONENTS = 4
N_BLOBS = (1, 5)
BLOB_PEAK = (2.0, 50.0)
BLOB_SIGMA = (0.02, 0.07)  # fraction of the smaller image side


@dataclass(frozen=True)
class IspParams:
    exposure_stops: float = 0.0
    crf_gamma: float = 2.2
    bit_depth: int = 8

    def __post_init__(self):
        if not self.crf_gamma > 0:
            raise ValueError(f"crf_gamma must be > 0, got {self.crf_gamma}")
        if not 1 <= self.bit_depth <= 16:
            raise ValueError(f"bit_depth must be in [1, 16], got {self.bit_depth}")

    @property
    def exposure(self) -> float:
        return 2.0 ** self.exposure_stops

    @property
    def max_code(self) -> int:
        return (1 << self.bit_depth) - 1


@dataclass(frozen=True)
class SyntheticScene:
    albedo_gt: np.ndarray  # HxWx3
    shading_gt: np.ndarray  # HxWx1
    hdr_gt: np.ndarray  # HxWx3
    seed: int = 0

    @classmethod
    def from_components(cls, albedo: np.ndarray, shading: np.ndarray, seed: int = 0) -> "SyntheticScene":
        albedo = np.asarray(albedo, dtype=np.float64)
        shading = np.asarray(shading, dtype=np.float64)
        if shading.ndim == 2:
            shading = shading[:, :, None]
        return cls(albedo, shading, compose(albedo, shading), seed)

    @property
    def shape(self) -> tuple[int, int]:
        return self.albedo_gt.shape[:2]


def simulate_ldr(scene: SyntheticScene, params: IspParams) -> tuple[LdrImage, np.ndarray]:
    """Expose, clip, apply the gamma CRF, quantize; return the codes and their linearization."""
    exposed = params.exposure * scene.hdr_gt
    clipped = np.minimum(exposed, 1.0)
    crf = clipped ** (1.0 / params.crf_gamma)
    codes = np.floor(crf * params.max_code + 0.5).astype(np.uint16)
    linear = (codes / params.max_code) ** params.crf_gamma
    return LdrImage(codes, params.bit_depth), linear


def linearize(ldr: LdrImage, crf_gamma: float = 2.2) -> np.ndarray:
    """Known-CRF dequantization and linearization of LDR codes into [0, 1]."""
    return (ldr.data.astype(np.float64) / ldr.max_code) ** crf_gamma


def oracle_ldr_decomposition(
    scene: SyntheticScene, params: IspParams, ldr_linear: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """LDR albedo and shading derived from ground truth.

    Shading is the exposed ground-truth shading clipped at 1; albedo is
    whatever remains of the linearized LDR image, clamped to [0, 1]. Clipped
    colours therefore show up as desaturated albedo.
    """
    if ldr_linear is None:
        _, ldr_linear = simulate_ldr(scene, params)
    shading = np.minimum(params.exposure * scene.shading_gt, 1.0)
    albedo = np.clip(ldr_linear / np.maximum(shading, EPS), 0.0, 1.0)
    return albedo, shading


def _smooth_field(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    field = np.zeros((h, w))
    for _ in range(FIELD_COMPONENTS):
        fy, fx = rng.uniform(0.3, 1.5, size=2)
        py, px = rng.uniform(0, 2 * np.pi, size=2)
        amp = rng.uniform(0.5, 1.0)
        field += amp * np.cos(2 * np.pi * fy * yy + py) * np.cos(2 * np.pi * fx * xx + px)
    u = (field - field.min()) / max(field.max() - field.min(), 1e-12)
    lo, hi = FIELD_RANGE
    # squaring skews the field dark so that most unlit shading stays below 1
    return lo + (hi - lo) * u**2


def generate_scene(seed: int, h: int = 64, w: int = 64) -> SyntheticScene:
    """Procedural scene: Voronoi albedo regions over a smooth field plus light blobs."""
    if h < 16 or w < 16:
        raise ValueError(f"scene must be at least 16x16, got {h}x{w}")
    rng = np.random.default_rng(seed)

    n_regions = int(rng.integers(N_REGIONS[0], N_REGIONS[1] + 1))
    sites = rng.uniform(0, 1, size=(n_regions, 2)) * (h, w)
    colors = rng.uniform(*ALBEDO_RANGE, size=(n_regions, 3))
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    albedo = colors[np.argmin(d2, axis=-1)]

    shading = _smooth_field(rng, h, w)
    n_blobs = int(rng.integers(N_BLOBS[0], N_BLOBS[1] + 1))
    side = min(h, w)
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, 1, size=2) * (h, w)
        sigma = rng.uniform(*BLOB_SIGMA) * side
        peak = float(np.exp(rng.uniform(np.log(BLOB_PEAK[0]), np.log(BLOB_PEAK[1]))))
        shading = shading + peak * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))

    return SyntheticScene.from_components(albedo, shading[:, :, None], seed)


def sample_exposure(rng: np.random.Generator, t_range: tuple[float, float] = EXPOSURE_RANGE) -> float:
    """Exposure in stops, continuous uniform over ``t_range``."""
    lo, hi = t_range
    return float(rng.uniform(lo, hi))


def clipped_fraction(scene: SyntheticScene, exposure_stops: float) -> float:
    """Fraction of channel values that saturate at the given exposure."""
    return float(np.mean(2.0**exposure_stops * scene.hdr_gt >= 1.0))
