"""PU21 perceptually uniform encoding of absolute luminance (cd/m^2).

Transfer function and coefficients transcribed from the PU21 reference
implementation distributed with pyfvvdp 1.2.2 (``pyfvvdp/utils.py``, class
``PU``), which implements

    Azimi, Mantiuk et al., "PU21: A novel perceptually uniform encoding for
    adapting existing quality metrics for HDR", Picture Coding Symposium 2021.

    V = p6 * (((p0 + p1 * Y**p3) / (1 + p2 * Y**p3)) ** p4 - p5)

with Y clamped to [L_MIN, L_MAX].
"""

from __future__ import annotations

import numpy as np

L_MIN = 0.005
L_MAX = 10000.0

COEFFICIENTS = {
    "banding": (1.063020987, 0.4200327408, 0.1666005322, 0.2817030548, 1.029472678, 1.119265011, 502.1303377),
    "banding_glare": (234.0235618, 216.9339286, 0.0001091864237, 0.893206924, 0.06733984121, 1.444718567, 567.6315065),
    "peaks": (1.057454135, 0.6234292574, 0.3060331179, 0.3702234502, 1.116868695, 1.109926637, 391.3707005),
    "peaks_glare": (1.374063733, 0.3160810744, 0.1350497609, 0.510558148, 1.049265455, 1.404963498, 427.3579761),
}
DEFAULT_VARIANT = "banding_glare"


def _curve(y: np.ndarray, variant: str) -> np.ndarray:
    try:
        p = COEFFICIENTS[variant]
    except KeyError:
        raise ValueError(f"unknown PU21 variant {variant!r}") from None
    yp = y ** p[3]
    return p[6] * (((p[0] + p[1] * yp) / (1.0 + p[2] * yp)) ** p[4] - p[5])


def encode(luminance, variant: str = DEFAULT_VARIANT) -> tuple[np.ndarray, int]:
    """Encode luminance; returns (encoded values, number of clamped inputs)."""
    y = np.asarray(luminance, dtype=np.float64)
    out_of_range = int(np.count_nonzero((y < L_MIN) | (y > L_MAX)))
    return _curve(np.clip(y, L_MIN, L_MAX), variant), out_of_range


def peak(variant: str = DEFAULT_VARIANT) -> float:
    """Encoded value of the brightest representable luminance."""
    return float(_curve(np.float64(L_MAX), variant))
