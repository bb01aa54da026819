"""Scale alignment, CRF correction and PU21 metrics for HDR reconstructions.

The protocol: map the reference into [1, 1000], fit one global scale on
mid-range pixels, fit a per-channel cubic in log-RGB, then score the
corrected prediction with PU21-PSNR and linear RMSE.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from statistics import median

import numpy as np

from . import pu21
from .image import ImageLike, as_array, luminance, percentile

RANGE_MAX = 1000.0
RANGE_MIN = 1.0
WINDOW = (10.0, 90.0)
LOG_FLOOR = 1e-6
CRF_DEGREE = 3


class EvaluationError(ValueError):
    pass


@dataclass
class EvalReport:
    image_id: str
    scale: float
    crf_coeffs: list[list[float]]
    pu21_psnr: float
    rmse_linear: float
    pu21_clamped: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pu21_psnr"] = _jsonable(self.pu21_psnr)
        return d


def _jsonable(v: float):
    # strict JSON has no infinity; a perfect reconstruction reports "inf"
    return "inf" if math.isinf(v) else v


def range_factor(gt: ImageLike) -> float:
    top = float(as_array(gt).max())
    if not top > 0:
        raise EvaluationError("reference image has no positive values")
    return RANGE_MAX / top


def map_to_range(gt: ImageLike, factor: float | None = None) -> np.ndarray:
    """Scale so the reference maximum becomes 1000, then clamp from below at 1.

    ``factor`` defaults to the one derived from ``gt`` itself; pass the
    reference's factor to map a prediction into the same range.
    """
    g = as_array(gt)
    if factor is None:
        factor = range_factor(g)
    return np.maximum(g * factor, RANGE_MIN)


def _window(gt: np.ndarray) -> np.ndarray:
    lum = luminance(gt)[:, :, 0] if gt.shape[2] == 3 else gt[:, :, 0]
    lo, hi = percentile(lum, WINDOW[0]), percentile(lum, WINDOW[1])
    return (lum >= lo) & (lum <= hi)


def align_scale(pred: ImageLike, gt: ImageLike) -> float:
    """Least-squares scale for ``pred`` over pixels whose reference luminance is in the 10-90th percentiles."""
    p, g = as_array(pred), as_array(gt)
    if p.shape != g.shape:
        raise EvaluationError(f"shape mismatch: {p.shape} vs {g.shape}")
    mask = _window(g)
    if not mask.any():
        raise EvaluationError("empty percentile window")
    pw, gw = p[mask], g[mask]
    den = float(np.sum(pw * pw))
    if den == 0:
        raise EvaluationError("prediction is zero inside the percentile window")
    return float(np.sum(pw * gw)) / den


def _design(logx: np.ndarray) -> np.ndarray:
    return np.vander(logx, CRF_DEGREE + 1, increasing=True)


def fit_crf_correction(pred: ImageLike, gt: ImageLike) -> np.ndarray:
    """Per-channel cubic ``log(gt) ~ sum_k a_k log(pred)**k``; returns a (C, 4) array.

    The fit solves for the residual ``log(gt) - log(pred)`` and adds the
    identity back, so an exact match yields exactly ``[0, 1, 0, 0]``.
    """
    p, g = as_array(pred), as_array(gt)
    if p.shape != g.shape:
        raise EvaluationError(f"shape mismatch: {p.shape} vs {g.shape}")
    coeffs = np.zeros((p.shape[2], CRF_DEGREE + 1))
    for c in range(p.shape[2]):
        lp = np.log(np.maximum(p[:, :, c].ravel(), LOG_FLOOR))
        lg = np.log(np.maximum(g[:, :, c].ravel(), LOG_FLOOR))
        x = _design(lp)
        if np.linalg.matrix_rank(x) < CRF_DEGREE + 1:
            raise EvaluationError("degenerate CRF fit")
        resid, *_ = np.linalg.lstsq(x, lg - lp, rcond=None)
        resid[1] += 1.0
        coeffs[c] = resid
    return coeffs


def apply_crf_correction(pred: ImageLike, coeffs: np.ndarray) -> np.ndarray:
    p = as_array(pred)
    out = np.empty_like(p)
    for c in range(p.shape[2]):
        x = np.maximum(p[:, :, c], LOG_FLOOR)
        lx = np.log(x)
        a = np.array(coeffs[c], dtype=np.float64)
        a[1] -= 1.0
        correction = a[0] + lx * (a[1] + lx * (a[2] + lx * a[3]))
        out[:, :, c] = x * np.exp(correction)
    return out


def pu21_psnr(pred: ImageLike, gt: ImageLike, variant: str = pu21.DEFAULT_VARIANT) -> tuple[float, int]:
    """PSNR between PU21-encoded channel values; returns (dB, clamped input count)."""
    ep, cp = pu21.encode(as_array(pred), variant)
    eg, cg = pu21.encode(as_array(gt), variant)
    mse = float(np.mean((ep - eg) ** 2))
    psnr = math.inf if mse == 0 else 20.0 * math.log10(pu21.peak(variant) / math.sqrt(mse))
    return psnr, cp + cg


def evaluate(pred: ImageLike, gt: ImageLike, image_id: str = "") -> EvalReport:
    """Full protocol for one image.

    The scale is fitted against the unmapped reference, then prediction and
    reference go through the same [1, 1000] range map. This keeps exact
    matches exact: ``evaluate(gt, gt)`` has RMSE 0 and infinite PSNR.
    """
    p, g = as_array(pred), as_array(gt)
    if p.shape != g.shape:
        raise EvaluationError(f"shape mismatch: {p.shape} vs {g.shape}")
    s = align_scale(p, g)
    if not s > 0:
        raise EvaluationError(f"non-positive alignment scale {s}")
    factor = range_factor(g)
    ref = map_to_range(g, factor)
    scaled = map_to_range(s * p, factor)
    coeffs = fit_crf_correction(scaled, ref)
    corrected = apply_crf_correction(scaled, coeffs)
    psnr, clamped = pu21_psnr(corrected, ref)
    rmse = float(np.sqrt(np.mean((corrected - ref) ** 2)))
    return EvalReport(image_id, s, coeffs.tolist(), psnr, rmse, clamped)


# --- report serialisation ----------------------------------------------------

METRICS = ("scale", "pu21_psnr", "rmse_linear")


def aggregate(reports: list[EvalReport]) -> dict:
    out: dict = {"count": len(reports)}
    for name in METRICS:
        vals = [getattr(r, name) for r in reports]
        if vals:
            out[name] = {"mean": _jsonable(float(np.mean(vals))), "median": _jsonable(float(median(vals)))}
    return out


def reports_to_json(reports: list[EvalReport]) -> str:
    reports = sorted(reports, key=lambda r: r.image_id)
    doc = {"images": [r.to_dict() for r in reports], "aggregate": aggregate(reports)}
    return json.dumps(doc, indent=2)


def reports_to_csv(reports: list[EvalReport]) -> str:
    buf = io.StringIO()
    channels = len(reports[0].crf_coeffs) if reports else 3
    crf_cols = [f"crf_c{c}_a{k}" for c in range(channels) for k in range(CRF_DEGREE + 1)]
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image_id", "scale", "pu21_psnr", "rmse_linear", "pu21_clamped", *crf_cols])
    for r in sorted(reports, key=lambda r: r.image_id):
        psnr = "inf" if math.isinf(r.pu21_psnr) else repr(r.pu21_psnr)
        flat = [repr(v) for row in r.crf_coeffs for v in row]
        writer.writerow([r.image_id, repr(r.scale), psnr, repr(r.rmse_linear), r.pu21_clamped, *flat])
    return buf.getvalue()
