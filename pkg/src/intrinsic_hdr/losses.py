"""Training losses for the three reconstruction stages.

Every loss takes (N, C, H, W) tensors (or arrays, which are treated as
constants) and returns a scalar ``Tensor``. The implied-component terms are
built inside the tape so gradients flow through the intrinsic model.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor
from .intrinsic import EPS


@dataclass(frozen=True)
class LossWeights:
    gamma: float = 0.1
    msg_scales: int = 4

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.msg_scales < 1:
            raise ValueError(f"msg_scales must be >= 1, got {self.msg_scales}")


def _pair(pred, target) -> tuple[Tensor, Tensor]:
    pred = ad.tensor(pred)
    target = ad.tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def mse(pred, target) -> Tensor:
    pred, target = _pair(pred, target)
    return ad.mean((pred - target) ** 2)


def msg(pred, target, scales: int = 4) -> Tensor:
    """Multi-scale gradient loss: summed |grad(pred) - grad(target)| over a 2x pyramid.

    The sum runs over x and y forward differences (zero-padded last
    column/row) at every scale and is divided by the total number of
    gradient elements visited, padding included.
    """
    pred, target = _pair(pred, target)
    h, w = pred.shape[-2:]
    need = 2 ** (scales - 1)
    if scales < 1 or h < need or w < need:
        raise ValueError(f"image too small for {scales} scales: {h}x{w}")
    total = None
    count = 0
    p, t = pred, target
    for m in range(scales):
        if m:
            p, t = ad.avgpool2(p), ad.avgpool2(t)
        d = p - t
        sad = ad.sum(ad.abs(ad.grad_x(d))) + ad.sum(ad.abs(ad.grad_y(d)))
        total = sad if total is None else total + sad
        count += 2 * d.value.size
    return total / float(count)


def implied_albedo(hdr, inv_shading, eps: float = EPS) -> Tensor:
    """``I / max((1 - D) / D, eps)`` on the tape."""
    d = ad.tensor(inv_shading)
    shading = (1.0 - d) / d
    return ad.tensor(hdr) / ad.clampmin(shading, eps)


def implied_inverse_shading(albedo, hdr, eps: float = EPS) -> Tensor:
    """Channel mean of ``A / (I + A + eps)`` on the tape, keeping a size-1 channel axis."""
    a = ad.tensor(albedo)
    ratio = a / (ad.tensor(hdr) + a + eps)
    return ad.mean(ratio, axis=-3, keepdims=True)


def _mse_msg(pred, target, w: LossWeights) -> Tensor:
    if w.gamma == 0:
        return mse(pred, target)
    return mse(pred, target) + w.gamma * msg(pred, target, w.msg_scales)


def loss_shading(inv_shading_pred, inv_shading_gt, hdr_gt, albedo_gt, w: LossWeights = LossWeights()) -> Tensor:
    """Inverse-shading loss plus the same terms on the albedo it implies."""
    implied = implied_albedo(hdr_gt, inv_shading_pred)
    return _mse_msg(inv_shading_pred, inv_shading_gt, w) + _mse_msg(implied, albedo_gt, w)


def loss_albedo(albedo_pred, albedo_gt, hdr_gt, inv_shading_gt, w: LossWeights = LossWeights()) -> Tensor:
    """Albedo loss plus the same terms on the inverse shading it implies."""
    implied = implied_inverse_shading(albedo_pred, hdr_gt)
    return _mse_msg(albedo_pred, albedo_gt, w) + _mse_msg(implied, inv_shading_gt, w)


def loss_refine(inv_hdr_pred, inv_hdr_gt, w: LossWeights = LossWeights()) -> Tensor:
    return _mse_msg(inv_hdr_pred, inv_hdr_gt, w)
