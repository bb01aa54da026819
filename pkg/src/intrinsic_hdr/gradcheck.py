"""Finite-difference verification of every tape op and every training loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import autodiff as ad
from . import losses

TOLERANCE = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    seed: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _scales_for(h: int, w: int) -> int:
    return min(4, int(np.floor(np.log2(min(h, w)))) + 1)


def _instance(rng: np.random.Generator):
    n = int(rng.integers(1, 3))
    h, w = (int(v) for v in rng.choice([4, 6, 8], size=2))
    return n, h, w


def op_cases(rng: np.random.Generator) -> Iterator[tuple[str, Callable, np.ndarray]]:
    """Scalar test functions isolating one tape op each, with a random point."""
    x = rng.uniform(0.2, 1.5, size=(2, 3, 6, 4))
    other = ad.Tensor(rng.uniform(0.2, 1.5, size=x.shape))
    weights = rng.normal(size=x.shape)
    dot = lambda t: ad.sum(t * weights)  # noqa: E731

    yield "add", lambda t: dot(t + other), x
    yield "sub", lambda t: dot(other - t), x
    yield "mul", lambda t: dot(t * other), x
    yield "div", lambda t: dot(other / t), x
    yield "pow", lambda t: dot(t**1.7), x
    # keep points away from the clamp threshold
    xc = np.where(np.abs(x - 0.8) < 0.05, x + 0.1, x)
    yield "clampmin", lambda t: dot(ad.clampmin(t, 0.8)), xc
    yield "mean", lambda t: ad.mean(t * weights), x
    xs = rng.choice([-1.0, 1.0], size=x.shape) * x
    yield "abs", lambda t: dot(ad.abs(t)), xs
    yield "sigmoid", lambda t: dot(ad.sigmoid(t)), xs
    kernel = ad.Tensor(rng.normal(size=(2, 3, 3, 3)))
    bias = ad.Tensor(rng.normal(size=2))
    yield "conv2d", lambda t: ad.sum(ad.conv2d(t, kernel, bias) ** 2), x
    yield "conv2d_weight", lambda t: ad.sum(ad.conv2d(ad.Tensor(x), t) ** 2), kernel.value
    yield "avgpool2", lambda t: ad.sum(ad.avgpool2(t) ** 2), rng.uniform(0.2, 1.5, size=(1, 2, 5, 7))
    yield "upsample2", lambda t: ad.sum(ad.upsample2(t) ** 2 * _ramp_weights(t.shape, 2)), x
    yield "concat", lambda t: ad.sum(ad.concat([t, other], axis=1) ** 2), x
    yield "grad_x", lambda t: dot(ad.grad_x(t) ** 2), x
    yield "grad_y", lambda t: dot(ad.grad_y(t) ** 2), x


def _ramp_weights(shape, factor: int) -> np.ndarray:
    """Deterministic non-uniform weights matching an upsampled shape."""
    up = shape[:-2] + (shape[-2] * factor, shape[-1] * factor)
    return np.linspace(0.5, 1.5, int(np.prod(up))).reshape(up)


def _kink_distance(pairs, scales: int) -> float:
    """Smallest |grad(p - t)| over all pyramid levels, padding excluded.

    The MSG terms are non-differentiable where such a difference is zero, so
    finite differences are only meaningful at points some distance away.
    """
    best = np.inf
    for p, t in pairs:
        d = ad.Tensor(np.asarray(p, dtype=np.float64) - np.asarray(t, dtype=np.float64))
        for m in range(scales):
            if m:
                d = ad.avgpool2(d)
            gx = ad.grad_x(d).value[..., :-1]
            gy = ad.grad_y(d).value[..., :-1, :]
            best = min(best, np.abs(gx).min(initial=np.inf), np.abs(gy).min(initial=np.inf))
    return float(best)


def _sample_away_from_kinks(rng, sampler, msg_pairs, scales: int, margin: float, tries: int = 500):
    for _ in range(tries):
        x = sampler()
        if _kink_distance(msg_pairs(x), scales) > margin:
            return x
    raise RuntimeError("could not sample a point away from MSG kinks")


def loss_cases(rng: np.random.Generator, margin: float = 1e-3) -> Iterator[tuple[str, Callable, np.ndarray]]:
    """The five training losses on one random instance of 4x4 to 8x8 pixels."""
    n, h, w = _instance(rng)
    wts = losses.LossWeights(gamma=0.1, msg_scales=_scales_for(h, w))
    s = wts.msg_scales
    inv_gt = rng.uniform(0.2, 0.8, size=(n, 1, h, w))
    hdr = rng.uniform(0.1, 3.0, size=(n, 3, h, w))
    albedo = rng.uniform(0.1, 0.9, size=(n, 3, h, w))
    target = rng.uniform(0.0, 1.0, size=(n, 3, h, w))

    def pick(low, high, shape, pairs):
        return _sample_away_from_kinks(rng, lambda: rng.uniform(low, high, size=shape), pairs, s, margin)

    yield "mse", lambda t: losses.mse(t, target), rng.uniform(0, 1, size=target.shape)

    x = pick(0, 1, target.shape, lambda x: [(x, target)])
    yield "msg", lambda t: losses.msg(t, target, s), x

    x = pick(
        0.2, 0.8, inv_gt.shape,
        lambda x: [(x, inv_gt), (losses.implied_albedo(hdr, x).value, albedo)],
    )
    yield "loss_shading", lambda t: losses.loss_shading(t, inv_gt, hdr, albedo, wts), x

    x = pick(
        0.1, 0.9, albedo.shape,
        lambda x: [(x, albedo), (losses.implied_inverse_shading(x, hdr).value, inv_gt)],
    )
    yield "loss_albedo", lambda t: losses.loss_albedo(t, albedo, hdr, inv_gt, wts), x

    x = pick(0.05, 0.95, target.shape, lambda x: [(x, target)])
    yield "loss_refine", lambda t: losses.loss_refine(t, target, wts), x


def run_suite(seeds=range(20), include_ops: bool = True, h: float = 1e-5) -> list[CheckResult]:
    results = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        cases = list(loss_cases(rng))
        if include_ops:
            cases += list(op_cases(rng))
        for name, f, x in cases:
            results.append(CheckResult(name, int(seed), ad.grad_check(f, x, h)))
    return results
