"""Dataset assembly, optimisation and end-to-end reconstruction.

Training targets live in the exposed frame: for a scene rendered at ``t``
stops, the HDR target is ``2**t * hdr_gt`` and the shading target is
``2**t * shading_gt``, so unclipped LDR pixels agree with their targets.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import intrinsic, isp, losses
from .models import ToyNet, build, forward, stack_inputs

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    steps: int = 500
    batch: int = 4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weights: losses.LossWeights = losses.LossWeights()

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")


@dataclass
class Sample:
    """One training/evaluation example, arrays in (C, H, W) float32."""

    ldr: np.ndarray
    inv_shading_ldr: np.ndarray
    albedo_ldr: np.ndarray
    mask: np.ndarray
    hdr: np.ndarray
    albedo: np.ndarray
    inv_shading: np.ndarray
    exposure_stops: float = 0.0
    seed: int = 0
    # filled in from trained shading/albedo nets before refinement training
    upstream: dict[str, np.ndarray] | None = field(default=None, repr=False)


def _chw(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a).transpose(2, 0, 1), dtype=np.float32)


def make_sample(scene: isp.SyntheticScene, params: isp.IspParams) -> Sample:
    """Render a scene through the camera model and collect every stage's inputs and targets."""
    _, ldr_linear = isp.simulate_ldr(scene, params)
    albedo_ldr, shading_ldr = isp.oracle_ldr_decomposition(scene, params, ldr_linear)
    return sample_from_arrays(
        ldr_linear,
        albedo_ldr,
        shading_ldr,
        hdr=params.exposure * scene.hdr_gt,
        albedo=scene.albedo_gt,
        shading=params.exposure * scene.shading_gt,
        exposure_stops=params.exposure_stops,
        seed=scene.seed,
    )


def sample_from_arrays(ldr, albedo_ldr, shading_ldr, hdr, albedo, shading, exposure_stops=0.0, seed=0) -> Sample:
    """Build a Sample from HxWxC arrays (targets already in the exposed frame)."""
    return Sample(
        ldr=_chw(ldr),
        inv_shading_ldr=_chw(intrinsic.shading_to_inverse(shading_ldr)),
        albedo_ldr=_chw(albedo_ldr),
        mask=_chw(intrinsic.guidance_mask(ldr)),
        hdr=_chw(hdr),
        albedo=_chw(albedo),
        inv_shading=_chw(intrinsic.shading_to_inverse(shading)),
        exposure_stops=float(exposure_stops),
        seed=int(seed),
    )


def make_dataset(
    n_scenes: int,
    seed: int = 0,
    size: int = 64,
    t_range: tuple[float, float] = isp.EXPOSURE_RANGE,
    crf_gamma: float = 2.2,
    bit_depth: int = 8,
    first_scene: int = 0,
) -> list[Sample]:
    """Scenes ``first_scene .. first_scene + n_scenes - 1`` with exposures drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_scenes):
        t = isp.sample_exposure(rng, t_range)
        scene = isp.generate_scene(first_scene + i, size, size)
        out.append(make_sample(scene, isp.IspParams(t, crf_gamma, bit_depth)))
    return out


# --- per-role plumbing --------------------------------------------------------


def role_input(role: str, samples: list[Sample]) -> np.ndarray:
    """(N, C, H, W) input stack for ``role``."""
    if role == "shading":
        blocks = [stack_inputs(role, ldr=s.ldr, inv_shading_ldr=s.inv_shading_ldr) for s in samples]
    elif role == "albedo":
        blocks = [stack_inputs(role, ldr=s.ldr, albedo_ldr=s.albedo_ldr, mask=s.mask) for s in samples]
    else:
        if any(s.upstream is None for s in samples):
            raise ValueError("refinement samples need upstream shading/albedo predictions")
        blocks = [stack_inputs(role, ldr=s.ldr, **s.upstream) for s in samples]
    return np.stack(blocks)


def role_loss(role: str, pred, samples: list[Sample], w: losses.LossWeights) -> ad.Tensor:
    batch = lambda name: np.stack([getattr(s, name) for s in samples])  # noqa: E731
    if role == "shading":
        return losses.loss_shading(pred, batch("inv_shading"), batch("hdr"), batch("albedo"), w)
    if role == "albedo":
        return losses.loss_albedo(pred, batch("albedo"), batch("hdr"), batch("inv_shading"), w)
    inv_hdr = np.stack([intrinsic.image_to_inverse(s.hdr.transpose(1, 2, 0)).transpose(2, 0, 1) for s in samples])
    return losses.loss_refine(pred, inv_hdr.astype(np.float32), w)


def refinement_blocks(inv_shading_hdr: np.ndarray, albedo_hdr: np.ndarray) -> dict[str, np.ndarray]:
    """Inputs the refinement stage derives from the two intrinsic predictions (C, H, W)."""
    d = np.asarray(inv_shading_hdr, dtype=np.float64)
    a = np.asarray(albedo_hdr, dtype=np.float64)
    inferred = a * ((1.0 - d) / d)
    return {
        "inv_hdr_inferred": (1.0 / (inferred + 1.0)).astype(np.float32),
        "inv_shading_hdr": d.astype(np.float32),
        "albedo_hdr": a.astype(np.float32),
    }


def attach_upstream(samples: list[Sample], shading_net: ToyNet, albedo_net: ToyNet, batch: int = 8) -> list[Sample]:
    """Copies of ``samples`` carrying the frozen nets' predictions for refinement."""
    out = []
    for i in range(0, len(samples), batch):
        chunk = samples[i : i + batch]
        d = forward(shading_net, role_input("shading", chunk)).value
        a = forward(albedo_net, role_input("albedo", chunk)).value
        out.extend(replace(s, upstream=refinement_blocks(d[j], a[j])) for j, s in enumerate(chunk))
    return out


# --- optimisation -------------------------------------------------------------


def cosine_lr(step: int, total: int, base_lr: float) -> float:
    """Single cosine annealing cycle from ``base_lr`` (step 0) towards 0."""
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total))


class RAdam:
    """Rectified Adam (Liu et al., 2020), with the variance-tractability threshold rho_t > 4."""

    def __init__(self, params: list[ad.Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0
        self.rho_inf = 2.0 / (1.0 - beta2) - 1.0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2, t = self.beta1, self.beta2, self.t
        b2t = b2**t
        rho_t = self.rho_inf - 2.0 * t * b2t / (1.0 - b2t)
        rect = None
        if rho_t > 4.0:
            ri = self.rho_inf
            rect = math.sqrt((rho_t - 4) * (rho_t - 2) * ri / ((ri - 4) * (ri - 2) * rho_t))
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            if rect is None:
                update = m_hat
            else:
                update = rect * m_hat * math.sqrt(1 - b2t) / (np.sqrt(v) + self.eps)
            p.value = (p.value - lr * update).astype(p.value.dtype)


def dataset_loss(net: ToyNet, samples: list[Sample], w: losses.LossWeights = losses.LossWeights(), batch: int = 8) -> float:
    """Sample-weighted mean of the role loss over ``samples`` (no gradients kept)."""
    total = 0.0
    for i in range(0, len(samples), batch):
        chunk = samples[i : i + batch]
        pred = forward(net, role_input(net.role, chunk))
        total += float(role_loss(net.role, ad.Tensor(pred.value), chunk, w).value) * len(chunk)
    return total / len(samples)


def train(net: ToyNet, samples: list[Sample], cfg: TrainConfig = TrainConfig()) -> tuple[ToyNet, list[float]]:
    """Run ``cfg.steps`` RAdam steps on the role loss; returns a trained copy and per-step losses."""
    net = net.copy()
    if cfg.steps == 0:
        return net, []
    if not samples:
        raise ValueError("empty dataset")
    params = [p for _, p in net.parameters()]
    opt = RAdam(params, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    batch = min(cfg.batch, len(samples))
    curve = []
    for step in range(cfg.steps):
        idx = rng.choice(len(samples), size=batch, replace=False)
        chunk = [samples[i] for i in sorted(idx)]
        for p in params:
            p.zero_grad()
        pred = forward(net, role_input(net.role, chunk))
        loss = role_loss(net.role, pred, chunk, cfg.weights)
        value = float(loss.value)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite {net.role} loss {value} at step {step}")
        loss.backward()
        opt.step(cosine_lr(step, cfg.steps, cfg.learning_rate))
        curve.append(value)
        if step % 100 == 0:
            log.debug("%s step %d loss %.6f", net.role, step, value)
    return net, curve


@dataclass
class Pipeline:
    shading: ToyNet
    albedo: ToyNet
    refinement: ToyNet


def train_pipeline(samples: list[Sample], cfg: TrainConfig = TrainConfig(), seed: int = 0) -> tuple[Pipeline, dict[str, list[float]]]:
    """Train shading and albedo nets, then refinement on their frozen predictions."""
    curves = {}
    shading, curves["shading"] = train(build("shading", seed), samples, cfg)
    albedo, curves["albedo"] = train(build("albedo", seed + 1), samples, cfg)
    refine_set = attach_upstream(samples, shading, albedo)
    refinement, curves["refinement"] = train(build("refinement", seed + 2), refine_set, cfg)
    return Pipeline(shading, albedo, refinement), curves


# --- inference ----------------------------------------------------------------


def reconstruct(ldr, inv_shading_ldr, albedo_ldr, mask, nets: Pipeline) -> dict[str, np.ndarray]:
    """Run the three stages on (C, H, W) or (N, C, H, W) inputs.

    Returns the HDR inverse shading, HDR albedo, intrinsic HDR estimate,
    its inverse, the refined inverse HDR image and the final HDR image, all
    in the same layout as the inputs.
    """
    single = np.ndim(ldr) == 3
    ldr, inv_shading_ldr, albedo_ldr, mask = (
        np.asarray(a, dtype=np.float32)[None] if single else np.asarray(a, dtype=np.float32)
        for a in (ldr, inv_shading_ldr, albedo_ldr, mask)
    )
    if not (ldr.shape[-2:] == inv_shading_ldr.shape[-2:] == albedo_ldr.shape[-2:] == mask.shape[-2:]):
        raise ValueError("input dims differ")
    d = forward(nets.shading, stack_inputs("shading", ldr=ldr, inv_shading_ldr=inv_shading_ldr)).value
    a = forward(nets.albedo, stack_inputs("albedo", ldr=ldr, albedo_ldr=albedo_ldr, mask=mask)).value
    blocks = refinement_blocks(d, a)
    j = forward(nets.refinement, stack_inputs("refinement", ldr=ldr, **blocks)).value.astype(np.float64)
    out = {
        "inv_shading_hdr": d,
        "albedo_hdr": a,
        "hdr_intrinsic": blocks["albedo_hdr"].astype(np.float64) * (1.0 - d.astype(np.float64)) / d,
        "inv_hdr_inferred": blocks["inv_hdr_inferred"],
        "inv_hdr": j,
        "hdr": (1.0 - j) / j,
    }
    if single:
        out = {k: v[0] for k, v in out.items()}
    return out


def reconstruct_sample(sample: Sample, nets: Pipeline) -> dict[str, np.ndarray]:
    return reconstruct(sample.ldr, sample.inv_shading_ldr, sample.albedo_ldr, sample.mask, nets)
