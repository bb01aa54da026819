"""Tiny encoder-decoder networks for the shading, albedo and refinement stages.

Each network is a 3-level U-Net (widths 16/32/64, 3x3 convolutions, 2x2
average pooling, nearest upsampling, skip connections by concatenation) with
a sigmoid head, so every output lies in (0, 1).

With ``anchored=True`` the head adds ``logit(anchor)`` before the sigmoid,
where the anchor is the stage's own low-dynamic-range estimate taken from
the input stack (D_L, A_L, or the inferred inverse HDR image). A network
whose head weights are all zero then reproduces its anchor exactly.

Logits are clamped to +-15 so float32 outputs stay strictly inside (0, 1).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ROLES = ("shading", "albedo", "refinement")
IN_CHANNELS = {"shading": 4, "albedo": 7, "refinement": 10}
OUT_CHANNELS = {"shading": 1, "albedo": 3, "refinement": 3}
# input channel blocks, in stacking order
INPUT_LAYOUT = {
    "shading": (("ldr", 3), ("inv_shading_ldr", 1)),
    "albedo": (("ldr", 3), ("albedo_ldr", 3), ("mask", 1)),
    "refinement": (("ldr", 3), ("inv_hdr_inferred", 3), ("inv_shading_hdr", 1), ("albedo_hdr", 3)),
}
ANCHOR_CHANNELS = {"shading": slice(3, 4), "albedo": slice(3, 6), "refinement": slice(3, 6)}
WIDTHS = (16, 32, 64)
KERNEL = 3
POOLS = 2
ANCHOR_CLIP = 1e-6
# sigmoid(+-15) stays strictly inside (0, 1) even in float32
LOGIT_LIMIT = 15.0
DEFAULT_HEAD_GAIN = 0.1

LAYERS = ("enc1", "enc2", "enc3", "dec2", "dec1", "head")

CKPT_MAGIC = b"IHDRCKPT"
CKPT_VERSION = 1
ANCHORED_FLAG = 0x100


class CheckpointError(ValueError):
    pass


def _layer_shapes(role: str) -> dict[str, tuple[int, int]]:
    c1, c2, c3 = WIDTHS
    return {
        "enc1": (IN_CHANNELS[role], c1),
        "enc2": (c1, c2),
        "enc3": (c2, c3),
        "dec2": (c3 + c2, c2),
        "dec1": (c2 + c1, c1),
        "head": (c1, OUT_CHANNELS[role]),
    }


@dataclass
class ToyNet:
    role: str
    params: dict[str, Tensor] = field(repr=False)
    anchored: bool = True

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}; expected one of {ROLES}")

    @property
    def in_channels(self) -> int:
        return IN_CHANNELS[self.role]

    @property
    def out_channels(self) -> int:
        return OUT_CHANNELS[self.role]

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [(name, self.params[name]) for name in self.param_names()]

    def param_names(self) -> list[str]:
        return [f"{layer}.{kind}" for layer in LAYERS for kind in ("weight", "bias")]

    def num_parameters(self) -> int:
        return sum(p.value.size for _, p in self.parameters())

    def copy(self) -> "ToyNet":
        return ToyNet(
            self.role,
            {k: Tensor(v.value.copy(), requires_grad=True) for k, v in self.params.items()},
            self.anchored,
        )

    def __call__(self, x) -> Tensor:
        return forward(self, x)


def build(
    role: str,
    seed: int = 0,
    anchored: bool = True,
    zero_head: bool = False,
    head_gain: float = DEFAULT_HEAD_GAIN,
    dtype=np.float32,
) -> ToyNet:
    """He-initialised network for ``role``; biases start at zero.

    The head is scaled by ``head_gain`` (or zeroed with ``zero_head``) so a
    fresh anchored network starts close to its anchor.
    """
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}; expected one of {ROLES}")
    rng = np.random.default_rng(seed)
    params = {}
    for layer, (cin, cout) in _layer_shapes(role).items():
        fan_in = cin * KERNEL * KERNEL
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, KERNEL, KERNEL))
        if layer == "head":
            w = np.zeros_like(w) if zero_head else w * head_gain
        params[f"{layer}.weight"] = Tensor(w.astype(dtype), requires_grad=True)
        params[f"{layer}.bias"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
    return ToyNet(role, params, anchored)


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), ANCHOR_CLIP, 1.0 - ANCHOR_CLIP)
    return np.log(p) - np.log1p(-p)


def forward(net: ToyNet, x) -> Tensor:
    """Run ``net`` on an (N, C, H, W) input stack; returns a sigmoid-bounded Tensor."""
    x = ad.tensor(x)
    if x.value.ndim == 3:
        x = Tensor(x.value[None])
    if x.value.ndim != 4 or x.shape[1] != net.in_channels:
        raise ValueError(f"{net.role} net expects (N, {net.in_channels}, H, W) input, got {x.shape}")
    h, w = x.shape[-2:]
    step = 2**POOLS
    if h % step or w % step:
        raise ValueError(f"spatial dims must be divisible by {step}, got {h}x{w}")
    p = net.params

    def conv(layer, t):
        return ad.conv2d(t, p[f"{layer}.weight"], p[f"{layer}.bias"])

    e1 = ad.relu(conv("enc1", x))
    e2 = ad.relu(conv("enc2", ad.avgpool2(e1)))
    e3 = ad.relu(conv("enc3", ad.avgpool2(e2)))
    d2 = ad.relu(conv("dec2", ad.concat([ad.upsample2(e3), e2])))
    d1 = ad.relu(conv("dec1", ad.concat([ad.upsample2(d2), e1])))
    logits = conv("head", d1)
    if net.anchored:
        anchor = x.value[:, ANCHOR_CHANNELS[net.role]]
        logits = logits + _logit(anchor).astype(logits.dtype)
    # min(max(z, -L), L), written with clampmin so gradients pass inside the band
    logits = -ad.clampmin(-ad.clampmin(logits, -LOGIT_LIMIT), -LOGIT_LIMIT)
    return ad.sigmoid(logits)


def stack_inputs(role: str, **blocks) -> np.ndarray:
    """Concatenate named (N, C, H, W) or (C, H, W) blocks in the role's channel order."""
    parts = []
    for name, channels in INPUT_LAYOUT[role]:
        if name not in blocks:
            raise ValueError(f"{role} input is missing {name!r}")
        arr = np.asarray(blocks[name])
        if arr.shape[-3] != channels:
            raise ValueError(f"{role} input {name!r} needs {channels} channels, got {arr.shape[-3]}")
        parts.append(arr)
    return np.concatenate(parts, axis=-3)


# --- checkpoints ------------------------------------------------------------
#
# Little-endian layout:
#   magic b"IHDRCKPT" | version u32 | role tag u32 | layer count u32
#   per parameter: ndim u32 | dims u32 * ndim | float32 values, row-major
# The role tag is the index into ROLES, with ANCHORED_FLAG or'ed in for
# input-anchored heads. Parameters are stored in ToyNet.param_names() order.


def write_checkpoint(net: ToyNet, path) -> None:
    params = net.parameters()
    tag = ROLES.index(net.role) | (ANCHORED_FLAG if net.anchored else 0)
    chunks = [CKPT_MAGIC, struct.pack("<III", CKPT_VERSION, tag, len(params))]
    for _, t in params:
        arr = np.ascontiguousarray(t.value, dtype="<f4")
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path) -> ToyNet:
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic at byte 0")
    if len(buf) < 20:
        raise CheckpointError(f"{path}: truncated header")
    version, tag, count = struct.unpack_from("<III", buf, 8)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    role_idx = tag & 0xFF
    if role_idx >= len(ROLES):
        raise CheckpointError(f"{path}: unknown role tag {tag}")
    role = ROLES[role_idx]
    anchored = bool(tag & ANCHORED_FLAG)
    names = ToyNet(role, {}, anchored).param_names()
    if count != len(names):
        raise CheckpointError(f"{path}: expected {len(names)} layers, found {count}")

    expected = {}
    for layer, (cin, cout) in _layer_shapes(role).items():
        expected[f"{layer}.weight"] = (cout, cin, KERNEL, KERNEL)
        expected[f"{layer}.bias"] = (cout,)

    offset = 20
    params = {}
    for name in names:
        try:
            (ndim,) = struct.unpack_from("<I", buf, offset)
            shape = struct.unpack_from(f"<{ndim}I", buf, offset + 4)
        except struct.error:
            raise CheckpointError(f"{path}: truncated layer header at byte {offset}") from None
        offset += 4 + 4 * ndim
        if tuple(shape) != expected[name]:
            raise CheckpointError(f"{path}: layer {name} has shape {shape}, expected {expected[name]}")
        nbytes = 4 * int(np.prod(shape))
        if offset + nbytes > len(buf):
            raise CheckpointError(f"{path}: truncated payload at byte {offset}")
        arr = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
        params[name] = Tensor(arr.astype(np.float32), requires_grad=True)
        offset += nbytes
    if offset != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - offset} trailing bytes at byte {offset}")
    return ToyNet(role, params, anchored)
