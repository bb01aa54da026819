"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` records the operation that produced it; ``Tensor.backward``
walks the recorded graph in reverse topological order and accumulates exact
analytic gradients into every tensor created with ``requires_grad=True``.

Images flowing through the network and the losses use the (N, C, H, W)
layout. Spatial ops (``avgpool2``, ``upsample2``, ``grad_x``, ``grad_y``)
act on the last two axes, so any leading shape works.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

GUARD = 1e-12


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.value = np.asarray(value) if isinstance(value, (np.ndarray, np.generic)) else np.asarray(value, dtype=np.float64)
        if not np.issubdtype(self.value.dtype, np.floating):
            self.value = self.value.astype(np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Populate ``.grad`` on every ancestor that requires a gradient."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in reversed(node._parents):
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.value)
        grads: dict[int, np.ndarray] = {id(self): self.grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node is not self:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                # gradients follow the parent's precision (float32 nets stay float32)
                pg = np.asarray(pg).astype(parent.value.dtype, copy=False)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    def zero_grad(self) -> None:
        self.grad = None

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __pow__ = lambda self, p: pow(self, p)
    __neg__ = lambda self: neg(self)


def tensor(x, requires_grad: bool = False) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x), requires_grad)


def _const(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}") from None


def _guard(x: np.ndarray) -> np.ndarray:
    """Replace values within GUARD of zero by +-GUARD (sign of zero counts as +)."""
    return np.where(np.abs(x) < GUARD, np.where(x < 0, -GUARD, GUARD), x)


# --- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _const(a, b if isinstance(b, Tensor) else None), _const(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b)
    return Tensor(
        a.value + b.value,
        _parents=(a, b),
        _backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _const(a, b if isinstance(b, Tensor) else None), _const(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b)
    return Tensor(
        a.value - b.value,
        _parents=(a, b),
        _backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.value, _parents=(a,), _backward=lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _const(a, b if isinstance(b, Tensor) else None), _const(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b)
    return Tensor(
        a.value * b.value,
        _parents=(a, b),
        _backward=lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _const(a, b if isinstance(b, Tensor) else None), _const(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b)
    den = _guard(b.value)
    out = a.value / den

    def backward(g):
        return _unbroadcast(g / den, a.shape), _unbroadcast(-g * out / den, b.shape)

    return Tensor(out, _parents=(a, b), _backward=backward)


def pow(a: Tensor, p: float) -> Tensor:
    """``a ** p`` for a constant exponent ``p``."""
    a = _const(a)
    p = float(p)
    out = a.value**p

    def backward(g):
        if p == 0.0:
            return (np.zeros_like(g),)
        base = a.value if p >= 1.0 else _guard(a.value)
        return (g * p * base ** (p - 1.0),)

    return Tensor(out, _parents=(a,), _backward=backward)


def clampmin(a: Tensor, lo: float) -> Tensor:
    """``max(a, lo)``; the gradient passes only where ``a > lo``."""
    mask = a.value > lo
    return Tensor(
        np.where(mask, a.value, np.asarray(lo, dtype=a.dtype)),
        _parents=(a,),
        _backward=lambda g: (g * mask,),
    )


def relu(a: Tensor) -> Tensor:
    return clampmin(a, 0.0)


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return Tensor(np.abs(a.value), _parents=(a,), _backward=lambda g: (g * np.sign(a.value),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return Tensor(out, _parents=(a,), _backward=lambda g: (g * out * (1.0 - out),))


# --- reductions -------------------------------------------------------------


def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out, _parents=(a,), _backward=backward)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.value.size if axis is None else a.shape[axis]
    out = np.sum(a.value, axis=axis, keepdims=keepdims) / n

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return Tensor(out, _parents=(a,), _backward=backward)


# --- spatial ----------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along the channel axis (axis 1 for NCHW)."""
    tensors = [_const(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor(
        np.concatenate([t.value for t in tensors], axis=axis),
        _parents=tuple(tensors),
        _backward=lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def avgpool2(a: Tensor) -> Tensor:
    """2x2 mean pooling over the last two axes; odd trailing rows/cols dropped."""
    h, w = a.shape[-2:]
    if h < 2 or w < 2:
        raise ValueError("image too small")
    h2, w2 = h // 2, w // 2
    v = a.value[..., : 2 * h2, : 2 * w2]
    out = ((v[..., 0::2, 0::2] + v[..., 0::2, 1::2]) + (v[..., 1::2, 0::2] + v[..., 1::2, 1::2])) / 4.0

    def backward(g):
        gi = np.zeros_like(a.value)
        q = g / 4.0
        for dy in (0, 1):
            for dx in (0, 1):
                gi[..., dy : 2 * h2 : 2, dx : 2 * w2 : 2] = q
        return (gi,)

    return Tensor(out, _parents=(a,), _backward=backward)


def upsample2(a: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling over the last two axes."""
    out = np.repeat(np.repeat(a.value, 2, axis=-2), 2, axis=-1)

    def backward(g):
        return (((g[..., 0::2, 0::2] + g[..., 0::2, 1::2]) + (g[..., 1::2, 0::2] + g[..., 1::2, 1::2])),)

    return Tensor(out, _parents=(a,), _backward=backward)


def grad_x(a: Tensor) -> Tensor:
    """Forward difference along the last axis; last column is 0."""
    out = np.zeros_like(a.value)
    out[..., :-1] = a.value[..., 1:] - a.value[..., :-1]

    def backward(g):
        gi = np.zeros_like(a.value)
        gi[..., 1:] += g[..., :-1]
        gi[..., :-1] -= g[..., :-1]
        return (gi,)

    return Tensor(out, _parents=(a,), _backward=backward)


def grad_y(a: Tensor) -> Tensor:
    """Forward difference along the second-to-last axis; last row is 0."""
    out = np.zeros_like(a.value)
    out[..., :-1, :] = a.value[..., 1:, :] - a.value[..., :-1, :]

    def backward(g):
        gi = np.zeros_like(a.value)
        gi[..., 1:, :] += g[..., :-1, :]
        gi[..., :-1, :] -= g[..., :-1, :]
        return (gi,)

    return Tensor(out, _parents=(a,), _backward=backward)


def _patches(x: np.ndarray, k: int) -> np.ndarray:
    """(N, C, H, W) -> (C*k*k, N*H*W) patches of the zero-padded input."""
    n, c, h, w = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c, k, k, n, h, w), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, dy, dx] = xp[:, :, dy : dy + h, dx : dx + w].transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * h * w)


def _conv_same(x: np.ndarray, wmat: np.ndarray, k: int, cols: np.ndarray | None = None) -> np.ndarray:
    n, _, h, w = x.shape
    if cols is None:
        cols = _patches(x, k)
    out = wmat @ cols
    return np.ascontiguousarray(out.reshape(-1, n, h, w).transpose(1, 0, 2, 3))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 'same' convolution (zero padding) of NCHW input with OIkk weights."""
    x, weight = _const(x), _const(weight)
    if x.value.ndim != 4 or weight.value.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input and OIkk weight, got {x.shape}, {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_w, k, k2 = weight.shape
    if cin != cin_w or k != k2 or k % 2 == 0:
        raise ValueError(f"shape mismatch: input {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"shape mismatch: bias {bias.shape} for {cout} outputs")
    cols = _patches(x.value, k)
    wmat = weight.value.reshape(cout, -1)
    out = _conv_same(x.value, wmat, k, cols)
    if bias is not None:
        out = out + bias.value[:, None, None]

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(cout, n * h * w)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            # input gradient = 'same' correlation with the flipped, transposed kernel
            wt = weight.value[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, -1)
            gx = _conv_same(g, wt, k)
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor(out, _parents=parents, _backward=backward)


# --- verification -----------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5, fd_dtype=np.longdouble) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor. The reverse-mode gradient is taken
    at float64; the central differences are evaluated in ``fd_dtype``
    (extended precision by default) so that one-ulp cancellation noise stays
    far below the ``1e-8`` floor of the relative error
    ``|fd - ad| / max(|fd|, |ad|, 1e-8)``.
    """
    x0 = np.array(x, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    y = f(xt)
    if y.value.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.isfinite(y.value).all():
        raise FloatingPointError("non-finite function value at x")
    y.backward()
    ad = np.zeros_like(x0) if xt.grad is None else xt.grad

    xe = x0.astype(fd_dtype)
    step = fd_dtype(h)
    fd = np.empty(x0.shape, dtype=fd_dtype)
    flat, fd_flat = xe.reshape(-1), fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(Tensor(xe.copy())).value.reshape(())
        flat[i] = orig - step
        fm = f(Tensor(xe.copy())).value.reshape(())
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value near coordinate {i}")
        fd_flat[i] = (fp - fm) / (2 * step)

    fd = fd.astype(np.float64)
    err = np.abs(fd - ad) / np.maximum(np.maximum(np.abs(fd), np.abs(ad)), 1e-8)
    return float(err.max(initial=0.0))
