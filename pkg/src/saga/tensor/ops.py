"""Differentiable ops over :class:`Tensor`.

Each op computes its output with numpy, rejects non-finite results, and, when
a graph is recording, registers a closure mapping the output gradient to the
input gradients.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ContractError, ParameterError, ShapeError
from .core import Tensor, active_graph, check_finite
from .prng import Prng

_GELU_C = math.sqrt(2.0 / math.pi)


def _wrap(x, like: np.ndarray | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _emit(op: str, data: np.ndarray, inputs, backward) -> Tensor:
    check_finite(data, op)
    out = Tensor(data, dtype=data.dtype)
    g = active_graph()
    if g is not None and any(t.requires_grad for t in inputs):
        g.record(op, inputs, out, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"axis {axis} out of range for rank-{x.ndim} tensor")
    return axis % x.ndim


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = _wrap(a, getattr(b, "data", None))
    b = _wrap(b, a.data)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _wrap(a, getattr(b, "data", None))
    b = _wrap(b, a.data)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit("sub", out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _wrap(a, getattr(b, "data", None))
    if not isinstance(b, Tensor):
        # scalar fast path keeps the tensor's dtype
        s = float(b)
        out = a.data * a.data.dtype.type(s)
        return _emit("scale", out, (a,), lambda g: (g * g.dtype.type(s),))
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit("mul", out, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximate GELU, ``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))``."""
    xd = x.data
    x2 = xd * xd
    th = np.tanh(_GELU_C * xd * (1.0 + 0.044715 * x2))
    out = 0.5 * xd * (1.0 + th)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * dinner),)

    return _emit("gelu", out.astype(xd.dtype, copy=False), (x,), backward)


def dropout(x: Tensor, rate: float, prng: Prng | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if prng is None:
        raise ContractError("training-mode dropout needs a Prng")
    # 32-bit uniforms compared in integer space
    n = x.size
    bits = prng.bits(-(-n // 2))
    u32 = np.empty(2 * bits.size, dtype=np.uint64)
    u32[0::2] = bits & np.uint64(0xFFFFFFFF)
    u32[1::2] = bits >> np.uint64(32)
    keep = (u32[:n] >= np.uint64(int(rate * 2 ** 32))).reshape(x.shape)
    scale = x.dtype.type(1.0 / (1.0 - rate))
    mask = keep * scale
    return _emit("dropout", x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batched over leading axes."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2 and a.ndim > 2:
            k, n = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return _unbroadcast(ga, a.shape), gb

    return _emit("matmul", out, (a, b), backward)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _emit("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def slice_(x: Tensor, key) -> Tensor:
    """Basic (view) indexing ``x.data[key]``."""
    out = x.data[key]
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[key] = g
        return (gx,)

    return _emit("slice", np.array(out, copy=True), (x,), backward)


def take(x: Tensor, index) -> Tensor:
    """Advanced indexing ``x.data[index]``; gradients scatter-add back."""
    out = np.array(x.data[index], copy=True)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _emit("take", out, (x,), backward)


# ---------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

    return _emit("sum", np.asarray(out, dtype=x.dtype), (x,), backward)


def mean(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Arithmetic mean along ``axis``; rank drops by one unless ``keepdims``."""
    axis = _check_axis(x, axis)
    n = x.shape[axis]
    if n == 0:
        raise ContractError("mean over an empty axis")
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    shape = x.shape
    inv = x.dtype.type(1.0 / n)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * inv, shape).copy(),)

    return _emit("mean", np.asarray(out, dtype=x.dtype), (x,), backward)


mean_pool = mean


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", p, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last extent {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        gx_hat = g * gamma.data
        gx = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                     - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return _emit("layer_norm", out, (x, gamma, beta), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` via log-sum-exp.

    ``logits`` is ``[n_c]`` with an integer label or ``[B, n_c]`` with ``B``
    labels.
    """
    single = logits.ndim == 1
    z = logits.data[None, :] if single else logits.data
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n_c = z.shape[-1]
    if lab.shape[0] != z.shape[0]:
        raise ShapeError(f"{lab.shape[0]} labels for {z.shape[0]} logit rows")
    if (lab < 0).any() or (lab >= n_c).any():
        raise IndexError(f"label out of range for {n_c} classes: {lab.tolist()}")
    m = z.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=-1))
    rows = np.arange(z.shape[0])
    out = (lse - z[rows, lab]).mean()

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[rows, lab] -= 1.0
        gz = p * (g / z.shape[0])
        return (gz[0] if single else gz,)

    return _emit("cross_entropy", np.asarray(out, dtype=logits.dtype), (logits,), backward)


def log_softmax(x: Tensor) -> np.ndarray:
    """Non-differentiable helper for inference code."""
    z = x.data if isinstance(x, Tensor) else np.asarray(x)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))
