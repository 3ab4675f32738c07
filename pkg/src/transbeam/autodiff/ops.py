"""Differentiable primitives. Each one returns a Tensor and records an exact VJP."""
import math

import numpy as np
from scipy.special import erf

from ..errors import DimensionError
from .tensor import Tensor, as_tensor, make

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
TN_EPS = 1e-5


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(a, b, what):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make(a.data + b.data, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make(a.data - b.data, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make(a.data * b.data, (a, b), vjp)


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    """Batched matrix product over the last two axes, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch axes of {a.shape} and {b.shape} differ")

    if b.ndim == 2 and a.ndim > 2:
        # shared weight: fold the batch axes into one GEMM
        m, n = b.shape
        a2 = a.data.reshape(-1, m)

        def vjp_w(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return make((a2 @ b.data).reshape(a.shape[:-1] + (n,)), (a, b), vjp_w)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make(a.data @ b.data, (a, b), vjp)


def swapaxes(a, ax1=-1, ax2=-2):
    a = as_tensor(a)
    return make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def transpose(a):
    """Swap the last two axes."""
    return swapaxes(a, -1, -2)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(xs, axis=0):
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise DimensionError("concat of nothing")
    try:
        data = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}")
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def vjp(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) if x.requires_grad else None
            for x, lo, hi in zip(xs, bounds[:-1], bounds[1:])
        )

    return make(data, tuple(xs), vjp)


def slice_(a, axis, start, stop):
    a = as_tensor(a)
    n = a.shape[axis]
    if not (0 <= start <= stop <= n):
        raise DimensionError(f"slice [{start}:{stop}] out of range for axis of length {n}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def vjp(g):
        out = np.zeros_like(a.data)
        out[idx] = g
        return (out,)

    # a contiguous copy keeps downstream matmuls on the BLAS fast path
    return make(np.ascontiguousarray(a.data[idx]), (a,), vjp)


def index(a, idx):
    """Basic (non-fancy) indexing."""
    a = as_tensor(a)

    def vjp(g):
        out = np.zeros_like(a.data)
        out[idx] = g
        return (out,)

    # a contiguous copy keeps downstream matmuls on the BLAS fast path
    return make(np.ascontiguousarray(a.data[idx]), (a,), vjp)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make(data, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(a):
    """Softmax along the last axis."""
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] == 0:
        raise DimensionError("softmax over an empty axis")
    y = a.data - a.data.max(axis=-1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make(y, (a,), vjp)


def gelu(a):
    """Exact GELU, x * Phi(x)."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))

    def vjp(g):
        return (g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)),)

    return make(x * cdf, (a,), vjp)


def token_norm(x, gain, bias, eps=TN_EPS):
    """Standardise each token (last axis) then apply ``gain``/``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 2:
        raise DimensionError("token_norm needs a feature dimension of at least 2")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"token_norm affine shapes must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def vjp(g):
        gx = ggain = gbias = None
        if x.requires_grad:
            dxhat = g * gain.data
            gx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            ggain = (g * xhat).sum(axis=lead)
        if bias.requires_grad:
            gbias = g.sum(axis=lead)
        return gx, ggain, gbias

    return make(xhat * gain.data + bias.data, (x, gain, bias), vjp)


def dropout(a, p, rng=None):
    """Inverted dropout. ``p == 0`` is the identity and draws nothing."""
    a = as_tensor(a)
    if p <= 0.0:
        return a
    if p >= 1.0:
        return make(np.zeros_like(a.data), (a,), lambda g: (np.zeros_like(g),))
    if rng is None:
        raise ValueError("dropout with p > 0 needs an explicit rng")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return make(a.data * mask, (a,), lambda g: (g * mask,))


def l2_norm(a, axis=None, keepdims=False):
    """Euclidean norm over ``axis`` (all axes when None)."""
    a = as_tensor(a)
    n = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(n > 0, a.data / n, 0.0)
        return (np.reshape(g, n.shape) * r,)

    out = n if keepdims else np.squeeze(n, axis=axis) if axis is not None else n.reshape(())
    return make(out, (a,), vjp)


def log2(a):
    a = as_tensor(a)
    x = a.data
    return make(np.log2(x), (a,), lambda g: (g / (x * math.log(2.0)),))


def reciprocal(a):
    a = as_tensor(a)
    y = 1.0 / a.data
    return make(y, (a,), lambda g: (-g * y * y,))


def square(a):
    a = as_tensor(a)
    x = a.data
    return make(x * x, (a,), lambda g: (2.0 * g * x,))


def maximum(a, c):
    """Elementwise max against a constant; the gradient goes to ``a`` where ``a > c``."""
    a = as_tensor(a)
    mask = a.data > c
    return make(np.where(mask, a.data, c), (a,), lambda g: (g * mask,))


def stop_gradient(a):
    return as_tensor(a).detach()


__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "swapaxes",
    "reshape",
    "concat",
    "slice_",
    "index",
    "sum_",
    "mean",
    "softmax",
    "gelu",
    "token_norm",
    "dropout",
    "l2_norm",
    "log2",
    "reciprocal",
    "square",
    "maximum",
    "stop_gradient",
]
