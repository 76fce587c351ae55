"""Differentiable primitives on float64 arrays.

Each forward function ``f`` has a companion ``f_backward`` that maps the
upstream gradient (plus whatever forward values it needs) to gradients with
respect to the inputs. Leading batch axes are broadcast where the math
allows it; parameter gradients are summed over them.
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateEmbeddingError, DimensionError

LN_EPS = 1e-5


def _sum_to(g, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# matmul ----------------------------------------------------------------------

def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def matmul_backward(dout, a, b):
    da = dout @ np.swapaxes(b, -1, -2)
    db = np.swapaxes(a, -1, -2) @ dout
    return _sum_to(da, a.shape), _sum_to(db, b.shape)


# elementwise -----------------------------------------------------------------

def add(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    return a + b


def add_backward(dout, a_shape, b_shape):
    return _sum_to(dout, a_shape), _sum_to(dout, b_shape)


def scale(x, s):
    return x * s


def scale_backward(dout, s):
    return dout * s


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def transpose(x):
    return np.swapaxes(x, -1, -2)


def transpose_backward(dout):
    return np.swapaxes(dout, -1, -2)


# shape ops -------------------------------------------------------------------

def concat(xs, axis=0):
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or any(
            x.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)
        ):
            raise DimensionError(f"concat: shape {x.shape} incompatible with {ref} along axis {axis}")
    return np.concatenate(xs, axis=axis)


def concat_backward(dout, sizes, axis=0):
    return split(dout, sizes, axis=axis)


def split(x, sizes, axis=0):
    if sum(sizes) != x.shape[axis]:
        raise DimensionError(f"split: sizes {list(sizes)} do not sum to extent {x.shape[axis]}")
    cuts = np.cumsum(sizes)[:-1]
    return np.split(x, cuts, axis=axis)


def split_backward(douts, axis=0):
    return np.concatenate(douts, axis=axis)


# reductions ------------------------------------------------------------------

def mean(x, axis=None):
    return x.mean(axis=axis)


def mean_backward(dout, x_shape, axis=None):
    if axis is None:
        return np.full(x_shape, dout / np.prod(x_shape))
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    axes = tuple(a % len(x_shape) for a in axes)
    n = np.prod([x_shape[a] for a in axes])
    return np.broadcast_to(np.expand_dims(dout, axes) / n, x_shape).copy()


def row_mean(x):
    return x.mean(axis=-1)


def row_mean_backward(dout, x_shape):
    return mean_backward(dout, x_shape, axis=-1)


# softmax ---------------------------------------------------------------------

def softmax_rows(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(dout, y):
    """Gradient of the row softmax given its output ``y``."""
    return y * (dout - (dout * y).sum(axis=-1, keepdims=True))


def log_softmax_rows(x):
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# layer norm ------------------------------------------------------------------

def layer_norm(x, gamma, beta, eps=LN_EPS):
    if x.shape[-1] < 2:
        raise DimensionError("layer_norm needs at least two features per row")
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError(f"layer_norm: gamma/beta {gamma.shape}/{beta.shape} vs rows of width {x.shape[-1]}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * gamma + beta


def layer_norm_backward(dout, x, gamma, eps=LN_EPS):
    d = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    lead = tuple(range(x.ndim - 1))
    dgamma = (dout * xhat).sum(axis=lead)
    dbeta = dout.sum(axis=lead)
    dxhat = dout * gamma
    dx = inv / d * (
        d * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


# feed-forward ----------------------------------------------------------------

def two_layer(x, w1, b1, w2, b2):
    """``relu(x w1 + b1) w2 + b2`` without constraining the output width."""
    if w1.shape[0] != x.shape[-1] or w2.shape[0] != w1.shape[1]:
        raise DimensionError(f"two_layer: x {x.shape}, w1 {w1.shape}, w2 {w2.shape} do not chain")
    return relu(x @ w1 + b1) @ w2 + b2


def two_layer_backward(dout, x, w1, b1, w2):
    pre = x @ w1 + b1
    hid = relu(pre)
    lead = tuple(range(x.ndim - 1))
    dw2 = np.tensordot(hid, dout, axes=(lead, lead))
    db2 = dout.sum(axis=lead)
    dpre = relu_backward(dout @ w2.T, pre)
    dw1 = np.tensordot(x, dpre, axes=(lead, lead))
    db1 = dpre.sum(axis=lead)
    dx = dpre @ w1.T
    return dx, dw1, db1, dw2, db2


def feed_forward(x, w1, b1, w2, b2):
    """Transformer feed-forward: two dense layers, ReLU after the first only."""
    if w2.shape[-1] != x.shape[-1]:
        raise DimensionError(f"feed_forward: output width {w2.shape[-1]} != input width {x.shape[-1]}")
    return two_layer(x, w1, b1, w2, b2)


feed_forward_backward = two_layer_backward


# unit sphere -----------------------------------------------------------------

def l2_normalize_rows(x):
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    if np.any(n == 0):
        raise DegenerateEmbeddingError("cannot normalize a zero row onto the unit sphere")
    return x / n


def l2_normalize_rows_backward(dout, x):
    n = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    y = x / n
    return (dout - y * (dout * y).sum(axis=-1, keepdims=True)) / n
