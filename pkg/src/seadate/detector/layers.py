"""Convolution and pooling on ``(N, C, H, W)`` batches."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError


def _im2col3(x):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))          # (N, C, H, W, 3, 3)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def conv3x3(x, w, b):
    """Same-padded 3x3 convolution; ``w`` is ``(C_out, C_in, 3, 3)``.

    Returns ``(out, cols)``; ``cols`` is the im2col matrix reused by the
    backward pass.
    """
    n, c, h, wd = x.shape
    if w.shape[1:] != (c, 3, 3):
        raise DimensionError(f"conv3x3: input has {c} channels, kernel is {w.shape}")
    cols = _im2col3(x)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(n, h, wd, -1).transpose(0, 3, 1, 2), cols


def conv3x3_backward(dout, cols, x_shape, w):
    n, c, h, wd = x_shape
    cout = w.shape[0]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(cout, -1)).reshape(n, h, wd, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, wd + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + wd] += dcols[..., i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def conv1x1(x, w, b):
    """Pointwise convolution; ``w`` is ``(C_out, C_in)``."""
    if w.shape[1] != x.shape[1]:
        raise DimensionError(f"conv1x1: input has {x.shape[1]} channels, kernel is {w.shape}")
    return np.einsum("nchw,oc->nohw", x, w) + b[None, :, None, None]


def conv1x1_backward(dout, x, w):
    dw = np.einsum("nohw,nchw->oc", dout, x)
    db = dout.sum(axis=(0, 2, 3))
    dx = np.einsum("nohw,oc->nchw", dout, w)
    return dx, dw, db


def maxpool2(x):
    """2x2 max pooling with stride 2; returns ``(out, argmax)``."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2 needs even spatial extents, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0], idx


def maxpool2_backward(dout, idx, x_shape):
    n, c, h, w = x_shape
    blocks = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
    return blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)
