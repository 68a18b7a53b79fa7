"""Forward/backward primitives on NCHW arrays.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward`` takes
the upstream gradient and the cache. Arithmetic stays in the input dtype, so
float64 inputs give a float64 path for gradient verification.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    pass


def conv2d_forward(x, w, b):
    """Cross-correlation with zero 'same' padding; ``w`` is (O, C, k, k) with k in {1, 3}."""
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if ci != c or k != k2 or k not in (1, 3) or b.shape != (o,):
        raise DimensionError(f"conv2d: input {x.shape}, weights {w.shape}, bias {b.shape}")
    if k == 1:
        cols = x.transpose(0, 2, 3, 1).reshape(-1, c)
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = sliding_window_view(xp, (3, 3), axis=(2, 3))        # (N, C, H, W, 3, 3)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(-1, c * 9)
    out = cols @ w.reshape(o, -1).T + b
    out = out.reshape(n, h, wd, o).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (x.shape, cols, w)


def conv2d_backward(dout, cache):
    x_shape, cols, w = cache
    n, c, h, wd = x_shape
    o, _, k, _ = w.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if k == 1:
        dx = (d2 @ w.reshape(o, c)).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(dx), dw, db
    # input gradient = 'same' correlation of dout with the flipped, transposed kernel
    w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx, _ = conv2d_forward(dout, w_t, np.zeros(c, dtype=dout.dtype))
    return dx, dw, db


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_forward(x):
    y = sigmoid(x)
    return y, y


def sigmoid_backward(dout, y):
    return dout * y * (1.0 - y)


def maxpool2x2_forward(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool2x2_backward(dout, cache):
    shape, arg = cache
    n, c, h, w = shape
    dblocks = np.zeros(dout.shape + (4,), dtype=dout.dtype)
    np.put_along_axis(dblocks, arg[..., None], dout[..., None], axis=-1)
    dx = dblocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)
    return dx


def upsample2x_forward(x):
    return x.repeat(2, axis=2).repeat(2, axis=3), x.shape


def upsample2x_backward(dout, shape):
    n, c, h, w = shape
    return dout.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def l2_loss(pred, target):
    """Mean squared error and its gradient ``2 (pred - target) / N``."""
    if pred.shape != target.shape:
        raise DimensionError(f"l2_loss: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff, dtype=np.float64)), (2.0 / diff.size) * diff


def fuse_forward(weight, short, long):
    """Per-pixel convex combination ``W * long + (1 - W) * short``; W is (N, 1, H, W)."""
    if weight.shape[1] != 1 or weight.shape[2:] != short.shape[2:] or short.shape != long.shape:
        raise DimensionError(f"fuse: weight {weight.shape}, short {short.shape}, long {long.shape}")
    return weight * long + (1.0 - weight) * short, (short, long)


def fuse_backward(dout, cache):
    short, long = cache
    return np.sum(dout * (long - short), axis=1, keepdims=True)
