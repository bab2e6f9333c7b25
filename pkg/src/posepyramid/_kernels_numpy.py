"""Pure-numpy reference kernels. Shapes: row-major (rows, channels)."""

from __future__ import annotations

import numpy as np


def softmax_fwd(x: np.ndarray) -> np.ndarray:
    # max-subtraction for stability
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    inner = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - inner)


def layernorm_fwd(x, scale, shift, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * scale + shift
    return y, mean[:, 0], inv[:, 0]


def layernorm_bwd(x, mean, inv, scale, gy):
    xhat = (x - mean[:, None]) * inv[:, None]
    gscale = (gy * xhat).sum(axis=0)
    gshift = gy.sum(axis=0)
    gxhat = gy * scale
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = inv[:, None] * (gxhat - m1 - xhat * m2)
    return gx, gscale, gshift


def adam_update(p, g, m, v, lr, beta1, beta2, eps, t):
    # in-place on p, m, v; t is the already-incremented step counter
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
