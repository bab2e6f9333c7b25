"""Numba-jitted kernels, semantically matching _kernels_numpy.

Single-threaded sequential loops: deterministic run-to-run. cache=True so the
JIT cost is paid once per machine.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def softmax_fwd(x):
    rows, cols = x.shape
    y = np.empty_like(x)
    for r in range(rows):
        hi = x[r, 0]
        for c in range(1, cols):
            if x[r, c] > hi:
                hi = x[r, c]
        total = 0.0
        for c in range(cols):
            e = math.exp(x[r, c] - hi)
            y[r, c] = e
            total += e
        inv = 1.0 / total
        for c in range(cols):
            y[r, c] *= inv
    return y


@njit(cache=True)
def softmax_bwd(y, gy):
    rows, cols = y.shape
    gx = np.empty_like(y)
    for r in range(rows):
        inner = 0.0
        for c in range(cols):
            inner += gy[r, c] * y[r, c]
        for c in range(cols):
            gx[r, c] = y[r, c] * (gy[r, c] - inner)
    return gx


@njit(cache=True)
def layernorm_fwd(x, scale, shift, eps):
    rows, cols = x.shape
    y = np.empty_like(x)
    mean = np.empty(rows)
    inv = np.empty(rows)
    for r in range(rows):
        mu = 0.0
        for c in range(cols):
            mu += x[r, c]
        mu /= cols
        var = 0.0
        for c in range(cols):
            d = x[r, c] - mu
            var += d * d
        var /= cols
        iv = 1.0 / math.sqrt(var + eps)
        mean[r] = mu
        inv[r] = iv
        for c in range(cols):
            y[r, c] = (x[r, c] - mu) * iv * scale[c] + shift[c]
    return y, mean, inv


@njit(cache=True)
def layernorm_bwd(x, mean, inv, scale, gy):
    rows, cols = x.shape
    gx = np.empty_like(x)
    gscale = np.zeros(cols)
    gshift = np.zeros(cols)
    for r in range(rows):
        mu = mean[r]
        iv = inv[r]
        m1 = 0.0
        m2 = 0.0
        for c in range(cols):
            xhat = (x[r, c] - mu) * iv
            gh = gy[r, c] * scale[c]
            m1 += gh
            m2 += gh * xhat
            gscale[c] += gy[r, c] * xhat
            gshift[c] += gy[r, c]
        m1 /= cols
        m2 /= cols
        for c in range(cols):
            xhat = (x[r, c] - mu) * iv
            gh = gy[r, c] * scale[c]
            gx[r, c] = iv * (gh - m1 - xhat * m2)
    return gx, gscale, gshift


@njit(cache=True)
def adam_update(p, g, m, v, lr, beta1, beta2, eps, t):
    n = p.size
    pf = p.reshape(n)
    gf = g.reshape(n)
    mf = m.reshape(n)
    vf = v.reshape(n)
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for i in range(n):
        mf[i] = beta1 * mf[i] + (1.0 - beta1) * gf[i]
        vf[i] = beta2 * vf[i] + (1.0 - beta2) * gf[i] * gf[i]
        mhat = mf[i] / c1
        vhat = vf[i] / c2
        pf[i] -= lr * mhat / (math.sqrt(vhat) + eps)
