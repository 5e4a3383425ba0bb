"""Numba-compiled twins of the numpy kernels.

Row-parallel loops: each prange row is written by exactly one thread and
reduced sequentially, so results are deterministic for a fixed input.
Element-wise math runs in float64 and is stored back in the working dtype.
fastmath stays off: the numerics contracts depend on IEEE semantics.
"""

import math

import numpy as np
from numba import njit, prange

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(cache=True, parallel=True)
def softmax_fwd(x):
    rows, cols = x.shape
    y = np.empty_like(x)
    for r in prange(rows):
        m = x[r, 0]
        for c in range(1, cols):
            if x[r, c] > m:
                m = x[r, c]
        s = 0.0
        for c in range(cols):
            e = math.exp(x[r, c] - m)
            y[r, c] = e
            s += e
        inv = 1.0 / s
        for c in range(cols):
            y[r, c] = y[r, c] * inv
    return y


@njit(cache=True, parallel=True)
def softmax_bwd(y, gy):
    rows, cols = y.shape
    gx = np.empty_like(y)
    for r in prange(rows):
        dot = 0.0
        for c in range(cols):
            dot += y[r, c] * gy[r, c]
        for c in range(cols):
            gx[r, c] = y[r, c] * (gy[r, c] - dot)
    return gx


@njit(cache=True, parallel=True)
def layernorm_fwd(x, gain, bias, eps):
    rows, dim = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(rows, dtype=x.dtype)
    for r in prange(rows):
        s = 0.0
        for d in range(dim):
            s += x[r, d]
        mu = s / dim
        acc = 0.0
        for d in range(dim):
            t = x[r, d] - mu
            acc += t * t
        inv = 1.0 / math.sqrt(acc / dim + eps)
        for d in range(dim):
            h = (x[r, d] - mu) * inv
            xhat[r, d] = h
            y[r, d] = h * gain[d] + bias[d]
        rstd[r] = inv
    return y, xhat, rstd


@njit(cache=True, parallel=True)
def layernorm_bwd(gy, xhat, rstd, gain):
    rows, dim = gy.shape
    gx = np.empty_like(gy)
    for r in prange(rows):
        m1 = 0.0
        m2 = 0.0
        for d in range(dim):
            gh = gy[r, d] * gain[d]
            m1 += gh
            m2 += gh * xhat[r, d]
        m1 /= dim
        m2 /= dim
        for d in range(dim):
            gh = gy[r, d] * gain[d]
            gx[r, d] = (gh - m1 - xhat[r, d] * m2) * rstd[r]
    dgain64 = np.zeros(dim, dtype=np.float64)
    dbias64 = np.zeros(dim, dtype=np.float64)
    for r in range(rows):
        for d in range(dim):
            dgain64[d] += gy[r, d] * xhat[r, d]
            dbias64[d] += gy[r, d]
    return gx, dgain64.astype(gy.dtype), dbias64.astype(gy.dtype)


@njit(cache=True, parallel=True)
def gelu_fwd(x):
    n = x.size
    y = np.empty_like(x)
    for i in prange(n):
        v = x[i]
        y[i] = 0.5 * v * (1.0 + math.erf(v * _INV_SQRT2))
    return y


@njit(cache=True, parallel=True)
def gelu_bwd(x, gy):
    n = x.size
    gx = np.empty_like(x)
    for i in prange(n):
        v = x[i]
        cdf = 0.5 * (1.0 + math.erf(v * _INV_SQRT2))
        pdf = math.exp(-0.5 * v * v) * _INV_SQRT2PI
        gx[i] = gy[i] * (cdf + v * pdf)
    return gx


@njit(cache=True)
def adam_update(p, g, m, v, t, lr, b1, b2, eps):
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for i in range(p.size):
        mi = b1 * m[i] + (1.0 - b1) * g[i]
        vi = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        m[i] = mi
        v[i] = vi
        p[i] = p[i] - lr * (mi / bc1) / (math.sqrt(vi / bc2) + eps)
