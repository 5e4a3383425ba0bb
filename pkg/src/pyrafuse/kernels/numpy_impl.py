"""Pure-numpy reference implementations of the hot kernels.

Every function here has a numba twin in `numba_impl` with the same
signature. Shapes are pre-flattened by the callers: row-wise kernels take
2-D arrays (rows, features), element-wise kernels take 1-D arrays.
Parameter-gradient reductions accumulate in float64 regardless of the
working precision.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def softmax_fwd(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    y = np.exp(x - m)
    y /= y.sum(axis=-1, keepdims=True)
    return y


def softmax_bwd(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    dot = (y * gy).sum(axis=-1, keepdims=True)
    return y * (gy - dot)


def layernorm_fwd(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat * gain + bias
    return y, xhat, rstd[..., 0]


def layernorm_bwd(gy: np.ndarray, xhat: np.ndarray, rstd: np.ndarray, gain: np.ndarray):
    gxhat = gy * gain
    m1 = gxhat.mean(axis=-1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
    gx = (gxhat - m1 - xhat * m2) * rstd[..., None]
    dgain = np.sum(gy * xhat, axis=0, dtype=np.float64).astype(gy.dtype)
    dbias = np.sum(gy, axis=0, dtype=np.float64).astype(gy.dtype)
    return gx, dgain, dbias


def gelu_fwd(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return gy * (cdf + x * pdf)


def adam_update(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray,
                t: int, lr: float, b1: float, b2: float, eps: float) -> None:
    """Bias-corrected Adam step, in place on p/m/v."""
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
