"""Reversible instance normalization.

Standardizes each (instance, channel) of the input window by its own
mean/std, optionally applies a learnable per-channel affine, and inverts
the whole transform on the forecast using the stored statistics. The
statistics are detached: gradients flow only through the affine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError
from .numerics import Tensor, as_tensor, div, mul

DEFAULT_EPS = 1e-5


@dataclass
class RevinState:
    """Per-(instance, channel) statistics plus the affine used to normalize."""

    mean: np.ndarray          # (B, 1, C)
    std: np.ndarray           # (B, 1, C), >= sqrt(eps)
    gain: Tensor | None       # (C,) learnable, None when affine disabled
    bias: Tensor | None       # (C,)
    eps: float


def make_affine(num_channels: int, dtype=np.float32) -> tuple[Tensor, Tensor]:
    """Learnable per-channel gain (ones) and bias (zeros)."""
    gain = Tensor(np.ones(num_channels, dtype=dtype), requires_grad=True)
    bias = Tensor(np.zeros(num_channels, dtype=dtype), requires_grad=True)
    return gain, bias


def normalize(x, gain: Tensor | None = None, bias: Tensor | None = None,
              eps: float = DEFAULT_EPS) -> tuple[Tensor, RevinState]:
    """Standardize a (B, L_in, C) window per instance and channel.

    Returns the normalized tensor and the state needed to invert it.
    Statistics come from the input window only.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"expected (B, L_in, C), got {x.shape}")
    if x.shape[1] < 2:
        raise DimensionError(f"need L_in >= 2 to estimate variance, got {x.shape[1]}")
    # statistics in float64, cast once: keeps constant channels exactly at
    # zero and the inverse bit-consistent with the forward
    x64 = x.data.astype(np.float64, copy=False)
    mean = x64.mean(axis=1, keepdims=True).astype(x.dtype)
    var = x64.var(axis=1, keepdims=True)
    std = np.sqrt(var + eps).astype(x.dtype)
    base = Tensor((x.data - mean) / std, dtype=x.dtype)
    if gain is not None:
        out = mul(base, gain) + bias
    else:
        out = base
    return out, RevinState(mean=mean, std=std, gain=gain, bias=bias, eps=eps)


def denormalize(y_norm, state: RevinState) -> Tensor:
    """Exact algebraic inverse of `normalize` on a (B, L_pred, C) forecast."""
    y = as_tensor(y_norm)
    if y.ndim != 3 or y.shape[0] != state.mean.shape[0] or y.shape[2] != state.mean.shape[2]:
        raise DimensionError(
            f"forecast shape {y.shape} incompatible with stored statistics "
            f"{state.mean.shape}")
    if state.gain is not None:
        if np.any(state.gain.data == 0):
            raise NumericalError("revin gain contains zeros: affine is singular")
        y = div(y - state.bias, state.gain)
    return mul(y, state.std) + state.mean
