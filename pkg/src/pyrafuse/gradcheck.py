"""Finite-difference verification of every kernel and of the end-to-end
tiny model, in 64-bit.

Each component builds a deterministic scalar loss over a set of leaf
tensors; the analytic gradients from the tape are compared against
central differences (f(x+h) - f(x-h)) / 2h coordinate by coordinate with
the error measure |analytic - numeric| / max(1, |numeric|).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fusion, revin
from .model import Forecaster, ModelConfig
from .numerics import (ComplexSpectrum, Tensor, avg_pool1d, backward, concat,
                       div, exp, gelu, irfft, layer_norm, matmul, mul,
                       no_grad, rfft, softmax, sqrt, square, sub, tmean,
                       tsum, upsample_linear, using_dtype)

DEFAULT_STEP = 1e-5
KERNEL_THRESHOLD = 1e-4
COMPOSITE_THRESHOLD = 1e-3


@dataclass
class ComponentResult:
    name: str
    worst_rel_err: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.worst_rel_err < self.threshold


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def _const(rng, *shape):
    return rng.standard_normal(shape)


def _weighted_sum(t: Tensor, weights: np.ndarray) -> Tensor:
    return tsum(mul(t, Tensor(weights, dtype=np.float64)))


def _numeric_grad(loss_fn: Callable[[], float], arr: np.ndarray,
                  h: float) -> np.ndarray:
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return g


def check(params: list[Tensor], loss_fn: Callable[[], Tensor],
          h: float = DEFAULT_STEP) -> float:
    """Worst relative error over every coordinate of every parameter."""
    loss = loss_fn()
    for p in params:
        p.zero_grad()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    def scalar_loss() -> float:
        with no_grad():
            return loss_fn().item()

    worst = 0.0
    for p, a in zip(params, analytic):
        n = _numeric_grad(scalar_loss, p.data, h)
        err = np.abs(a - n) / np.maximum(1.0, np.abs(n))
        worst = max(worst, float(err.max()))
    return worst


# -- component builders ----------------------------------------------------


def _build_matmul(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 4, 5)
    r = _const(rng, 3, 5)
    return [a, b], lambda: _weighted_sum(matmul(a, b), r)


def _build_softmax(rng):
    x = _rand(rng, 3, 7)
    r = _const(rng, 3, 7)
    return [x], lambda: _weighted_sum(softmax(x, axis=-1), r)


def _build_layer_norm(rng):
    x, gain, bias = _rand(rng, 4, 6), _rand(rng, 6), _rand(rng, 6)
    r = _const(rng, 4, 6)
    return [x, gain, bias], lambda: _weighted_sum(layer_norm(x, gain, bias, 1e-5), r)


def _build_avg_pool(rng):
    x = _rand(rng, 2, 8, 3)
    r = _const(rng, 2, 4, 3)
    return [x], lambda: _weighted_sum(avg_pool1d(x), r)


def _build_upsample(rng):
    x = _rand(rng, 2, 5, 3)
    r = _const(rng, 2, 10, 3)
    return [x], lambda: _weighted_sum(upsample_linear(x, 10), r)


def _build_rfft(rng):
    x = _rand(rng, 2, 12)
    r1, r2 = _const(rng, 2, 7), _const(rng, 2, 7)

    def loss():
        spec = rfft(x, axis=-1)
        return _weighted_sum(spec.real, r1) + _weighted_sum(spec.imag, r2)

    return [x], loss


def _build_irfft(rng):
    # imaginary DC/Nyquist bins are structurally zero, so only the free
    # coordinates are leaves
    re = _rand(rng, 2, 7)
    im_free = _rand(rng, 2, 5)
    zero = Tensor(np.zeros((2, 1)), dtype=np.float64)
    r = _const(rng, 2, 12)

    def loss():
        im = concat([zero, im_free, zero], axis=-1)
        return _weighted_sum(irfft(ComplexSpectrum(re, im, 12, 1)), r)

    return [re, im_free], loss


def _build_elementwise(rng):
    x = _rand(rng, 3, 5)
    y = Tensor(rng.standard_normal((3, 5)) + 3.0, requires_grad=True, dtype=np.float64)
    r = _const(rng, 3, 5)

    def loss():
        t = mul(x, y) + div(x, y) - sub(x, y)
        t = t + gelu(x) + exp(mul(x, 0.3)) + sqrt(square(y))
        return _weighted_sum(t, r)

    return [x, y], loss


def _build_reductions(rng):
    x = _rand(rng, 4, 5)
    r0, r1 = _const(rng, 5), _const(rng, 4)

    def loss():
        return (_weighted_sum(tsum(x, axis=0), r0)
                + _weighted_sum(tmean(x, axis=1), r1)
                + mul(tmean(x), 0.5))

    return [x], loss


def _build_revin(rng):
    x = _const(rng, 2, 6, 3)
    gain = Tensor(1.0 + 0.1 * rng.standard_normal(3), requires_grad=True,
                  dtype=np.float64)
    bias = _rand(rng, 3)
    r1 = _const(rng, 2, 6, 3)
    r2 = _const(rng, 2, 6, 3)

    def loss():
        normed, state = revin.normalize(x, gain, bias, eps=1e-5)
        back = revin.denormalize(mul(normed, 0.7), state)
        return _weighted_sum(normed, r1) + _weighted_sum(back, r2)

    return [gain, bias], loss


def _build_cross_attention(rng):
    attn = fusion.CrossAttention(4, 2, rng, np.float64)
    q = _rand(rng, 2, 3, 4)
    kv = _rand(rng, 2, 3, 4)
    r = _const(rng, 2, 3, 4)
    params = [q, kv] + [p for _, p in attn.named_parameters()]
    return params, lambda: _weighted_sum(attn(q, kv), r)


def _build_fusion_block(rng):
    block = fusion.FusionBlock(4, 6, 2, rng, np.float64)
    h_t = _rand(rng, 2, 4, 4)
    h_f = _rand(rng, 2, 4, 4)
    r1 = _const(rng, 2, 4, 4)
    r2 = _const(rng, 2, 4, 4)

    def loss():
        out_t, out_f = block(h_t, h_f)
        return _weighted_sum(out_t, r1) + _weighted_sum(out_f, r2)

    params = [h_t, h_f] + [p for _, p in block.named_parameters()]
    return params, loss


def _tiny_config(variant: str = "full") -> ModelConfig:
    return ModelConfig(C=2, L_in=8, L_pred=4, S=2, d_model=8, heads=2,
                       d_ff=8, dropout=0.0, variant=variant)


def _build_model(rng, variant: str = "full"):
    model = Forecaster(_tiny_config(variant), dtype=np.float64, seed=7)
    x = _const(rng, 2, 8, 2)
    r = _const(rng, 2, 4, 2)
    params = [p for _, p in model.named_parameters()]
    return params, lambda: _weighted_sum(model.forward(x).tensor, r)


COMPONENTS: list[tuple[str, float, Callable]] = [
    ("matmul", KERNEL_THRESHOLD, _build_matmul),
    ("softmax", KERNEL_THRESHOLD, _build_softmax),
    ("layer_norm", KERNEL_THRESHOLD, _build_layer_norm),
    ("avg_pool1d", KERNEL_THRESHOLD, _build_avg_pool),
    ("upsample_linear", KERNEL_THRESHOLD, _build_upsample),
    ("rfft", KERNEL_THRESHOLD, _build_rfft),
    ("irfft", KERNEL_THRESHOLD, _build_irfft),
    ("elementwise", KERNEL_THRESHOLD, _build_elementwise),
    ("reductions", KERNEL_THRESHOLD, _build_reductions),
    ("revin", KERNEL_THRESHOLD, _build_revin),
    ("cross_attention", COMPOSITE_THRESHOLD, _build_cross_attention),
    ("fusion_block", COMPOSITE_THRESHOLD, _build_fusion_block),
    ("model", COMPOSITE_THRESHOLD, _build_model),
]


def run_suite(seed: int = 0, names: list[str] | None = None) -> list[ComponentResult]:
    """Check every component (or the named subset); deterministic for a
    fixed seed."""
    results = []
    with using_dtype(np.float64):
        for i, (name, threshold, builder) in enumerate(COMPONENTS):
            if names is not None and name not in names:
                continue
            rng = np.random.default_rng([seed, i])
            params, loss_fn = builder(rng)
            worst = check(params, loss_fn)
            results.append(ComponentResult(name, worst, threshold))
    return results


def format_report(results: list[ComponentResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  worst rel err {r.worst_rel_err:.3e}  "
                     f"(threshold {r.threshold:.0e})  {status}")
    return "\n".join(lines)
