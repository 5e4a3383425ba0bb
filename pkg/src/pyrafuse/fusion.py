"""Cross-pyramid fusion: scale-specific embeddings, bidirectional
cross-attention blocks, and the coarse-to-fine stack with upsampled
residuals.

Channels are folded into the batch axis before embedding, so every
channel is an independent instance of length L_s; cross-channel structure
is out of scope by design. Each scale owns independent parameters.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import (Tensor, concat, dropout, gelu, layer_norm, matmul,
                       mul, reshape, slice_axis, softmax, swapaxes,
                       upsample_linear)
from .pyramid import DualPyramid


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in) if fan_in > 0 else 1.0
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear:
    """Affine map on the last axis."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, dtype):
        self.weight = Tensor(_uniform_init(rng, (fan_in, fan_out), fan_in, dtype),
                             requires_grad=True)
        self.bias = Tensor(_uniform_init(rng, (fan_out,), fan_in, dtype),
                           requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias

    def named_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class LayerNorm:
    """Learnable layer norm over the last axis."""

    def __init__(self, dim: int, dtype, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)

    def named_parameters(self):
        return [("gain", self.gain), ("bias", self.bias)]


def _prefixed(prefix: str, module) -> list[tuple[str, Tensor]]:
    return [(f"{prefix}.{name}", p) for name, p in module.named_parameters()]


class ScaleEmbedding:
    """Per-time-step affine 1 -> d_model plus a learned positional encoding."""

    def __init__(self, seq_len: int, d_model: int, rng: np.random.Generator, dtype):
        self.seq_len = seq_len
        self.proj = Linear(1, d_model, rng, dtype)
        self.pos = Tensor((0.02 * rng.standard_normal((seq_len, d_model))).astype(dtype),
                          requires_grad=True)

    def __call__(self, level: Tensor) -> Tensor:
        """(B, L_s, C) -> (B*C, L_s, d_model), channels folded into batch."""
        if level.ndim != 3 or level.shape[1] != self.seq_len:
            raise DimensionError(
                f"embedding for L={self.seq_len} got level of shape {level.shape}")
        b, length, c = level.shape
        folded = reshape(swapaxes(level, 1, 2), (b * c, length, 1))
        return self.proj(folded) + self.pos

    def named_parameters(self):
        return _prefixed("proj", self.proj) + [("pos", self.pos)]


class CrossAttention:
    """Standard multi-head scaled dot-product attention, query/key streams
    may differ."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, dtype):
        if d_model % heads != 0:
            raise ConfigError(f"heads={heads} must divide d_model={d_model}")
        self.d_model = d_model
        self.heads = heads
        self.head_dim = d_model // heads
        self.proj_q = Linear(d_model, d_model, rng, dtype)
        self.proj_k = Linear(d_model, d_model, rng, dtype)
        self.proj_v = Linear(d_model, d_model, rng, dtype)
        self.proj_o = Linear(d_model, d_model, rng, dtype)

    def _split_heads(self, x: Tensor) -> Tensor:
        b, length, _ = x.shape
        return swapaxes(reshape(x, (b, length, self.heads, self.head_dim)), 1, 2)

    def __call__(self, q_seq: Tensor, kv_seq: Tensor, *, attn_dropout: float = 0.0,
                 rng: np.random.Generator | None = None, train: bool = False,
                 probe: list | None = None) -> Tensor:
        if q_seq.shape[0] != kv_seq.shape[0] or q_seq.shape[2] != kv_seq.shape[2]:
            raise DimensionError(
                f"attention streams disagree: {q_seq.shape} vs {kv_seq.shape}")
        b, lq, _ = q_seq.shape
        q = self._split_heads(self.proj_q(q_seq))
        k = self._split_heads(self.proj_k(kv_seq))
        v = self._split_heads(self.proj_v(kv_seq))
        # scale q, not the (much larger) score matrix
        q = mul(q, 1.0 / np.sqrt(self.head_dim))
        scores = matmul(q, swapaxes(k, -1, -2))
        weights = softmax(scores, axis=-1)
        if probe is not None:
            probe.append(weights.data)
        weights = dropout(weights, attn_dropout, rng, train)
        context = matmul(weights, v)
        merged = reshape(swapaxes(context, 1, 2), (b, lq, self.d_model))
        return self.proj_o(merged)

    def named_parameters(self):
        out = []
        for tag, lin in (("q", self.proj_q), ("k", self.proj_k),
                         ("v", self.proj_v), ("o", self.proj_o)):
            out += _prefixed(tag, lin)
        return out


class FusionBlock:
    """Bidirectional cross-attention followed by concat + FFN deep fusion.

    With cross_fusion=False the attention exchanges are replaced by
    identity (each stream is only layer-normed) while the fusion FFN is
    kept, which is the "w/o cross-fusion" ablation.
    """

    def __init__(self, d_model: int, d_ff: int, heads: int,
                 rng: np.random.Generator, dtype, cross_fusion: bool = True):
        self.cross_fusion = cross_fusion
        self.attn_tf = CrossAttention(d_model, heads, rng, dtype)
        self.attn_ft = CrossAttention(d_model, heads, rng, dtype)
        self.norm_t = LayerNorm(d_model, dtype)
        self.norm_f = LayerNorm(d_model, dtype)
        self.ffn_in = Linear(2 * d_model, d_ff, rng, dtype)
        self.ffn_out = Linear(d_ff, 2 * d_model, rng, dtype)
        self.norm_fused = LayerNorm(2 * d_model, dtype)
        self.d_model = d_model

    def __call__(self, h_t: Tensor, h_f: Tensor, *, p_drop: float = 0.0,
                 rng: np.random.Generator | None = None, train: bool = False,
                 probe: list | None = None) -> tuple[Tensor, Tensor]:
        if h_t.shape != h_f.shape:
            raise DimensionError(f"stream shapes differ: {h_t.shape} vs {h_f.shape}")
        if self.cross_fusion:
            t2f = self.attn_tf(h_t, h_f, attn_dropout=p_drop, rng=rng,
                               train=train, probe=probe)
            f2t = self.attn_ft(h_f, h_t, attn_dropout=p_drop, rng=rng,
                               train=train, probe=probe)
            ht_n = self.norm_t(h_t + t2f)
            hf_n = self.norm_f(h_f + f2t)
        else:
            ht_n = self.norm_t(h_t)
            hf_n = self.norm_f(h_f)
        fused = concat([ht_n, hf_n], axis=-1)
        z = dropout(gelu(self.ffn_in(fused)), p_drop, rng, train)
        z = self.ffn_out(z)
        out = self.norm_fused(fused + z)
        d = self.d_model
        return (slice_axis(out, -1, 0, d), slice_axis(out, -1, d, 2 * d))

    def named_parameters(self):
        # attention params exist in every variant so the layout is uniform
        out = []
        out += _prefixed("attn_tf", self.attn_tf)
        out += _prefixed("attn_ft", self.attn_ft)
        out += _prefixed("norm_t", self.norm_t)
        out += _prefixed("norm_f", self.norm_f)
        out += _prefixed("ffn_in", self.ffn_in)
        out += _prefixed("ffn_out", self.ffn_out)
        out += _prefixed("norm_fused", self.norm_fused)
        return out


class FusionStack:
    """Scale embeddings plus fusion blocks, wired coarse-to-fine.

    The block at the coarsest scale S-1 takes the raw embeddings; every
    finer scale adds the upsampled fused outputs of the previous scale to
    its embeddings before running its own block. The finest temporal
    stream is the stack output.
    """

    def __init__(self, seq_lens: list[int], d_model: int, d_ff: int, heads: int,
                 rng: np.random.Generator, dtype, cross_fusion: bool = True):
        self.seq_lens = list(seq_lens)
        self.embed_t = [ScaleEmbedding(n, d_model, rng, dtype) for n in seq_lens]
        self.embed_f = [ScaleEmbedding(n, d_model, rng, dtype) for n in seq_lens]
        self.blocks = [FusionBlock(d_model, d_ff, heads, rng, dtype, cross_fusion)
                       for _ in seq_lens]

    def __call__(self, pyramid: DualPyramid, *, p_drop: float = 0.0,
                 rng: np.random.Generator | None = None, train: bool = False,
                 probe: list | None = None,
                 scale_outputs: list | None = None) -> Tensor:
        s_levels = pyramid.num_levels
        if s_levels != len(self.blocks):
            raise DimensionError(
                f"stack built for {len(self.blocks)} levels, pyramid has {s_levels}")
        bar_t = bar_f = None
        for s in range(s_levels - 1, -1, -1):
            h_t = self.embed_t[s](pyramid.temporal[s])
            h_f = self.embed_f[s](pyramid.frequency[s])
            if bar_t is not None:
                h_t = h_t + upsample_linear(bar_t, 2 * bar_t.shape[1])
                h_f = h_f + upsample_linear(bar_f, 2 * bar_f.shape[1])
            bar_t, bar_f = self.blocks[s](h_t, h_f, p_drop=p_drop, rng=rng,
                                          train=train, probe=probe)
            if scale_outputs is not None:
                scale_outputs.append((s, bar_t.data, bar_f.data))
        return bar_t

    def named_parameters(self):
        out = []
        for s, emb in enumerate(self.embed_t):
            out += _prefixed(f"embed_t.{s}", emb)
        for s, emb in enumerate(self.embed_f):
            out += _prefixed(f"embed_f.{s}", emb)
        for s, blk in enumerate(self.blocks):
            out += _prefixed(f"block.{s}", blk)
        return out
