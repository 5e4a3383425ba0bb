"""Forecaster assembly: instance norm -> dual pyramid -> coarse-to-fine
fusion -> prediction head -> inverse instance norm, plus the ablation
variants and a binary checkpoint format."""

from __future__ import annotations

import ast
import hashlib
import json
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from . import revin
from .errors import (ConfigError, DimensionError, IncompatibleCheckpointError,
                     MalformedCheckpointError, NumericalError)
from .fusion import FusionStack, Linear, _prefixed
from .numerics import Tensor, matmul, reshape, slice_axis, swapaxes, tmean
from .pyramid import (BAND_ORDERS, DualPyramid, build_frequency_pyramid,
                      build_temporal_pyramid, make_band_partition)

VARIANTS = ("full", "temporal_only", "frequency_only", "no_cross_fusion")
POOLS = ("mean", "last")

CHECKPOINT_MAGIC = b"PYRAFUSE"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Every architectural hyperparameter, with defaults for the ones the
    protocol leaves open."""

    C: int
    L_in: int = 96
    L_pred: int = 96
    S: int = 4
    d_model: int = 64
    heads: int = 4
    d_ff: int = 128
    dropout: float = 0.1
    variant: str = "full"
    revin_affine: bool = True
    revin_eps: float = 1e-5
    band_order: str = "low_first"
    pool: str = "mean"

    def validate(self) -> None:
        problems = []
        if self.C < 1:
            problems.append(f"C must be >= 1, got {self.C}")
        if self.L_pred < 1:
            problems.append(f"L_pred must be >= 1, got {self.L_pred}")
        if self.S < 2:
            problems.append(f"S must be >= 2, got {self.S}")
        elif self.L_in < 2 or self.L_in % (2 ** (self.S - 1)) != 0:
            problems.append(
                f"L_in mod 2^(S-1) must be 0: L_in={self.L_in}, S={self.S}, "
                f"2^(S-1)={2 ** (self.S - 1)}")
        if self.heads < 1 or self.d_model % max(self.heads, 1) != 0:
            problems.append(
                f"heads must divide d_model: heads={self.heads}, d_model={self.d_model}")
        if self.d_ff < 1:
            problems.append(f"d_ff must be >= 1, got {self.d_ff}")
        if not 0.0 <= self.dropout < 1.0:
            problems.append(f"dropout must be in [0, 1), got {self.dropout}")
        if self.variant not in VARIANTS:
            problems.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.band_order not in BAND_ORDERS:
            problems.append(
                f"band_order must be one of {BAND_ORDERS}, got {self.band_order!r}")
        if self.pool not in POOLS:
            problems.append(f"pool must be one of {POOLS}, got {self.pool!r}")
        if self.revin_eps <= 0:
            problems.append(f"revin_eps must be positive, got {self.revin_eps}")
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))

    def canonical(self) -> str:
        """Stable key=value serialization used for fingerprinting."""
        pairs = sorted((f.name, getattr(self, f.name)) for f in fields(self))
        return "\n".join(f"{k}={v!r}" for k, v in pairs) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @staticmethod
    def from_canonical(text: str) -> "ModelConfig":
        values = {}
        for line in text.strip().splitlines():
            key, _, raw = line.partition("=")
            values[key] = ast.literal_eval(raw)
        return ModelConfig(**values)

    @property
    def level_lengths(self) -> list[int]:
        return [self.L_in // (2 ** s) for s in range(self.S)]


@dataclass
class Forecast:
    """Model output in the units of the model input, plus the pre-inverse
    (normalized) values and the graph node for loss construction."""

    values: np.ndarray              # (B, L_pred, C)
    normalized: np.ndarray          # (B, L_pred, C), before inverse instance norm
    tensor: Tensor = field(repr=False, default=None)


class Forecaster:
    """The full dual-pyramid forecaster (or one of its ablation variants)."""

    def __init__(self, config: ModelConfig, dtype=np.float32, seed: int = 0):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype).type
        rng = np.random.default_rng(seed)
        if config.revin_affine:
            self.revin_gain, self.revin_bias = revin.make_affine(config.C, self.dtype)
        else:
            self.revin_gain = self.revin_bias = None
        self.stack = FusionStack(
            config.level_lengths, config.d_model, config.d_ff, config.heads,
            rng, self.dtype, cross_fusion=(config.variant != "no_cross_fusion"))
        self.head = Linear(config.d_model, config.L_pred, rng, self.dtype)
        self.partition = make_band_partition(config.L_in // 2 + 1, config.S)
        self.last_attention: list | None = None
        self.last_scale_outputs: list | None = None

    # -- parameters ---------------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        if self.revin_gain is not None:
            out += [("revin.gain", self.revin_gain), ("revin.bias", self.revin_bias)]
        out += self.stack.named_parameters()
        out += _prefixed("head", self.head)
        return out

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_params(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise MalformedCheckpointError(f"missing parameter arrays: {missing}")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != p.shape:
                raise IncompatibleCheckpointError(
                    f"parameter {name}: stored shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    # -- forward --------------------------------------------------------------

    def _build_pyramid(self, x_norm) -> DualPyramid:
        cfg = self.config
        variant = cfg.variant
        temporal = None
        frequency = None
        if variant != "frequency_only":
            temporal = build_temporal_pyramid(x_norm, cfg.S)
        if variant != "temporal_only":
            frequency = build_frequency_pyramid(x_norm, self.partition,
                                                band_order=cfg.band_order)
        if variant == "temporal_only":
            return DualPyramid(temporal=temporal, frequency=list(temporal))
        if variant == "frequency_only":
            return DualPyramid(temporal=list(frequency), frequency=frequency)
        return DualPyramid(temporal=temporal, frequency=frequency)

    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None,
                collect_attention: bool = False, collect_scales: bool = False) -> Forecast:
        cfg = self.config
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 3 or x.shape[1] != cfg.L_in or x.shape[2] != cfg.C:
            raise DimensionError(
                f"input shape {x.shape} does not match (B, {cfg.L_in}, {cfg.C})")
        if not np.all(np.isfinite(x)):
            raise NumericalError("input window contains non-finite values")
        b = x.shape[0]
        x_norm, state = revin.normalize(x, self.revin_gain, self.revin_bias,
                                        eps=cfg.revin_eps)
        pyramid = self._build_pyramid(x_norm)
        probe = [] if collect_attention else None
        scales = [] if collect_scales else None
        h0 = self.stack(pyramid, p_drop=cfg.dropout, rng=rng, train=train,
                        probe=probe, scale_outputs=scales)
        self.last_attention = probe
        self.last_scale_outputs = scales
        if cfg.pool == "mean":
            pooled = tmean(h0, axis=1)
        else:
            pooled = reshape(slice_axis(h0, 1, cfg.L_in - 1, cfg.L_in),
                             (b * cfg.C, cfg.d_model))
        raw = matmul(pooled, self.head.weight) + self.head.bias
        y_norm = swapaxes(reshape(raw, (b, cfg.C, cfg.L_pred)), 1, 2)
        y = revin.denormalize(y_norm, state)
        return Forecast(values=y.data, normalized=y_norm.data, tensor=y)


def make_variant(config: ModelConfig, dtype=np.float32, seed: int = 0) -> Forecaster:
    """Build the configured variant (validates the variant name)."""
    if config.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {config.variant!r}; choose from {VARIANTS}")
    return Forecaster(config, dtype=dtype, seed=seed)


# -- checkpoint io -------------------------------------------------------------
#
# Layout: magic, u32 version, u32-prefixed fingerprint, u32-prefixed
# canonical config text, u32-prefixed JSON manifest [{name, dtype, shape}],
# then raw little-endian array data in manifest order.

_LE = {"float32": "<f4", "float64": "<f8"}


def _write_block(fh, payload: bytes) -> None:
    fh.write(struct.pack("<I", len(payload)))
    fh.write(payload)


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise MalformedCheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def _read_block(fh, what: str) -> bytes:
    (n,) = struct.unpack("<I", _read_exact(fh, 4, what + " length"))
    return _read_exact(fh, n, what)


def save_checkpoint(path, config: ModelConfig,
                    arrays: dict[str, np.ndarray],
                    extras: dict[str, np.ndarray] | None = None) -> None:
    """Write parameters (and optional auxiliary arrays) with a config
    fingerprint; the round trip is bit-exact."""
    entries = [("param/" + k, np.asarray(v)) for k, v in arrays.items()]
    for k, v in (extras or {}).items():
        entries.append(("extra/" + k, np.asarray(v)))
    manifest = [{"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape)}
                for name, arr in entries]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        _write_block(fh, config.fingerprint().encode())
        _write_block(fh, config.canonical().encode())
        _write_block(fh, json.dumps(manifest).encode())
        for (_, arr), meta in zip(entries, manifest):
            fh.write(arr.astype(_LE[meta["dtype"]]).tobytes())


def load_checkpoint(path, expected_config: ModelConfig | None = None):
    """Read a checkpoint; returns (config, params, extras).

    Raises MalformedCheckpointError on corrupt files and
    IncompatibleCheckpointError when expected_config has a different
    fingerprint than the one stored.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise MalformedCheckpointError(
                f"bad magic bytes {magic!r}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise MalformedCheckpointError(f"unsupported checkpoint version {version}")
        fingerprint = _read_block(fh, "fingerprint").decode()
        config_text = _read_block(fh, "config").decode()
        try:
            config = ModelConfig.from_canonical(config_text)
        except Exception as exc:
            raise MalformedCheckpointError(f"unreadable embedded config: {exc}") from exc
        if config.fingerprint() != fingerprint:
            raise MalformedCheckpointError("embedded config does not match fingerprint")
        if expected_config is not None and expected_config.fingerprint() != fingerprint:
            raise IncompatibleCheckpointError(
                "checkpoint was written for a different model config "
                f"(stored {fingerprint[:12]}..., expected "
                f"{expected_config.fingerprint()[:12]}...)")
        try:
            manifest = json.loads(_read_block(fh, "manifest").decode())
        except json.JSONDecodeError as exc:
            raise MalformedCheckpointError(f"corrupt manifest: {exc}") from exc
        params: dict[str, np.ndarray] = {}
        extras: dict[str, np.ndarray] = {}
        for meta in manifest:
            if meta["dtype"] not in _LE:
                raise MalformedCheckpointError(f"unsupported dtype {meta['dtype']}")
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * np.dtype(_LE[meta["dtype"]]).itemsize
            arr = np.frombuffer(_read_exact(fh, nbytes, meta["name"]),
                                dtype=_LE[meta["dtype"]]).astype(meta["dtype"])
            arr = arr.reshape(shape)
            name = meta["name"]
            if name.startswith("param/"):
                params[name[len("param/"):]] = arr
            elif name.startswith("extra/"):
                extras[name[len("extra/"):]] = arr
            else:
                raise MalformedCheckpointError(f"unknown manifest namespace: {name}")
        if fh.read(1):
            raise MalformedCheckpointError("trailing bytes after array data")
    return config, params, extras
