"""Training loop (MSE objective, Adam, early stopping) and MSE/MAE
evaluation over sliding-window splits.

Everything is deterministic given the config seed: batch order, dropout
masks, and optimizer state evolve from fixed seed sequences, and metric
accumulation always runs in window order with float64 accumulators.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import WindowSampler
from .errors import ConfigError, DimensionError, NumericalError
from .model import Forecaster
from .numerics import Tensor, backward, no_grad, square, sub, tmean


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    grad_clip_norm: float = 5.0
    seed: int = 0

    def validate(self) -> None:
        problems = []
        if self.lr <= 0:
            problems.append(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            problems.append(f"betas must be in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.eps <= 0:
            problems.append(f"eps must be positive, got {self.eps}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            problems.append(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 1 <= self.patience <= self.max_epochs:
            problems.append(
                f"patience must be in [1, max_epochs], got {self.patience}")
        if self.grad_clip_norm <= 0:
            problems.append(f"grad_clip_norm must be positive, got {self.grad_clip_norm}")
        if problems:
            raise ConfigError("invalid train config: " + "; ".join(problems))


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean over all elements of the squared difference."""
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise DimensionError(f"loss shapes differ: {pred.shape} vs {target.shape}")
    return tmean(square(sub(pred, Tensor(target, dtype=pred.dtype))))


class Adam:
    """Bias-corrected Adam over a named parameter dict, with global-norm
    gradient clipping before each update.

    The global norm is accumulated in name-sorted order, so the update is
    invariant to the insertion order of the parameter dict.
    """

    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        self.params = dict(params)
        self.cfg = cfg
        self.t = 0
        for p in self.params.values():
            if not p.data.flags.c_contiguous:
                p.data = np.ascontiguousarray(p.data)  # updates run on flat views
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        cfg = self.cfg
        grads: dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in parameter {name!r}")
            grads[name] = g
        sq = {name: float(np.sum(g.astype(np.float64) ** 2))
              for name, g in grads.items()}
        total = float(np.sqrt(sum(sq[name] for name in sorted(sq))))
        if total > cfg.grad_clip_norm:
            scale = cfg.grad_clip_norm / total
            grads = {name: g * np.asarray(scale, dtype=g.dtype)
                     for name, g in grads.items()}
        self.t += 1
        for name, p in self.params.items():
            kernels.adam_update(
                p.data.reshape(-1), np.ascontiguousarray(grads[name]).reshape(-1),
                self.m[name].reshape(-1), self.v[name].reshape(-1),
                self.t, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)


@dataclass
class EvalReport:
    """Metrics in the standardized space; optionally original-unit metrics
    filled in by the CLI when scaler statistics are available.

    `record()` is the canonical, byte-stable serialization: it excludes
    wall-clock, which is measurement metadata and would break the
    bit-identical-reports determinism contract.
    """

    split: str
    horizon: int
    mse: float
    mae: float
    num_windows: int
    config_fingerprint: str
    wall_clock_s: float = 0.0
    mse_original: float | None = None
    mae_original: float | None = None

    def record(self) -> str:
        payload = {
            "split": self.split,
            "horizon": self.horizon,
            "mse": self.mse,
            "mae": self.mae,
            "num_windows": self.num_windows,
            "config_fingerprint": self.config_fingerprint,
        }
        if self.mse_original is not None:
            payload["mse_original"] = self.mse_original
            payload["mae_original"] = self.mae_original
        return json.dumps(payload, sort_keys=True)


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_state: dict[str, np.ndarray] | None = None
    best_val: float = float("inf")
    best_epoch: int = -1
    epochs_run: int = 0
    steps: int = 0
    stopped_early: bool = False
    diverged: bool = False

    def history_records(self) -> list[str]:
        return [json.dumps(rec, sort_keys=True) for rec in self.history]


def _epoch_seed(seed: int, epoch: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, epoch])


def train(model: Forecaster, train_sampler: WindowSampler,
          val_sampler: WindowSampler, cfg: TrainConfig,
          max_steps: int | None = None) -> TrainResult:
    """Run the optimization; returns the best-validation state and the
    per-epoch loss history. Stops early after `patience` epochs without a
    validation improvement, or immediately on a non-finite train loss
    (returning the last good state)."""
    cfg.validate()
    opt = Adam(model.parameters(), cfg)
    dropout_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xD0]))
    result = TrainResult()
    bad_epochs = 0
    for epoch in range(1, cfg.max_epochs + 1):
        sq_sum = 0.0
        n_batches = 0
        shuffle_seed = _epoch_seed(cfg.seed, epoch)
        for batch in train_sampler.batches(cfg.batch_size, shuffle_seed=shuffle_seed):
            fc = model.forward(batch.inputs, train=True, rng=dropout_rng)
            loss = mse_loss(fc.tensor, batch.targets)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                result.diverged = True
                if result.best_state is not None:
                    model.load_state(result.best_state)
                result.epochs_run = epoch
                return result
            opt.zero_grad()
            backward(loss)
            opt.step()
            result.steps += 1
            sq_sum += loss_val
            n_batches += 1
            if max_steps is not None and result.steps >= max_steps:
                break
        train_mse = sq_sum / max(n_batches, 1)
        val = evaluate(model, val_sampler, batch_size=cfg.batch_size)
        result.history.append({"epoch": epoch, "train_mse": train_mse,
                               "val_mse": val.mse, "val_mae": val.mae})
        result.epochs_run = epoch
        if val.mse < result.best_val:
            result.best_val = val.mse
            result.best_epoch = epoch
            result.best_state = model.state_arrays()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                result.stopped_early = True
                break
        if max_steps is not None and result.steps >= max_steps:
            break
    if result.best_state is not None:
        model.load_state(result.best_state)
    return result


def evaluate(model: Forecaster, sampler: WindowSampler,
             batch_size: int = 32, scaler=None) -> EvalReport:
    """Sequential pass over every window of the split; MSE/MAE averaged
    over all windows and elements, in the standardized space. Passing the
    dataset scaler adds original-unit metrics. Never mutates parameters."""
    started = time.perf_counter()
    sq = ab = 0.0
    sq_orig = ab_orig = 0.0
    count = 0
    std = None if scaler is None else scaler.std.astype(np.float64)
    with no_grad():
        for batch in sampler.batches(batch_size):
            fc = model.forward(batch.inputs, train=False)
            diff = fc.values.astype(np.float64) - batch.targets.astype(np.float64)
            sq += float(np.sum(diff * diff))
            ab += float(np.sum(np.abs(diff)))
            count += diff.size
            if std is not None:
                orig = diff * std
                sq_orig += float(np.sum(orig * orig))
                ab_orig += float(np.sum(np.abs(orig)))
    return EvalReport(
        split=sampler.which, horizon=sampler.L_pred,
        mse=sq / count, mae=ab / count, num_windows=sampler.num_windows,
        config_fingerprint=model.config.fingerprint(),
        wall_clock_s=time.perf_counter() - started,
        mse_original=None if std is None else sq_orig / count,
        mae_original=None if std is None else ab_orig / count)
