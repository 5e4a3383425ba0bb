"""Flat key=value run configuration with dotted sections.

A config file is diff-friendly text: one `key = value` per line, blank
lines and full-line # comments allowed. The CLI layers `--set key=value`
overrides on top, validates against the registry (unknown keys and type
errors are reported all at once), and writes the fully-resolved config
next to every run's outputs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

from .data import SPLIT_POLICIES
from .errors import ConfigError
from .model import POOLS, VARIANTS, ModelConfig
from .pyramid import BAND_ORDERS
from .trainer import TrainConfig

DATA_DIR_ENV = "PYRAFUSE_DATA_DIR"


@dataclass(frozen=True)
class Setting:
    key: str
    kind: str                  # int | float | bool | str | floats | ints
    default: object
    help: str
    choices: tuple | None = None


REGISTRY: dict[str, Setting] = {}


def _register(*settings: Setting) -> None:
    for s in settings:
        REGISTRY[s.key] = s


_register(
    Setting("seed", "int", 0, "master seed; all randomness derives from it"),
    Setting("data.path", "str", "", "dataset CSV (relative paths resolve against $" + DATA_DIR_ENV + ")"),
    Setting("data.split_policy", "str", "ratio_702010",
            "chronological split rule", tuple(SPLIT_POLICIES)),
    Setting("model.L_in", "int", 96, "look-back window length"),
    Setting("model.L_pred", "int", 96, "forecast horizon"),
    Setting("model.C", "int", 0, "channel count; 0 = infer from the dataset"),
    Setting("model.S", "int", 4, "pyramid levels"),
    Setting("model.d_model", "int", 64, "embedding width"),
    Setting("model.heads", "int", 4, "attention heads"),
    Setting("model.d_ff", "int", 128, "fusion FFN hidden width"),
    Setting("model.dropout", "float", 0.1, "dropout rate on attention weights and FFN hidden"),
    Setting("model.variant", "str", "full", "architecture variant", tuple(VARIANTS)),
    Setting("model.revin_affine", "bool", True, "learnable affine in instance norm"),
    Setting("model.revin_eps", "float", 1e-5, "instance norm variance epsilon"),
    Setting("model.band_order", "str", "low_first",
            "which spectrum band pairs with the finest scale", tuple(BAND_ORDERS)),
    Setting("model.pool", "str", "mean", "sequence pooling before the head", tuple(POOLS)),
    Setting("train.lr", "float", 1e-4, "Adam learning rate"),
    Setting("train.beta1", "float", 0.9, "Adam beta1"),
    Setting("train.beta2", "float", 0.999, "Adam beta2"),
    Setting("train.eps", "float", 1e-8, "Adam epsilon"),
    Setting("train.batch_size", "int", 32, "windows per optimizer step"),
    Setting("train.max_epochs", "int", 10, "epoch budget"),
    Setting("train.patience", "int", 3, "early-stop patience on validation MSE"),
    Setting("train.grad_clip_norm", "float", 5.0, "global gradient-norm clip"),
    Setting("eval.split", "str", "test", "split to evaluate", ("train", "val", "test")),
    Setting("eval.original_units", "bool", False, "also report original-unit errors"),
    Setting("ablate.horizons", "ints", (96,), "comma-separated horizons for the ablation table"),
    Setting("synth.T_total", "int", 2000, "synthetic series length"),
    Setting("synth.C", "int", 2, "synthetic channel count"),
    Setting("synth.periods", "floats", (24.0, 96.0), "sine periods"),
    Setting("synth.amplitudes", "floats", (1.0, 0.5), "sine amplitudes (one per period)"),
    Setting("synth.noise_sigma", "float", 0.0, "gaussian noise level"),
)


def _parse_value(setting: Setting, raw: str):
    text = raw.strip()
    try:
        if setting.kind == "int":
            value = int(text)
        elif setting.kind == "float":
            value = float(text)
        elif setting.kind == "bool":
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                value = True
            elif low in ("false", "0", "no", "off"):
                value = False
            else:
                raise ValueError(f"not a boolean: {text!r}")
        elif setting.kind == "ints":
            value = tuple(int(p) for p in text.split(",") if p.strip())
        elif setting.kind == "floats":
            value = tuple(float(p) for p in text.split(",") if p.strip())
        else:
            value = text
    except ValueError as exc:
        raise ValueError(str(exc)) from None
    if setting.choices is not None and value not in setting.choices:
        raise ValueError(f"must be one of {', '.join(map(str, setting.choices))}")
    return value


def parse_config_file(path) -> dict[str, str]:
    """Raw key -> text pairs from a config file."""
    pairs: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.strip()
                if not text or text.startswith("#"):
                    continue
                if "=" not in text:
                    raise ConfigError(f"{path}:{lineno}: expected key = value, got {text!r}")
                key, _, value = text.partition("=")
                pairs[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return pairs


def resolve(file_pairs: dict[str, str] | None,
            overrides: dict[str, str] | None) -> dict[str, object]:
    """Apply defaults, file values, then overrides; reject every unknown
    key and bad value at once."""
    values = {key: s.default for key, s in REGISTRY.items()}
    problems: list[str] = []
    for source, pairs in (("config file", file_pairs or {}),
                          ("--set", overrides or {})):
        for key, raw in pairs.items():
            setting = REGISTRY.get(key)
            if setting is None:
                problems.append(f"{source}: unknown key {key!r}")
                continue
            try:
                values[key] = _parse_value(setting, raw)
            except ValueError as exc:
                problems.append(f"{source}: {key} = {raw!r}: {exc}")
    if problems:
        raise ConfigError("invalid configuration: " + "; ".join(problems))
    return values


def canonical_text(values: dict[str, object]) -> str:
    lines = []
    for key in sorted(values):
        v = values[key]
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def resolve_data_path(path: str) -> str:
    """Relative dataset paths resolve against $PYRAFUSE_DATA_DIR when set."""
    if not path:
        raise ConfigError("data.path is required for this command")
    if os.path.isabs(path) or os.path.exists(path):
        return path
    base = os.environ.get(DATA_DIR_ENV)
    if base:
        return os.path.join(base, path)
    return path


def model_config(values: dict[str, object], num_channels: int | None = None) -> ModelConfig:
    c = int(values["model.C"])
    if num_channels is not None:
        if c not in (0, num_channels):
            raise ConfigError(
                f"model.C={c} does not match the dataset's {num_channels} channels")
        c = num_channels
    elif c == 0:
        raise ConfigError("model.C must be set when no dataset provides it")
    cfg = ModelConfig(
        C=c,
        L_in=int(values["model.L_in"]),
        L_pred=int(values["model.L_pred"]),
        S=int(values["model.S"]),
        d_model=int(values["model.d_model"]),
        heads=int(values["model.heads"]),
        d_ff=int(values["model.d_ff"]),
        dropout=float(values["model.dropout"]),
        variant=str(values["model.variant"]),
        revin_affine=bool(values["model.revin_affine"]),
        revin_eps=float(values["model.revin_eps"]),
        band_order=str(values["model.band_order"]),
        pool=str(values["model.pool"]),
    )
    cfg.validate()
    return cfg


def train_config(values: dict[str, object]) -> TrainConfig:
    cfg = TrainConfig(
        lr=float(values["train.lr"]),
        beta1=float(values["train.beta1"]),
        beta2=float(values["train.beta2"]),
        eps=float(values["train.eps"]),
        batch_size=int(values["train.batch_size"]),
        max_epochs=int(values["train.max_epochs"]),
        patience=int(values["train.patience"]),
        grad_clip_norm=float(values["train.grad_clip_norm"]),
        seed=int(values["seed"]),
    )
    cfg.validate()
    return cfg


def with_model_overrides(cfg: ModelConfig, **kwargs) -> ModelConfig:
    out = replace(cfg, **kwargs)
    out.validate()
    return out


def registry_help() -> str:
    """One line per key with its default, for --help."""
    width = max(len(k) for k in REGISTRY)
    lines = ["configuration keys (key = default  --  description):"]
    for key in sorted(REGISTRY):
        s = REGISTRY[key]
        default = ",".join(map(str, s.default)) if isinstance(s.default, tuple) else s.default
        extra = f" [{'|'.join(map(str, s.choices))}]" if s.choices else ""
        lines.append(f"  {key:<{width}} = {default!s:<14} {s.help}{extra}")
    return "\n".join(lines)
