"""Dataset ingestion, chronological splits, train-statistic
standardization, sliding-window sampling, and synthetic generators.

CSV contract: UTF-8, comma-delimited, header row, first column is a
timestamp, remaining columns are decimal numerals. Missing values are a
hard error, never imputed.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .errors import DataError

SPLIT_POLICIES = ("ett_hourly", "ett_minutely", "ratio_702010")

# 12/4/4 months of hourly rows; the minutely files sample 4x as often.
_ETT_HOURLY = (8640, 2880, 2880)
_ETT_MINUTELY = (34560, 11520, 11520)


@dataclass
class RawDataset:
    name: str
    timestamps: list[str]
    values: np.ndarray            # (T, C) float64
    channel_names: list[str]

    @property
    def num_rows(self) -> int:
        return self.values.shape[0]

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]


def _timestamp_key(raw: str, row: int):
    """Sortable key for a timestamp cell: numeric, ISO datetime, or the
    raw string, in that order of preference."""
    text = raw.strip()
    try:
        return ("num", float(text))
    except ValueError:
        pass
    try:
        return ("dt", datetime.fromisoformat(text))
    except ValueError:
        pass
    if not text:
        raise DataError(f"row {row}: empty timestamp cell")
    return ("str", text)


def load_csv(path) -> RawDataset:
    """Parse a dataset CSV; errors name the offending cell."""
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open dataset file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: need a timestamp column plus at least one channel")
        channels = [h.strip() for h in header[1:]]
        timestamps: list[str] = []
        rows: list[list[float]] = []
        prev_key = None
        for i, record in enumerate(reader, start=2):  # 1-based, header is line 1
            if len(record) != len(header):
                raise DataError(
                    f"row {i}: expected {len(header)} cells, got {len(record)}")
            key = _timestamp_key(record[0], i)
            if prev_key is not None:
                if key[0] != prev_key[0]:
                    raise DataError(f"row {i}: timestamp kind changed mid-file")
                if key[1] <= prev_key[1]:
                    raise DataError(
                        f"row {i}: timestamp {record[0]!r} is not strictly increasing")
            prev_key = key
            timestamps.append(record[0].strip())
            parsed = []
            for j, cell in enumerate(record[1:]):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"row {i}, column {channels[j]!r} (index {j + 1}): "
                        f"could not parse {cell!r}") from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise DataError(
            f"row {bad[0] + 2}, column {channels[bad[1]]!r}: non-finite value")
    name = os.path.splitext(os.path.basename(str(path)))[0]
    return RawDataset(name=name, timestamps=timestamps, values=values,
                      channel_names=channels)


@dataclass(frozen=True)
class Split:
    """Contiguous, ordered, non-overlapping row ranges. Window sampling
    prefixes val/test with L_in rows of lookback from the preceding
    range."""

    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]
    policy: str

    def range_for(self, which: str) -> tuple[int, int]:
        return {"train": self.train, "val": self.val, "test": self.test}[which]


def chronological_split(ds: RawDataset, policy: str,
                        L_in: int, L_pred: int) -> Split:
    t = ds.num_rows
    if policy == "ett_hourly":
        n_train, n_val, n_test = _ETT_HOURLY
    elif policy == "ett_minutely":
        n_train, n_val, n_test = _ETT_MINUTELY
    elif policy == "ratio_702010":
        n_train = int(0.7 * t)
        n_val = int(0.1 * t)
        n_test = t - n_train - n_val
    else:
        raise DataError(f"unknown split policy {policy!r}; choose from {SPLIT_POLICIES}")
    if t < n_train + n_val + n_test:
        raise DataError(
            f"{ds.name}: {t} rows are too few for policy {policy} "
            f"({n_train}/{n_val}/{n_test})")
    if n_train < L_in + L_pred:
        raise DataError(
            f"{ds.name}: train split of {n_train} rows cannot hold one "
            f"window of L_in={L_in} plus L_pred={L_pred}")
    for label, n in (("val", n_val), ("test", n_test)):
        if n < L_pred:
            raise DataError(
                f"{ds.name}: {label} split of {n} rows is shorter than L_pred={L_pred}")
    a = n_train
    b = n_train + n_val
    c = n_train + n_val + n_test
    return Split(train=(0, a), val=(a, b), test=(b, c), policy=policy)


@dataclass
class Scaler:
    """Per-channel z-score statistics from the train split only."""

    mean: np.ndarray   # (C,)
    std: np.ndarray    # (C,), zeros replaced by 1 so constants map to 0

    @staticmethod
    def fit(values: np.ndarray) -> "Scaler":
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        std = np.where(std == 0.0, 1.0, std)
        return Scaler(mean=mean, std=std)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass
class SeriesBatch:
    inputs: np.ndarray    # (B, L_in, C)
    targets: np.ndarray   # (B, L_pred, C)


class WindowSampler:
    """Sliding (input, target) windows over one split of a standardized
    dataset.

    Train windows live entirely inside the train range. Val/test windows
    may reach back L_in rows into the preceding range for their inputs
    (the usual lookback prefix), but every target stays inside its own
    range, so targets never leak across splits.
    """

    def __init__(self, ds: RawDataset, split: Split, which: str,
                 L_in: int, L_pred: int, scaler: Scaler, dtype=np.float32):
        if which not in ("train", "val", "test"):
            raise DataError(f"unknown split name {which!r}")
        self.which = which
        self.L_in = L_in
        self.L_pred = L_pred
        self.scaler = scaler
        self.dtype = np.dtype(dtype).type
        self.standardized = scaler.transform(ds.values)
        lo, hi = split.range_for(which)
        if which == "train":
            first = lo
        else:
            first = lo - L_in  # lookback prefix; split construction guarantees room
        last = hi - L_pred - L_in  # inclusive last input start
        if last < first:
            raise DataError(
                f"{ds.name}/{which}: no full window fits (range {lo}:{hi}, "
                f"L_in={L_in}, L_pred={L_pred})")
        self.starts = np.arange(first, last + 1)

    @property
    def num_windows(self) -> int:
        return len(self.starts)

    def window(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        s = self.starts[i]
        x = self.standardized[s:s + self.L_in]
        y = self.standardized[s + self.L_in:s + self.L_in + self.L_pred]
        return x.astype(self.dtype), y.astype(self.dtype)

    def batches(self, batch_size: int, shuffle_seed: int | None = None):
        """Yield SeriesBatch in deterministic order; train order is shuffled
        by the seed, val/test are sequential."""
        order = np.arange(self.num_windows)
        if self.which == "train" and shuffle_seed is not None:
            order = np.random.default_rng(shuffle_seed).permutation(order)
        for at in range(0, len(order), batch_size):
            idx = order[at:at + batch_size]
            xs = np.stack([self.standardized[s:s + self.L_in] for s in self.starts[idx]])
            ys = np.stack([self.standardized[s + self.L_in:s + self.L_in + self.L_pred]
                           for s in self.starts[idx]])
            yield SeriesBatch(inputs=xs.astype(self.dtype),
                              targets=ys.astype(self.dtype))


def synth_multiperiodic(T_total: int, C: int, periods, amplitudes,
                        noise_sigma: float, seed: int,
                        name: str = "synth") -> RawDataset:
    """Sum-of-sines generator with per-(channel, component) random phases
    and optional gaussian noise; fully reproducible by seed."""
    periods = [float(p) for p in periods]
    amplitudes = [float(a) for a in amplitudes]
    if len(amplitudes) != len(periods):
        raise DataError(
            f"got {len(periods)} periods but {len(amplitudes)} amplitudes")
    if any(p <= 0 for p in periods):
        raise DataError(f"periods must be positive, got {periods}")
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(C, len(periods)))
    t = np.arange(T_total, dtype=np.float64)[:, None]
    values = np.zeros((T_total, C), dtype=np.float64)
    for c in range(C):
        for amp, period, phase in zip(amplitudes, periods, phases[c]):
            values[:, c:c + 1] += amp * np.sin(2.0 * np.pi * t / period + phase)
    if noise_sigma > 0:
        values += noise_sigma * rng.standard_normal(values.shape)
    timestamps = [str(i) for i in range(T_total)]
    channels = [f"ch{c}" for c in range(C)]
    return RawDataset(name=name, timestamps=timestamps, values=values,
                      channel_names=channels)


def write_csv(ds: RawDataset, path) -> None:
    """Write a RawDataset back out in the ingestion format."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + ds.channel_names)
        for ts, row in zip(ds.timestamps, ds.values):
            writer.writerow([ts] + [repr(float(v)) for v in row])
