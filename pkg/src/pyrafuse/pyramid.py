"""Temporal and frequency pyramids.

The temporal pyramid progressively halves the sequence by average pooling.
The frequency pyramid partitions the RFFT spectrum into disjoint,
logarithmically spaced bands, reconstructs each band back to the time
domain, and then pools each reconstruction down to the matching temporal
length so the two pyramids stay shape-aligned at every scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import Tensor, as_tensor, avg_pool1d, irfft, rfft

BAND_ORDERS = ("low_first", "high_first")


@dataclass(frozen=True)
class BandPartition:
    """S disjoint bin ranges covering the N RFFT bins.

    Edges are strictly increasing with edges[0] == 0 and edges[-1] == N,
    so band s is bins [edges[s], edges[s+1]). The DC bin always lands in
    band 0, and for practical (N, S) the low-frequency bands are the
    narrowest.
    """

    num_levels: int
    num_bins: int
    edges: tuple[int, ...] = field(default=())

    def __post_init__(self):
        e = self.edges
        if len(e) != self.num_levels + 1 or e[0] != 0 or e[-1] != self.num_bins:
            raise ConfigError(f"edges {e} do not span [0, {self.num_bins}] "
                              f"with {self.num_levels} bands")
        if any(b <= a for a, b in zip(e, e[1:])):
            raise ConfigError(f"edges {e} are not strictly increasing")

    def mask(self, level: int, dtype=np.float64) -> np.ndarray:
        m = np.zeros(self.num_bins, dtype=dtype)
        m[self.edges[level]:self.edges[level + 1]] = 1.0
        return m


def make_band_partition(num_bins: int, num_levels: int) -> BandPartition:
    """Logarithmically spaced edges e_s = round(N^(s/S)), repaired to be
    strictly increasing so every band is nonempty."""
    n, s = int(num_bins), int(num_levels)
    if s < 2:
        raise ConfigError(f"need at least 2 bands, got {s}")
    if n < s:
        raise ConfigError(f"cannot form {s} nonempty bands from {n} bins")
    edges = [0]
    for i in range(1, s):
        raw = int(round(n ** (i / s)))
        edges.append(max(raw, edges[-1] + 1))
    edges.append(n)
    return BandPartition(num_levels=s, num_bins=n, edges=tuple(edges))


@dataclass
class DualPyramid:
    """Aligned per-scale pairs: both lists hold S tensors of shape
    (B, L_in / 2^s, C)."""

    temporal: list[Tensor]
    frequency: list[Tensor]

    def __post_init__(self):
        if len(self.temporal) != len(self.frequency):
            raise DimensionError("pyramids have different depths")
        for s, (t, f) in enumerate(zip(self.temporal, self.frequency)):
            if t.shape != f.shape:
                raise DimensionError(
                    f"level {s}: temporal {t.shape} vs frequency {f.shape}")

    @property
    def num_levels(self) -> int:
        return len(self.temporal)


def _check_divisible(length: int, num_levels: int) -> None:
    if num_levels < 2:
        raise ConfigError(f"pyramid needs S >= 2 levels, got {num_levels}")
    if length % (2 ** (num_levels - 1)) != 0:
        raise ConfigError(
            f"L_in={length} must be divisible by 2^(S-1)={2 ** (num_levels - 1)} "
            f"for S={num_levels} levels")


def build_temporal_pyramid(x_norm, num_levels: int) -> list[Tensor]:
    """Level 0 is the input itself; each next level halves it by pooling."""
    x = as_tensor(x_norm)
    _check_divisible(x.shape[-2], num_levels)
    levels = [x]
    for _ in range(1, num_levels):
        levels.append(avg_pool1d(levels[-1]))
    return levels


def build_frequency_pyramid(x_norm, partition: BandPartition,
                            band_order: str = "low_first",
                            align: bool = True) -> list[Tensor]:
    """Band-limited reconstructions of the input, one per partition band.

    With align=True (the default), level s is pooled down to length
    L_in / 2^s to match the temporal pyramid; align=False keeps every
    level at full length (the raw reconstruction used by the
    partition-of-unity checks). Band 0 holds the lowest frequencies and is
    paired with the finest level; band_order="high_first" reverses that
    pairing.
    """
    if band_order not in BAND_ORDERS:
        raise ConfigError(f"band_order must be one of {BAND_ORDERS}, got {band_order!r}")
    x = as_tensor(x_norm)
    length = x.shape[-2]
    expected_bins = length // 2 + 1
    if partition.num_bins != expected_bins:
        raise ConfigError(
            f"partition built for {partition.num_bins} bins, input has {expected_bins}")
    if align:
        _check_divisible(length, partition.num_levels)
    spectrum = rfft(x, axis=-2)
    levels = []
    band_ids = range(partition.num_levels)
    if band_order == "high_first":
        band_ids = reversed(band_ids)
    for s, band in enumerate(band_ids):
        level = irfft(spectrum.scale_bins(partition.mask(band, dtype=x.dtype)))
        if align:
            for _ in range(s):
                level = avg_pool1d(level)
        levels.append(level)
    return levels


def build_dual_pyramid(x_norm, num_levels: int,
                       band_order: str = "low_first") -> DualPyramid:
    """Shape-aligned temporal and frequency pyramids over the same input."""
    x = as_tensor(x_norm)
    partition = make_band_partition(x.shape[-2] // 2 + 1, num_levels)
    return DualPyramid(
        temporal=build_temporal_pyramid(x, num_levels),
        frequency=build_frequency_pyramid(x, partition, band_order=band_order),
    )
