"""Group-wise histogram rearrangement of raw thermal counts.

All frames that take part in one loss evaluation share a single histogram
over their global count range.  Each bin's slice of the output interval
[0, 1] is proportional to the number of pixels that fell into it, so the
map is one piecewise-linear, non-decreasing function for the whole group.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .frameio import RawFrame

DEFAULT_BINS = 30


class DegenerateGroupError(ValueError):
    """The group has zero dynamic range (t_min == t_max)."""


class ProfileDomainError(ValueError):
    pass


def _as_counts(frames: Iterable) -> list[np.ndarray]:
    out = []
    for f in frames:
        out.append(np.asarray(f.counts if isinstance(f, RawFrame) else f))
    return out


def group_extent(frames: Sequence) -> tuple[int, int]:
    """Global minimum and maximum count across every frame in the group."""
    arrays = _as_counts(frames)
    if not arrays:
        raise ValueError("empty group")
    t_min = min(int(a.min()) for a in arrays)
    t_max = max(int(a.max()) for a in arrays)
    if t_min == t_max:
        raise DegenerateGroupError(f"degenerate group: every pixel equals {t_min}")
    return t_min, t_max


@dataclass(frozen=True)
class GroupHistogram:
    t_min: int
    t_max: int
    n_bin: int
    edges: np.ndarray
    counts: np.ndarray
    total: int

    def bin_index(self, x) -> np.ndarray:
        return assign_bins(self.edges, x)


def assign_bins(edges: np.ndarray, x) -> np.ndarray:
    """Bin of each value: half-open bins, except the last which is closed."""
    idx = np.searchsorted(edges, np.asarray(x, dtype=np.float64), side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


def bin_edges(t_min: float, t_max: float, n_bin: int) -> np.ndarray:
    edges = t_min + (t_max - t_min) * (np.arange(n_bin + 1, dtype=np.float64) / n_bin)
    edges[0], edges[-1] = t_min, t_max
    return edges


def build_histogram(frames: Sequence, n_bin: int = DEFAULT_BINS) -> GroupHistogram:
    if n_bin < 2:
        raise ValueError(f"n_bin must be >= 2, got {n_bin}")
    t_min, t_max = group_extent(frames)
    edges = bin_edges(t_min, t_max, n_bin)
    counts = np.zeros(n_bin, dtype=np.int64)
    for a in _as_counts(frames):
        # histogram the distinct values once, then scatter their multiplicities
        values, mult = np.unique(a, return_counts=True)
        np.add.at(counts, assign_bins(edges, values), mult)
    return GroupHistogram(t_min, t_max, n_bin, edges, counts, int(counts.sum()))


@dataclass(frozen=True)
class MappingProfile:
    histogram: GroupHistogram
    alphas: np.ndarray
    offsets: np.ndarray

    @property
    def t_min(self) -> int:
        return self.histogram.t_min

    @property
    def t_max(self) -> int:
        return self.histogram.t_max


def build_profile(hist: GroupHistogram) -> MappingProfile:
    counts = np.asarray(hist.counts, dtype=np.int64)
    total = int(counts.sum())
    if total <= 0:
        raise ValueError("histogram is empty")
    alphas = counts / total
    # offsets from exact integer prefix sums: one rounding per entry
    prefix = np.concatenate([[0], np.cumsum(counts)[:-1]])
    offsets = prefix / total
    return MappingProfile(hist, alphas, offsets)


def remap_values(x, profile: MappingProfile) -> np.ndarray:
    """Apply the piecewise-linear rearrangement to arbitrary values in the profile range."""
    h = profile.histogram
    x = np.asarray(x, dtype=np.float64)
    if x.size and (x.min() < h.t_min or x.max() > h.t_max):
        raise ProfileDomainError("frame not in profile group: values outside "
                                 f"[{h.t_min}, {h.t_max}]")
    i = h.bin_index(x)
    lo = h.edges[i]
    width = h.edges[i + 1] - lo
    out = profile.alphas[i] * ((x - lo) / width) + profile.offsets[i]
    return np.clip(out, 0.0, 1.0)


def lookup_table(profile: MappingProfile) -> np.ndarray:
    """Mapped value for every integer count in [t_min, t_max]."""
    return remap_values(np.arange(profile.t_min, profile.t_max + 1), profile)


def remap(frame, profile: MappingProfile, lut: np.ndarray | None = None) -> np.ndarray:
    """Map a raw frame through the group profile with a per-count lookup table."""
    counts = np.asarray(frame.counts if isinstance(frame, RawFrame) else frame)
    if counts.min() < profile.t_min or counts.max() > profile.t_max:
        raise ProfileDomainError("frame not in profile group: counts outside "
                                 f"[{profile.t_min}, {profile.t_max}]")
    if lut is None:
        lut = lookup_table(profile)
    return lut[counts.astype(np.int64) - profile.t_min]


def minmax_normalize(frame, t_min: float | None = None, t_max: float | None = None) -> np.ndarray:
    """Linear rescale to [0, 1]; per-frame extrema unless a range is given."""
    counts = np.asarray(frame.counts if isinstance(frame, RawFrame) else frame, dtype=np.float64)
    lo = counts.min() if t_min is None else t_min
    hi = counts.max() if t_max is None else t_max
    if hi <= lo:
        return np.full(counts.shape, 0.5)
    return np.clip((counts - lo) / (hi - lo), 0.0, 1.0)
