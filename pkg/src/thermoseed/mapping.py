"""Raw-count -> working-intensity mapping modes for one frame group."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lde import DEFAULT_CLIP, DEFAULT_LEVELS, ClaheConfig, clahe
from .tctr import DEFAULT_BINS, DegenerateGroupError, build_histogram, build_profile, lookup_table, minmax_normalize, remap

MODES = ("minmax", "frame-minmax", "tctr", "tctr+lde")


@dataclass(frozen=True)
class MappingConfig:
    """How raw frames become working intensities.

    ``minmax`` rescales linearly by the group's extrema, ``frame-minmax`` by
    each frame's own extrema (breaks temporal consistency; kept as a
    baseline), ``tctr`` applies the group histogram rearrangement, and
    ``tctr+lde`` follows it with CLAHE.
    """

    mode: str = "tctr+lde"
    bins: int = DEFAULT_BINS
    clip: float = DEFAULT_CLIP
    tile_rows: int = 8
    tile_cols: int = 8
    levels: int = DEFAULT_LEVELS

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mapping mode {self.mode!r}; expected one of {MODES}")

    @property
    def clahe(self) -> ClaheConfig:
        return ClaheConfig(self.clip, self.tile_rows, self.tile_cols, self.levels)


def enhance_group(frames: Sequence, cfg: MappingConfig = MappingConfig()) -> list[np.ndarray]:
    """Map every frame of a group to [0, 1] with one shared map (except ``frame-minmax``)."""
    if cfg.mode == "frame-minmax":
        return [minmax_normalize(f) for f in frames]
    try:
        if cfg.mode == "minmax":
            counts = [np.asarray(getattr(f, "counts", f)) for f in frames]
            lo = min(int(c.min()) for c in counts)
            hi = max(int(c.max()) for c in counts)
            if lo == hi:
                raise DegenerateGroupError("degenerate group")
            return [minmax_normalize(c, lo, hi) for c in counts]
        profile = build_profile(build_histogram(frames, cfg.bins))
    except DegenerateGroupError:
        warnings.warn("degenerate group (t_min == t_max); mapping every pixel to 0.5", stacklevel=2)
        return [np.full(np.asarray(getattr(f, "counts", f)).shape, 0.5) for f in frames]
    lut = lookup_table(profile)
    out = [remap(f, profile, lut) for f in frames]
    if cfg.mode == "tctr+lde":
        out = [clahe(x, cfg.clahe) for x in out]
    return out
