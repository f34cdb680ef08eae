"""Local detail enhancement by contrast-limited adaptive histogram equalization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_CLIP = 2.0
DEFAULT_TILES = (8, 8)
DEFAULT_LEVELS = 65536


@dataclass(frozen=True)
class ClaheConfig:
    """``clip_limit`` multiplies the uniform bin height ``tile_pixels / levels``."""

    clip_limit: float = DEFAULT_CLIP
    tile_rows: int = DEFAULT_TILES[0]
    tile_cols: int = DEFAULT_TILES[1]
    levels: int = DEFAULT_LEVELS

    def __post_init__(self):
        if not self.clip_limit > 0:
            raise ValueError("clip_limit must be > 0")
        if self.tile_rows < 1 or self.tile_cols < 1:
            raise ValueError("tile grid must be at least 1x1")
        if self.levels < 2:
            raise ValueError("levels must be >= 2")


def _tile_bounds(n: int, tiles: int) -> np.ndarray:
    return np.rint(np.linspace(0, n, tiles + 1)).astype(np.intp)


def clip_histogram(hist: np.ndarray, limit: float) -> np.ndarray:
    """Clip at ``limit`` and spread the excess evenly over every level (single pass)."""
    hist = np.asarray(hist, dtype=np.float64)
    excess = np.maximum(hist - limit, 0.0).sum()
    return np.minimum(hist, limit) + excess / hist.size


def tile_mapping(hist: np.ndarray) -> np.ndarray:
    """Level -> output map from a (clipped) histogram, min-CDF normalized."""
    cdf = np.cumsum(hist)
    total = cdf[-1]
    nonzero = cdf[cdf > 0]
    cdf_min = nonzero[0] if nonzero.size else 0.0
    if total - cdf_min <= 0:
        # every pixel shares one level: leave that tile's values unchanged
        return np.arange(hist.size, dtype=np.float64) / (hist.size - 1)
    return np.clip((cdf - cdf_min) / (total - cdf_min), 0.0, 1.0)


def tile_mappings(levels_img: np.ndarray, cfg: ClaheConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-tile lookup tables, shape (rows, cols, levels), plus tile row/col bounds."""
    h, w = levels_img.shape
    rb = _tile_bounds(h, cfg.tile_rows)
    cb = _tile_bounds(w, cfg.tile_cols)
    maps = np.empty((cfg.tile_rows, cfg.tile_cols, cfg.levels))
    for r in range(cfg.tile_rows):
        for c in range(cfg.tile_cols):
            tile = levels_img[rb[r]:rb[r + 1], cb[c]:cb[c + 1]]
            hist = np.bincount(tile.ravel(), minlength=cfg.levels)
            limit = cfg.clip_limit * tile.size / cfg.levels
            maps[r, c] = tile_mapping(clip_histogram(hist, limit))
    return maps, rb, cb


def _interp_axis(n: int, bounds: np.ndarray):
    centers = 0.5 * (bounds[:-1] + bounds[1:]) - 0.5
    pos = np.arange(n, dtype=np.float64)
    if len(centers) == 1:
        zeros = np.zeros(n, dtype=np.intp)
        return zeros, zeros, np.zeros(n)
    i0 = np.clip(np.searchsorted(centers, pos, side="right") - 1, 0, len(centers) - 2)
    t = np.clip((pos - centers[i0]) / (centers[i0 + 1] - centers[i0]), 0.0, 1.0)
    return i0, i0 + 1, t


def clahe(frame: np.ndarray, cfg: ClaheConfig = ClaheConfig()) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization of a [0, 1] frame.

    Pixels are quantized to ``cfg.levels`` levels, every tile's clipped
    histogram yields a lookup table, and each output pixel blends the tables
    of its four nearest tile centers bilinearly (nearest tiles at the borders).
    """
    frame = np.asarray(frame, dtype=np.float64)
    if np.isnan(frame).any() or frame.min() < 0.0 or frame.max() > 1.0:
        raise ValueError("clahe expects finite values in [0, 1]")
    h, w = frame.shape
    if h < cfg.tile_rows or w < cfg.tile_cols:
        raise ValueError(f"frame {w}x{h} is smaller than the {cfg.tile_cols}x{cfg.tile_rows} tile grid")
    levels_img = np.rint(frame * (cfg.levels - 1)).astype(np.intp)
    maps, rb, cb = tile_mappings(levels_img, cfg)

    r0, r1, ty = _interp_axis(h, rb)
    c0, c1, tx = _interp_axis(w, cb)
    R0, C0 = r0[:, None], c0[None, :]
    R1, C1 = r1[:, None], c1[None, :]
    ty, tx = ty[:, None], tx[None, :]
    lv = levels_img
    top = (1 - tx) * maps[R0, C0, lv] + tx * maps[R0, C1, lv]
    bottom = (1 - tx) * maps[R1, C0, lv] + tx * maps[R1, C1, lv]
    return np.clip((1 - ty) * top + ty * bottom, 0.0, 1.0)
