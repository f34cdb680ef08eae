"""Reading and writing thermal frames.

Raw frames are binary 16-bit PGM (P5, maxval 65535, big-endian samples).
Enhanced frames are float64 arrays in [0, 1]; they are quantized only when
exported.
"""
from __future__ import annotations

import contextlib
import csv
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Union

import numpy as np
from PIL import Image

MAXVAL_16 = 65535


class FrameIOError(ValueError):
    """Base class for frame reading/writing problems."""


class MalformedHeaderError(FrameIOError):
    pass


class UnsupportedBitDepthError(FrameIOError):
    pass


class TruncatedPayloadError(FrameIOError):
    pass


class SequenceError(FrameIOError):
    pass


@dataclass(frozen=True)
class RawFrame:
    """A grid of unsigned 16-bit radiometric counts, shape (height, width)."""

    counts: np.ndarray
    frame_index: int = 0
    path: str | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError("counts must be a 2-D grid")
        if counts.shape[0] < 2 or counts.shape[1] < 2:
            raise ValueError(f"frame must be at least 2x2, got {counts.shape[1]}x{counts.shape[0]}")
        if counts.dtype != np.uint16:
            if np.any(counts < 0) or np.any(counts > MAXVAL_16):
                raise ValueError("counts outside the 16-bit range")
            counts = counts.astype(np.uint16)
        object.__setattr__(self, "counts", counts)

    @property
    def width(self) -> int:
        return self.counts.shape[1]

    @property
    def height(self) -> int:
        return self.counts.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape


@dataclass
class FrameSequence:
    frames: list[RawFrame]
    source_dir: Path | None = None

    def __post_init__(self):
        shapes = {f.shape for f in self.frames}
        if len(shapes) > 1:
            raise SequenceError(f"dimension mismatch: {sorted(shapes)}")
        idx = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise SequenceError("frame_index must be strictly increasing")

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]


EnhancedFrame = np.ndarray
"""Float64 array of shape (height, width) with values in [0, 1]."""


# --------------------------------------------------------------------- PGM

def _pgm_tokens(data: bytes, n: int) -> tuple[list[bytes], int]:
    """Return the first ``n`` header tokens and the offset just past the last one."""
    tokens = []
    pos = 0
    while len(tokens) < n:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedHeaderError("unexpected end of PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode a P5 payload with maxval 65535 into a uint16 array."""
    if not data.startswith(b"P5"):
        raise MalformedHeaderError("not a binary PGM (missing P5 magic)")
    tokens, pos = _pgm_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedHeaderError(f"non-numeric PGM header fields: {tokens[1:]}") from None
    if width <= 0 or height <= 0:
        raise MalformedHeaderError(f"invalid PGM dimensions {width}x{height}")
    if maxval != MAXVAL_16:
        raise UnsupportedBitDepthError(f"unsupported bit depth: maxval {maxval} (need 65535)")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise MalformedHeaderError("missing whitespace after PGM maxval")
    payload = data[pos + 1:]
    need = width * height * 2
    if len(payload) < need:
        raise TruncatedPayloadError(f"truncated payload: {len(payload)} of {need} bytes")
    return np.frombuffer(payload[:need], dtype=">u2").reshape(height, width).astype(np.uint16)


def encode_pgm(counts: np.ndarray) -> bytes:
    counts = np.asarray(counts)
    h, w = counts.shape
    return f"P5\n{w} {h}\n{MAXVAL_16}\n".encode("ascii") + counts.astype(">u2").tobytes()


@contextlib.contextmanager
def atomic_write(path: Union[str, os.PathLike], mode: str = "wb") -> Iterator:
    """Write to a temp file next to ``path`` and rename it into place on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        newline = "" if "b" not in mode else None
        with open(fd, mode, newline=newline) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def load_raw_frame(path, frame_index: int = 0) -> RawFrame:
    path = Path(path)
    counts = parse_pgm(path.read_bytes())
    return RawFrame(counts, frame_index=frame_index, path=str(path))


def load_sequence(directory, glob_pattern: str = "*.pgm") -> FrameSequence:
    directory = Path(directory)
    if not directory.is_dir():
        raise SequenceError(f"not a directory: {directory}")
    paths = sorted(p for p in directory.glob(glob_pattern) if p.is_file())
    if not paths:
        raise SequenceError(f"no frames matching {glob_pattern!r} in {directory}")
    frames = [load_raw_frame(p, i) for i, p in enumerate(paths)]
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        detail = ", ".join(f"{Path(f.path).name}={f.width}x{f.height}" for f in frames)
        raise SequenceError(f"dimension mismatch: {detail}")
    return FrameSequence(frames, source_dir=directory)


def quantize(values: np.ndarray, bits: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if np.isnan(values).any():
        raise ValueError("frame contains NaN")
    if values.min(initial=0.0) < 0.0 or values.max(initial=0.0) > 1.0:
        raise ValueError("enhanced frame values must lie in [0, 1]")
    top = (1 << bits) - 1
    return np.rint(values * top).astype(np.uint8 if bits == 8 else np.uint16)


def export_frame(frame: Union[RawFrame, np.ndarray], path, format: str = "pgm16") -> None:
    """Write a raw frame verbatim, or an enhanced frame quantized to ``format``.

    ``format`` is one of ``pgm16``, ``png8``, ``png16``.
    """
    if format not in ("pgm16", "png8", "png16"):
        raise ValueError(f"unknown export format {format!r}")
    if isinstance(frame, RawFrame):
        if format == "png8":
            raise ValueError("raw frames carry 16-bit counts; use pgm16 or png16")
        samples = frame.counts
    else:
        samples = quantize(frame, 8 if format == "png8" else 16)
    path = Path(path)
    if format == "pgm16":
        with atomic_write(path) as fh:
            fh.write(encode_pgm(samples))
    else:
        with atomic_write(path) as fh:
            Image.fromarray(samples).save(fh, format="PNG")


def load_image(path) -> np.ndarray:
    """Read a PGM16 or PNG (8/16-bit grayscale) file and return values in [0, 1]."""
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(b"P5"):
        return parse_pgm(data).astype(np.float64) / MAXVAL_16
    with Image.open(path) as im:
        arr = np.array(im)
        if im.mode == "L":
            return arr.astype(np.float64) / 255.0
        if im.mode in ("I;16", "I;16B", "I"):
            return arr.astype(np.float64) / MAXVAL_16
        raise FrameIOError(f"unsupported image mode {im.mode} in {path}")


def _ramp() -> np.ndarray:
    # 256-entry blue -> cyan -> yellow -> red ramp
    stops = np.array([[0, 0, 128], [0, 0, 255], [0, 255, 255], [255, 255, 0], [255, 0, 0], [128, 0, 0]], float)
    pos = np.linspace(0.0, 1.0, len(stops))
    x = np.linspace(0.0, 1.0, 256)
    return np.stack([np.interp(x, pos, stops[:, c]) for c in range(3)], axis=1).round().astype(np.uint8)


HEATMAP_LUT = _ramp()


def export_heatmap(values: np.ndarray, path, vmin: float | None = None, vmax: float | None = None) -> None:
    """Colorize ``values`` through the built-in 256-entry ramp and write an RGB PNG."""
    values = np.asarray(values, dtype=np.float64)
    if np.isnan(values).any():
        raise ValueError("frame contains NaN")
    lo = values.min() if vmin is None else vmin
    hi = values.max() if vmax is None else vmax
    scale = (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)
    idx = np.rint(np.clip(scale, 0.0, 1.0) * 255).astype(np.intp)
    with atomic_write(Path(path)) as fh:
        Image.fromarray(HEATMAP_LUT[idx], mode="RGB").save(fh, format="PNG")


HISTOGRAM_HEADER = ("bin_start", "bin_end", "count", "alpha", "offset")


def histogram_rows(hist) -> list[list]:
    """Header plus one row per bin; accepts a GroupHistogram or a MappingProfile."""
    from .tctr import GroupHistogram, build_profile

    profile = build_profile(hist) if isinstance(hist, GroupHistogram) else hist
    h = profile.histogram
    rows = [list(HISTOGRAM_HEADER)]
    for i in range(h.n_bin):
        rows.append([
            repr(float(h.edges[i])), repr(float(h.edges[i + 1])), int(h.counts[i]),
            repr(float(profile.alphas[i])), repr(float(profile.offsets[i])),
        ])
    return rows


def write_histogram_csv(hist, fh) -> None:
    csv.writer(fh, lineterminator="\n").writerows(histogram_rows(hist))


def export_histogram_csv(hist, path) -> None:
    with atomic_write(Path(path), "w") as fh:
        write_histogram_csv(hist, fh)


def read_histogram_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "count" else float(v)) for k, v in r.items()} for r in rows]


DEPTH_PGM_SCALE = 1000.0    # counts per metre: depth PGMs store millimetres


def load_depth_map(path) -> np.ndarray:
    """Depth in metres from a ``.npy`` array or a 16-bit PGM in millimetres."""
    path = Path(path)
    if path.suffix == ".npy":
        depth = np.load(path, allow_pickle=False).astype(np.float64)
        if depth.ndim != 2:
            raise FrameIOError(f"{path}: depth array must be 2-D, got shape {depth.shape}")
        return depth
    return parse_pgm(path.read_bytes()).astype(np.float64) / DEPTH_PGM_SCALE


def export_depth_map(depth: np.ndarray, path) -> None:
    """``.npy`` keeps full precision; anything else is written as a millimetre PGM."""
    depth = np.asarray(depth, dtype=np.float64)
    path = Path(path)
    if path.suffix == ".npy":
        with atomic_write(path) as fh:
            np.save(fh, depth, allow_pickle=False)
        return
    mm = np.rint(depth * DEPTH_PGM_SCALE)
    if not np.isfinite(mm).all() or mm.min() < 0 or mm.max() > MAXVAL_16:
        raise ValueError("depth outside the 0-65.535 m range a millimetre PGM can hold")
    with atomic_write(path) as fh:
        fh.write(encode_pgm(mm.astype(np.uint16)))
