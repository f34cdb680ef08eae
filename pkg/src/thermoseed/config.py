"""Plain-text ``key = value`` configuration files and run defaults."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, RigidTransform
from .losses import LossWeights
from .mapping import MappingConfig


def parse_kv(text: str, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    path = Path(path)
    return parse_kv(path.read_text(), str(path))


def format_kv(values: dict) -> str:
    lines = []
    for k, v in values.items():
        if isinstance(v, (list, tuple, np.ndarray)):
            v = " ".join(repr(float(x)) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def load_intrinsics(path) -> CameraIntrinsics:
    kv = read_kv(path)
    try:
        return CameraIntrinsics(*(float(kv[k]) for k in ("fx", "fy", "cx", "cy")))
    except KeyError as e:
        raise ValueError(f"{path}: missing intrinsics key {e.args[0]!r}") from None


def parse_pose(value: str) -> RigidTransform:
    """``tx ty tz rx ry rz`` with an axis-angle rotation in radians."""
    nums = [float(x) for x in value.split()]
    if len(nums) != 6:
        raise ValueError(f"pose needs 6 numbers (tx ty tz rx ry rz), got {value!r}")
    return RigidTransform.from_params(nums[3:] + nums[:3])


def format_pose(T: RigidTransform) -> list[float]:
    p = T.params()
    return list(p[3:]) + list(p[:3])


def load_poses(path) -> list[RigidTransform]:
    """Poses as ``pose0 = ...``, ``pose1 = ...`` (or a single ``pose``), in index order."""
    kv = read_kv(path)
    if "pose" in kv:
        return [parse_pose(kv["pose"])]
    keys = sorted((k for k in kv if k.startswith("pose")), key=lambda k: int(k[4:]))
    if not keys:
        raise ValueError(f"{path}: no pose entries")
    return [parse_pose(kv[k]) for k in keys]


@dataclass(frozen=True)
class RunConfig:
    bins: int = 30
    clip: float = 2.0
    tiles: str = "8x8"
    gamma: float = 0.85
    lambda_gc: float = 0.5
    lambda_sm: float = 0.1
    group_size: int = 3
    mode: str = "tctr+lde"
    seed: int = 0

    @property
    def tile_grid(self) -> tuple[int, int]:
        """(rows, cols) from ``RxC``."""
        try:
            r, c = (int(x) for x in self.tiles.lower().split("x"))
        except ValueError:
            raise ValueError(f"tiles must look like 8x8, got {self.tiles!r}") from None
        return r, c

    def updated(self, values: dict) -> "RunConfig":
        """Copy with entries from a mapping (None values ignored), coerced to field types."""
        kinds = {f.name: f.type for f in fields(self)}
        clean = {}
        for k, v in values.items():
            k = k.replace("-", "_")
            if k not in kinds or v is None:
                continue
            caster = {"int": int, "float": float, "str": str}[kinds[k]]
            clean[k] = caster(v)
        return replace(self, **clean)

    def mapping(self, mode: str | None = None) -> MappingConfig:
        rows, cols = self.tile_grid
        return MappingConfig(mode or self.mode, self.bins, self.clip, rows, cols)

    def weights(self) -> LossWeights:
        return LossWeights(self.gamma, self.lambda_gc, self.lambda_sm)
