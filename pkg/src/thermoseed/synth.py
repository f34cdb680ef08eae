"""Synthetic radiometric plane scenes with exact ground truth, and heat-source diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .config import parse_pose, read_kv
from .frameio import MAXVAL_16, RawFrame
from .geometry import CameraIntrinsics, RigidTransform, backproject, pixel_grid, project
from .mapping import MappingConfig, enhance_group


@dataclass(frozen=True)
class SceneSpec:
    """A textured plane seen by a pinhole camera.

    The temperature field is painted on the plane, parameterized by the
    reference camera's pixel coordinates.  ``pose`` is the true relative
    pose ``tx ty tz rx ry rz`` (m, axis-angle radians) from the reference
    camera to the next one.
    """

    name: str = "plane"
    width: int = 64
    height: int = 64
    fx: float = 48.0
    fy: float = 48.0
    cx: Optional[float] = None
    cy: Optional[float] = None
    plane_depth: float = 5.0
    plane_tilt_x: float = 0.0  # degrees, normal rotated about the camera x axis
    plane_tilt_y: float = 0.0
    background: float = 7050.0
    texture_amplitude: float = 20.0
    texture_waves: int = 6
    wavelength_min: float = 14.0
    wavelength_max: float = 40.0
    hotspot_fraction: float = 0.0
    hotspot_value: float = 30000.0
    hotspot_rim: float = 1.5
    noise_sigma: float = 0.0
    pose: str = "0.1 0 0 0 0 0"

    def __post_init__(self):
        if not 0.0 <= self.hotspot_fraction < 1.0:
            raise ValueError("hotspot_fraction must lie in [0, 1)")
        if self.hotspot_fraction > 0 and not 0 <= self.hotspot_value <= MAXVAL_16:
            raise ValueError(f"hotspot value {self.hotspot_value} outside the 16-bit range")
        lo = self.background - self.texture_amplitude
        hi = self.background + self.texture_amplitude
        if lo < 0 or hi > MAXVAL_16:
            raise ValueError("background texture outside the 16-bit range")
        if self.plane_depth <= 0:
            raise ValueError("plane_depth must be positive")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        cx = (self.width - 1) / 2 if self.cx is None else self.cx
        cy = (self.height - 1) / 2 if self.cy is None else self.cy
        return CameraIntrinsics(self.fx, self.fy, cx, cy)

    @property
    def true_pose(self) -> RigidTransform:
        return parse_pose(self.pose)

    @property
    def plane(self) -> tuple[np.ndarray, float]:
        """Unit normal ``n`` and offset ``d`` with ``n . X = d`` in the reference camera."""
        ax, ay = np.radians(self.plane_tilt_x), np.radians(self.plane_tilt_y)
        n = np.array([np.sin(ay) * np.cos(ax), -np.sin(ax), np.cos(ay) * np.cos(ax)])
        return n, self.plane_depth


def load_scene_spec(path) -> SceneSpec:
    kv = read_kv(path)
    kinds = {f.name: f.type for f in fields(SceneSpec)}
    values = {}
    for k, v in kv.items():
        if k not in kinds:
            raise ValueError(f"{path}: unknown scene key {k!r}")
        kind = kinds[k]
        if kind == "int":
            values[k] = int(v)
        elif kind in ("float", "Optional[float]"):
            values[k] = float(v)
        else:
            values[k] = v
    values.setdefault("name", Path(path).stem)
    return SceneSpec(**values)


@dataclass(frozen=True)
class TemperatureField:
    spec: SceneSpec
    freqs: np.ndarray      # (K, 2) cycles per pixel
    phases: np.ndarray
    amps: np.ndarray
    hot_center: np.ndarray
    hot_radius: float

    @classmethod
    def from_seed(cls, spec: SceneSpec, rng: np.random.Generator) -> "TemperatureField":
        k = spec.texture_waves
        wl = rng.uniform(spec.wavelength_min, spec.wavelength_max, k)
        theta = rng.uniform(0, np.pi, k)
        freqs = np.stack([np.cos(theta), np.sin(theta)], axis=1) / wl[:, None]
        phases = rng.uniform(0, 2 * np.pi, k)
        amps = rng.uniform(0.5, 1.0, k)
        radius = np.sqrt(spec.hotspot_fraction * spec.width * spec.height / np.pi)
        margin = radius + spec.hotspot_rim + 2
        center = np.array([
            rng.uniform(min(margin, spec.width / 2), max(spec.width - margin, spec.width / 2)),
            rng.uniform(min(margin, spec.height / 2), max(spec.height - margin, spec.height / 2)),
        ])
        return cls(spec, freqs, phases, amps, center, float(radius))

    def texture(self, u, v) -> np.ndarray:
        arg = 2 * np.pi * (u[..., None] * self.freqs[:, 0] + v[..., None] * self.freqs[:, 1]) + self.phases
        return (np.sin(arg) * self.amps).sum(-1) / self.amps.sum()

    def hot_weight(self, u, v) -> np.ndarray:
        """1 inside the heat source, raised-cosine falloff over the rim, 0 outside."""
        if self.hot_radius <= 0:
            return np.zeros(np.shape(u))
        dist = np.hypot(u - self.hot_center[0], v - self.hot_center[1])
        rim = max(self.spec.hotspot_rim, 1e-9)
        s = np.clip((dist - self.hot_radius) / rim, 0.0, 1.0)
        return 0.5 * (1 + np.cos(np.pi * s))

    def hot_mask(self, u, v) -> np.ndarray:
        if self.hot_radius <= 0:
            return np.zeros(np.shape(u), dtype=bool)
        dist = np.hypot(u - self.hot_center[0], v - self.hot_center[1])
        return dist < self.hot_radius + self.spec.hotspot_rim

    def __call__(self, u, v) -> np.ndarray:
        bg = self.spec.background + self.spec.texture_amplitude * self.texture(u, v)
        w = self.hot_weight(u, v)
        return (1 - w) * bg + w * self.spec.hotspot_value


def plane_view(spec: SceneSpec, T_ref_to_cam: RigidTransform):
    """Depth map of the plane in a camera, and each pixel's reference-camera coordinates."""
    K = spec.intrinsics
    n, d = spec.plane
    n_c = T_ref_to_cam.rotation @ n
    d_c = d + n_c @ T_ref_to_cam.translation
    u, v = pixel_grid(spec.height, spec.width)
    rays = backproject(u, v, np.ones_like(u), K)
    denom = rays @ n_c
    with np.errstate(divide="ignore"):
        depth = d_c / denom
    if not (np.all(denom > 0) and np.all(depth > 0)):
        raise ValueError(f"scene {spec.name!r}: plane not in front of every pixel")
    pts_ref = T_ref_to_cam.inverse().apply(rays * depth[..., None])
    u_ref, v_ref, _ = project(pts_ref, K)
    return depth, u_ref, v_ref


@dataclass
class RenderedScene:
    """Frames with ground truth.

    ``poses[k]`` maps camera ``k`` into camera ``k + 1``; for a pair,
    ``frames = [target, source]`` and ``poses[0]`` is the target->source pose.
    """

    spec: SceneSpec
    frames: list[RawFrame]
    depths: list[np.ndarray]
    poses: list[RigidTransform]
    hot_masks: list[np.ndarray]
    seed: int
    clean: list[np.ndarray] = field(repr=False, default_factory=list)

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.spec.intrinsics

    # pair-style accessors
    @property
    def frame_t(self) -> RawFrame:
        return self.frames[0]

    @property
    def frame_s(self) -> RawFrame:
        return self.frames[1]

    @property
    def gt_depth(self) -> np.ndarray:
        return self.depths[0]

    @property
    def gt_pose(self) -> RigidTransform:
        return self.poses[0]

    @property
    def hot_region(self) -> np.ndarray:
        """Union of the heat-source footprint over every frame."""
        return np.logical_or.reduce(self.hot_masks)


def _power(T: RigidTransform, k: int) -> RigidTransform:
    out = RigidTransform.identity()
    step = T if k >= 0 else T.inverse()
    for _ in range(abs(k)):
        out = step.compose(out)
    return out


def render_frames(spec: SceneSpec, seed: int, n_frames: int, reference: int) -> RenderedScene:
    rng = np.random.default_rng(seed)
    fld = TemperatureField.from_seed(spec, rng)
    gt = spec.true_pose
    frames, depths, masks, clean = [], [], [], []
    for k in range(n_frames):
        depth, u_ref, v_ref = plane_view(spec, _power(gt, k - reference))
        values = fld(u_ref, v_ref)
        clean.append(values)
        if spec.noise_sigma > 0:
            values = values + rng.normal(0.0, spec.noise_sigma, values.shape)
        counts = np.clip(np.rint(values), 0, MAXVAL_16).astype(np.uint16)
        frames.append(RawFrame(counts, frame_index=k))
        depths.append(depth)
        masks.append(fld.hot_mask(u_ref, v_ref))
    return RenderedScene(spec, frames, depths, [gt] * (n_frames - 1), masks, seed, clean)


def render_scene(spec: SceneSpec, seed: int = 0) -> RenderedScene:
    """Target frame from the reference camera, source frame one true pose away."""
    return render_frames(spec, seed, 2, 0)


def render_snippet(spec: SceneSpec, seed: int = 0, n_frames: int = 3) -> RenderedScene:
    """Constant-motion sequence centred on the reference camera."""
    return render_frames(spec, seed, n_frames, n_frames // 2)


@dataclass(frozen=True)
class DominationReport:
    """Share of the adjacent-frame |difference| mass on heat-source pixels."""

    mode: str
    hot_loss_share: float
    background_contrast: float


def domination_report(frame_t, frame_s, hot_mask: np.ndarray | None = None,
                      mapping: MappingConfig = MappingConfig()) -> DominationReport:
    """Map both frames as one group and measure how much of |I_t - I_s| the hot region owns."""
    a, b = enhance_group([frame_t, frame_s], mapping)
    diff = np.abs(a - b)
    total = diff.sum()
    if hot_mask is None or not np.any(hot_mask):
        share = 0.0
        background = np.ones(a.shape, dtype=bool)
    else:
        hot_mask = np.asarray(hot_mask, dtype=bool)
        share = float(diff[hot_mask].sum() / total) if total > 0 else 0.0
        background = ~hot_mask
    bg = a[background]
    contrast = float(np.sqrt(np.mean((bg - bg.mean()) ** 2))) if bg.size else 0.0
    return DominationReport(mapping.mode, share, contrast)


def bundled_scene(name: str) -> SceneSpec:
    """One of the scene files shipped with the package (``hotspot``, ``plane``, ``fronto``)."""
    path = resources.files(__package__).joinpath("scenes", f"{name}.cfg")
    if not path.is_file():
        raise FileNotFoundError(f"no bundled scene {name!r}")
    with resources.as_file(path) as p:
        return load_scene_spec(p)
