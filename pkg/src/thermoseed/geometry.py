"""Pinhole camera, rigid transforms, and inverse warping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RigidTransform:
    """x' = R x + t.  A pose T_{t->s} maps target-camera points into the source camera."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_params(cls, params) -> "RigidTransform":
        """From ``(rx, ry, rz, tx, ty, tz)``: axis-angle rotation (radians), translation (m)."""
        p = np.asarray(params, dtype=np.float64)
        return cls(Rotation.from_rotvec(p[:3]).as_matrix(), p[3:6])

    def params(self) -> np.ndarray:
        return np.concatenate([Rotation.from_matrix(self.rotation).as_rotvec(), self.translation])

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points stored along the last axis (..., 3)."""
        return points @ self.rotation.T + self.translation

    def rotation_angle_deg(self) -> float:
        return float(np.degrees(np.linalg.norm(Rotation.from_matrix(self.rotation).as_rotvec())))


def backproject(u, v, depth, K: CameraIntrinsics) -> np.ndarray:
    """Pixel (u, v) at metric depth -> camera-frame point, stacked on the last axis."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("depth must be positive")
    x = (np.asarray(u, dtype=np.float64) - K.cx) / K.fx * depth
    y = (np.asarray(v, dtype=np.float64) - K.cy) / K.fy * depth
    return np.stack(np.broadcast_arrays(x, y, depth), axis=-1)


SNAP_TOL = 1e-9


def _snap(x: np.ndarray) -> np.ndarray:
    # round-off from backproject/project must not move integer pixels off-grid
    r = np.rint(x)
    with np.errstate(invalid="ignore"):
        return np.where(np.abs(x - r) < SNAP_TOL, r, x)


def project(points: np.ndarray, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (u, v, z).  Points with z <= 0 get NaN pixel coordinates."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(z > 0, z, np.nan)
        u = K.fx * points[..., 0] / safe + K.cx
        v = K.fy * points[..., 1] / safe + K.cy
    return _snap(u), _snap(v), z


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    return u, v


def in_bounds(u, v, z, height: int, width: int) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return (z > 0) & (u >= 0) & (u <= width - 1) & (v >= 0) & (v <= height - 1)


def bilinear_sample(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample at sub-pixel (u, v); coordinates are clamped to the image domain.

    ``image`` may carry leading axes (..., H, W), all sampled at the same
    coordinates.  Callers decide validity separately; clamping only keeps the
    values finite and continuous across the border.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-2:]
    u = np.clip(np.where(np.isnan(u), 0.0, u), 0.0, w - 1)
    v = np.clip(np.where(np.isnan(v), 0.0, v), 0.0, h - 1)
    x0 = np.minimum(u.astype(np.intp), w - 2)
    y0 = np.minimum(v.astype(np.intp), h - 2)
    ax = u - x0
    ay = v - y0
    flat = image.reshape(*image.shape[:-2], h * w)
    i00 = y0 * w + x0
    top = flat.take(i00, axis=-1) * (1 - ax) + flat.take(i00 + 1, axis=-1) * ax
    bottom = flat.take(i00 + w, axis=-1) * (1 - ax) + flat.take(i00 + w + 1, axis=-1) * ax
    return top * (1 - ay) + bottom * ay


@dataclass(frozen=True)
class Reprojection:
    """Where each target pixel lands in the source camera."""

    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    valid: np.ndarray


def reproject(depth_t: np.ndarray, pose: RigidTransform, K: CameraIntrinsics) -> Reprojection:
    h, w = depth_t.shape
    u, v = pixel_grid(h, w)
    pts = pose.apply(backproject(u, v, depth_t, K))
    us, vs, z = project(pts, K)
    return Reprojection(us, vs, z, in_bounds(us, vs, z, h, w))


def inverse_warp(source: np.ndarray, depth_t: np.ndarray, pose: RigidTransform,
                 K: CameraIntrinsics, reprojection: Reprojection | None = None):
    """Synthesize the target view from ``source``.  Returns (warped, valid_mask)."""
    source = np.asarray(source, dtype=np.float64)
    depth_t = np.asarray(depth_t, dtype=np.float64)
    if source.shape != depth_t.shape:
        raise ValueError(f"shape mismatch: source {source.shape} vs depth {depth_t.shape}")
    rp = reprojection or reproject(depth_t, pose, K)
    return bilinear_sample(source, rp.u, rp.v), rp.valid


def warp_depth(depth_s: np.ndarray, depth_t: np.ndarray, pose: RigidTransform,
               K: CameraIntrinsics, reprojection: Reprojection | None = None):
    """Depth-consistency pair for each target pixel.

    Returns (d_syn, d_interp, valid): ``d_syn`` is the depth of the target's
    3-D point expressed in the source camera, ``d_interp`` is the source depth
    map bilinearly sampled at the point's projection.  For consistent geometry
    the two agree.  Invalid pixels hold NaN.
    """
    depth_s = np.asarray(depth_s, dtype=np.float64)
    depth_t = np.asarray(depth_t, dtype=np.float64)
    if depth_s.shape != depth_t.shape:
        raise ValueError(f"shape mismatch: {depth_s.shape} vs {depth_t.shape}")
    rp = reprojection or reproject(depth_t, pose, K)
    d_syn = np.where(rp.valid, rp.z, np.nan)
    d_interp = np.where(rp.valid, bilinear_sample(depth_s, rp.u, rp.v), np.nan)
    return d_syn, d_interp, rp.valid


def upsample_bilinear(ctrl: np.ndarray, height: int, width: int) -> np.ndarray:
    """Control grid spanning the image corners, bilinearly interpolated to (height, width)."""
    ctrl = np.asarray(ctrl, dtype=np.float64)
    gh, gw = ctrl.shape
    v = np.linspace(0, gh - 1, height)
    u = np.linspace(0, gw - 1, width)
    uu, vv = np.meshgrid(u, v)
    return bilinear_sample(ctrl, uu, vv)


def upsample_matrix(grid_shape: tuple[int, int], height: int, width: int) -> np.ndarray:
    """Linear map (height*width, gh*gw) equivalent to :func:`upsample_bilinear`."""
    n = grid_shape[0] * grid_shape[1]
    basis = np.eye(n).reshape(n, *grid_shape)
    return upsample_bilinear_stack(basis, height, width).reshape(n, -1).T


def upsample_bilinear_stack(ctrl: np.ndarray, height: int, width: int) -> np.ndarray:
    gh, gw = ctrl.shape[-2:]
    uu, vv = np.meshgrid(np.linspace(0, gw - 1, width), np.linspace(0, gh - 1, height))
    return bilinear_sample(ctrl, uu, vv)
