"""Direct pose/depth optimization against the loss stack, and the ablation harness.

This stands in for network training: the depth of the centre frame is a
coarse control grid, the relative pose is six numbers, and both are fitted
by gradient descent on finite-difference gradients.
"""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .geometry import (CameraIntrinsics, RigidTransform, backproject, bilinear_sample,
                       pixel_grid, project, reproject, upsample_matrix)
from .losses import (LossWeights, directed_pairs, geometric_diff, identity_loss_maps,
                     photometric_loss, smoothness_loss, total_loss_enhanced)
from .mapping import MappingConfig, enhance_group
from .synth import SceneSpec, domination_report, render_snippet

POSE_DIM = 6


class NonFiniteLossError(FloatingPointError):
    pass


def fd_gradient(loss_fn: Callable[[np.ndarray], float], params, step_sizes,
                coords: Sequence[int] | None = None) -> np.ndarray:
    """Central differences ``(f(p + h e_i) - f(p - h e_i)) / 2h`` per coordinate.

    ``coords`` restricts the probes to a subset; the result then has one
    entry per listed coordinate.
    """
    p = np.asarray(params, dtype=np.float64)
    h = np.broadcast_to(np.asarray(step_sizes, dtype=np.float64), p.shape)
    idx = range(p.size) if coords is None else coords
    grad = np.empty(len(idx))
    for n, i in enumerate(idx):
        e = np.zeros_like(p)
        e[i] = h[i]
        fp, fm = loss_fn(p + e), loss_fn(p - e)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteLossError(f"non-finite loss probing coordinate {i}")
        grad[n] = (fp - fm) / (2 * h[i])
    return grad.reshape(p.shape) if coords is None else grad


def richardson_truncation(loss_fn, params, h) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients at ``h`` and ``h/2`` and the truncation estimate ``|g_h - g_h/2| / 3``."""
    g1 = fd_gradient(loss_fn, params, h)
    g2 = fd_gradient(loss_fn, params, np.asarray(h) / 2)
    return g1, g2, np.abs(g1 - g2) / 3


@dataclass(frozen=True)
class OptimConfig:
    max_iters: int = 60
    grad_tol: float = 1e-7
    fd_step: float = 1e-3           # in scaled coordinates
    rot_scale: float = math.radians(1.0)
    trans_scale: float = 0.05        # metres
    depth_scale: float = 0.05        # metres
    initial_step: float = 1.0
    max_step: float = 0.5            # cap on the scaled step length per iteration
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    max_backtracks: int = 30
    direction: str = "bfgs"          # or "gradient" for plain steepest descent
    ctrl_shape: tuple[int, int] = (8, 8)
    optimize_depth: bool = True
    weights: LossWeights = LossWeights()
    mapping: MappingConfig = MappingConfig()


@dataclass
class OptimTrace:
    """Accepted iterates.

    ``iterations[k] = (params, loss)`` holds the true total loss at each
    accepted point.  ``step_losses[k]`` is the loss of step ``k`` measured
    with the masks of the point it started from; the line search guarantees
    ``step_losses[k] <= iterations[k][1]``.  The true loss may still rise by
    the contribution of pixels the static mask admits at the new point.
    """

    iterations: list[tuple[np.ndarray, float]] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    status: str = "running"
    pose: RigidTransform | None = None
    depth: np.ndarray | None = None
    rot_err_deg: float = float("nan")
    trans_err_pct: float = float("nan")
    depth_absrel: float = float("nan")
    grad_norm: float = float("nan")
    elapsed: float = 0.0

    @property
    def losses(self) -> list[float]:
        return [f for _, f in self.iterations]

    @property
    def pose_error(self) -> float:
        """Rotation error in degrees plus translation error in percent of scene depth."""
        return self.rot_err_deg + self.trans_err_pct


def pose_errors(est: RigidTransform, gt: RigidTransform, scene_depth: float) -> tuple[float, float]:
    rot = est.compose(gt.inverse()).rotation_angle_deg()
    trans = float(np.linalg.norm(est.translation - gt.translation) / scene_depth * 100)
    return rot, trans


def abs_rel(pred: np.ndarray, gt: np.ndarray) -> float:
    return float(np.mean(np.abs(pred - gt) / gt))


class SnippetProblem:
    """Loss as a function of one shared relative pose and the centre-frame depth grid.

    Every adjacent pair in the snippet is assumed to move by the same relative
    pose.  Depths of the non-centre frames stay at ``reference_depths``; they
    pin the metric scale that photometry alone leaves free.
    """

    def __init__(self, images, reference_depths, K: CameraIntrinsics, cfg: OptimConfig,
                 init_pose: RigidTransform, init_ctrl: np.ndarray):
        self.images = list(images)
        self.ref_depths = [np.asarray(d, dtype=np.float64) for d in reference_depths]
        self.K = K
        self.cfg = cfg
        self.centre = len(self.images) // 2
        self.shape = self.images[0].shape
        self.x0 = np.concatenate([init_pose.params(), np.asarray(init_ctrl, float).ravel()])
        n_ctrl = int(np.prod(cfg.ctrl_shape)) if cfg.optimize_depth else 0
        self.scale = np.concatenate([
            np.full(3, cfg.rot_scale), np.full(3, cfg.trans_scale), np.full(n_ctrl, cfg.depth_scale)])
        self.n_free = POSE_DIM + n_ctrl
        self.identity = identity_loss_maps(self.images, cfg.weights.gamma)
        self.upsample = upsample_matrix(cfg.ctrl_shape, *self.shape)
        self.grid = pixel_grid(*self.shape)

    def unpack(self, z: np.ndarray) -> tuple[RigidTransform, np.ndarray]:
        x = self.x0.copy()
        x[:self.n_free] += self.scale * z
        pose = RigidTransform.from_params(x[:POSE_DIM])
        depth = (self.upsample @ x[POSE_DIM:]).reshape(self.shape)
        return pose, depth

    def breakdown(self, z: np.ndarray, frozen_masks=None):
        pose, depth = self.unpack(z)
        depths = list(self.ref_depths)
        depths[self.centre] = depth
        poses = [pose] * (len(self.images) - 1)
        return total_loss_enhanced(self.images, depths, poses, self.K, self.cfg.weights,
                                   frozen_masks, self.identity)

    def __call__(self, z: np.ndarray, frozen_masks=None) -> float:
        try:
            return self.breakdown(z, frozen_masks).l_total
        except ValueError:
            # non-positive depth or empty valid set: outside the feasible region
            return float("inf")

    def masks_at(self, z: np.ndarray):
        b = self.breakdown(z)
        return [(b.v_p[k], b.m_sp[k]) for k in range(len(b.pairs))]

    def surrogate(self, z: np.ndarray):
        """Loss with both masks held at their values at ``z`` (what backprop differentiates)."""
        masks = self.masks_at(z)
        return lambda w: self(w, masks)

    def gradient(self, z: np.ndarray, masks, h: float) -> np.ndarray:
        """Central-difference gradient of the frozen-mask loss at ``z``.

        Pose coordinates are probed on the full loss.  A depth control point
        only moves the centre depth inside its support, so its probes
        recompute just the pixels that can see the change and difference
        them against the unperturbed maps.  The result matches
        ``fd_gradient(lambda w: self(w, masks), z, h)`` up to rounding.
        """
        frozen = lambda w: self(w, masks)
        grad = np.empty(self.n_free)
        grad[:POSE_DIM] = fd_gradient(frozen, z, h, range(POSE_DIM))
        if self.n_free == POSE_DIM:
            return grad
        try:
            base = self._pair_state(z, masks)
        except ValueError:
            raise NonFiniteLossError("non-finite loss at the base point") from None
        for j in range(self.n_free - POSE_DIM):
            step = h * self.scale[POSE_DIM + j]
            fp = self._depth_delta(base, j, step)
            fm = self._depth_delta(base, j, -step)
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NonFiniteLossError(f"non-finite loss probing coordinate {POSE_DIM + j}")
            grad[POSE_DIM + j] = (fp - fm) / (2 * h)
        return grad

    def _supports(self):
        if not hasattr(self, "_support_cache"):
            boxes, cols = [], []
            for j in range(self.upsample.shape[1]):
                col = self.upsample[:, j].reshape(self.shape)
                rows, cs = np.nonzero(col)
                boxes.append((rows.min(), rows.max() + 1, cs.min(), cs.max() + 1))
                cols.append(col)
            self._support_cache = boxes, cols
        return self._support_cache

    def _pair_state(self, z, masks):
        pose, depth = self.unpack(z)
        depths = list(self.ref_depths)
        depths[self.centre] = depth
        h, w = self.shape
        gamma = self.cfg.weights.gamma
        states = []
        for k, (t, s, T) in enumerate(directed_pairs(len(self.images), [pose] * (len(self.images) - 1))):
            valid, m_sp = masks[k]
            rp = reproject(depths[t], T, self.K)
            warped, sampled = bilinear_sample(np.stack([self.images[s], depths[s]]), rp.u, rp.v)
            g = geometric_diff(np.where(valid, rp.z, np.nan), np.where(valid, sampled, np.nan), valid)
            l_pe = photometric_loss(self.images[t], warped, gamma)
            rec = np.where(valid, (1 - g) * m_sp * l_pe, 0.0)
            x0 = np.minimum(np.clip(np.nan_to_num(rp.u), 0, w - 1).astype(np.intp), w - 2)
            y0 = np.minimum(np.clip(np.nan_to_num(rp.v), 0, h - 1).astype(np.intp), h - 2)
            states.append(dict(t=t, s=s, T=T, valid=valid, m_sp=m_sp, n=int(valid.sum()),
                               src=np.stack([self.images[s], depths[s]]), rp=rp, l_pe=l_pe, rec=rec, g=g, x0=x0, y0=y0))
        sm = smoothness_loss(depth, self.images[self.centre])
        return depths, states, sm

    def _depth_delta(self, base, j: int, step: float) -> float:
        """Change of the frozen-mask loss when control point ``j`` moves by ``step`` metres."""
        depths, states, sm = base
        boxes, cols = self._supports()
        r0, r1, c0, c1 = boxes[j]
        c = self.centre
        D = depths[c] + step * cols[j]
        h, w = self.shape
        gamma = self.cfg.weights.gamma
        d_rec = d_gc = 0.0
        try:
            for st in states:
                if st["t"] == c:
                    # the warp of pixels in the support changes; SSIM spreads it by one pixel
                    R0, R1, C0, C1 = max(r0 - 2, 0), min(r1 + 2, h), max(c0 - 2, 0), min(c1 + 2, w)
                    I0, I1, J0, J1 = max(r0 - 1, 0), min(r1 + 1, h), max(c0 - 1, 0), min(c1 + 1, w)
                    crop = (slice(R0, R1), slice(C0, C1))
                    pts = st["T"].apply(backproject(self.grid[0][crop], self.grid[1][crop], D[crop], self.K))
                    us, vs, zz = project(pts, self.K)
                    warped, sampled = bilinear_sample(st["src"], us, vs)
                    valid = st["valid"][crop]
                    g = geometric_diff(np.where(valid, zz, np.nan), np.where(valid, sampled, np.nan), valid)
                    l_pe = photometric_loss(self.images[c][crop], warped, gamma)
                    rec = np.where(valid, (1 - g) * st["m_sp"][crop] * l_pe, 0.0)
                    inner = (slice(I0 - R0, I1 - R0), slice(J0 - C0, J1 - C0))
                    outer = (slice(I0, I1), slice(J0, J1))
                    d_rec += (rec[inner].sum() - st["rec"][outer].sum()) / st["n"]
                    d_gc += (g[inner].sum() - st["g"][outer].sum()) / st["n"]
                elif st["s"] == c:
                    # only pixels whose bilinear footprint overlaps the support resample D
                    x0, y0 = st["x0"], st["y0"]
                    hit = (x0 + 1 >= c0) & (x0 < c1) & (y0 + 1 >= r0) & (y0 < r1) & st["valid"]
                    idx = np.flatnonzero(hit)
                    if idx.size == 0:
                        continue
                    rp = st["rp"]
                    sampled = bilinear_sample(D, rp.u.ravel()[idx], rp.v.ravel()[idx])
                    ones = np.ones(idx.size, dtype=bool)
                    g = geometric_diff(rp.z.ravel()[idx], sampled, ones)
                    rec = (1 - g) * st["m_sp"].ravel()[idx] * st["l_pe"].ravel()[idx]
                    d_rec += (rec.sum() - st["rec"].ravel()[idx].sum()) / st["n"]
                    d_gc += (g.sum() - st["g"].ravel()[idx].sum()) / st["n"]
            d_sm = smoothness_loss(D, self.images[c]) - sm
        except ValueError:
            return float("inf")
        wts = self.cfg.weights
        n_pairs = len(states)
        return d_rec / n_pairs + wts.lambda_gc * d_gc / n_pairs + wts.lambda_sm * d_sm / len(self.images)


def optimize_pose_depth(frames: Sequence, init_pose: RigidTransform, init_depth_ctrl: np.ndarray,
                        cfg: OptimConfig, K: CameraIntrinsics, reference_depths: Sequence[np.ndarray],
                        gt_pose: RigidTransform | None = None, gt_depth: np.ndarray | None = None,
                        images: Sequence[np.ndarray] | None = None) -> OptimTrace:
    """Descent with Armijo backtracking on the total loss.

    The search direction is the negative gradient, preconditioned by a BFGS
    inverse-Hessian estimate unless ``cfg.direction == "gradient"``.
    Each iteration works on the loss with the validity and static-pixel
    masks held at the current iterate, which is what a backward pass would
    see: central differences of it give the gradient, and the Armijo test is
    applied to it.  It equals the true loss at the iterate, so no accepted
    step increases the loss it was measured on.

    ``frames`` are raw frames of one snippet, mapped once with ``cfg.mapping``
    (pass ``images`` to skip the mapping).  Stops when the scaled gradient
    norm drops below ``cfg.grad_tol``, the line search fails, or after
    ``cfg.max_iters`` iterations.
    """
    start = time.perf_counter()
    if images is None:
        images = enhance_group(frames, cfg.mapping)
    prob = SnippetProblem(images, reference_depths, K, cfg, init_pose, init_depth_ctrl)
    trace = OptimTrace()
    z = np.zeros(prob.n_free)
    f = prob(z)
    trace.iterations.append((prob.x0.copy(), f))
    if not math.isfinite(f):
        trace.status = "diverged"
        return _finish(trace, prob, z, gt_pose, gt_depth, start)
    H = np.eye(prob.n_free)    # inverse-Hessian estimate, scaled coordinates
    z_prev = g_prev = None
    for it in range(cfg.max_iters):
        masks = prob.masks_at(z)
        frozen = lambda w, m=masks: prob(w, m)
        try:
            g = prob.gradient(z, masks, cfg.fd_step)
        except NonFiniteLossError:
            trace.status = "diverged"
            break
        trace.grad_norm = float(np.linalg.norm(g))
        if trace.grad_norm < cfg.grad_tol:
            trace.status = "converged"
            break
        if cfg.direction == "bfgs" and g_prev is not None:
            H = _bfgs_update(H, z - z_prev, g - g_prev, first=(it == 1))
        d = -H @ g if cfg.direction == "bfgs" else -g
        if float(g @ d) >= 0:
            H = np.eye(prob.n_free)
            d = -g
        norm = float(np.linalg.norm(d))
        if norm > cfg.max_step:
            d *= cfg.max_step / norm
        slope = float(g @ d)
        alpha = cfg.initial_step
        for _ in range(cfg.max_backtracks):
            z_new = z + alpha * d
            f_step = frozen(z_new)
            if f_step <= f + cfg.sufficient_decrease * alpha * slope:
                break
            alpha *= cfg.shrink
        else:
            trace.status = "line-search-failed"
            break
        z_prev, g_prev = z, g
        z = z_new
        f = prob(z)
        if not math.isfinite(f):
            trace.status = "diverged"
            break
        x = prob.x0.copy()
        x[:prob.n_free] += prob.scale * z
        trace.iterations.append((x, f))
        trace.step_losses.append(f_step)
    else:
        trace.status = "max-iters"
    return _finish(trace, prob, z, gt_pose, gt_depth, start)


def _bfgs_update(H: np.ndarray, s: np.ndarray, y: np.ndarray, first: bool) -> np.ndarray:
    sy = float(s @ y)
    if sy <= 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
        return H    # curvature condition failed; keep the previous estimate
    if first:
        H = np.eye(len(s)) * (sy / float(y @ y))
    rho = 1.0 / sy
    V = np.eye(len(s)) - rho * np.outer(s, y)
    return V @ H @ V.T + rho * np.outer(s, s)


def _finish(trace, prob, z, gt_pose, gt_depth, start):
    trace.pose, trace.depth = prob.unpack(z)
    if gt_pose is not None:
        scene_depth = float(np.mean(gt_depth)) if gt_depth is not None else 1.0
        trace.rot_err_deg, trace.trans_err_pct = pose_errors(trace.pose, gt_pose, scene_depth)
    if gt_depth is not None:
        trace.depth_absrel = abs_rel(trace.depth, gt_depth)
    trace.elapsed = time.perf_counter() - start
    return trace


# -- ablation ---------------------------------------------------------------

ABLATION_ROWS = (("base", "minmax"), ("+TCTR", "tctr"), ("+LDE", "tctr+lde"))

CSV_FIELDS = ("scene", "seed", "row", "mode", "hot_loss_share", "background_contrast",
              "rot_err_deg", "trans_err_pct", "pose_error", "depth_absrel", "final_loss",
              "iterations", "status")


def perturb_pose(gt: RigidTransform, rot_deg: float, trans: float,
                 rng: np.random.Generator) -> RigidTransform:
    """``gt`` preceded by a rotation of ``rot_deg`` about a random axis and a random ``trans`` shift."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    shift = rng.normal(size=3)
    shift /= np.linalg.norm(shift)
    delta = RigidTransform.from_params(np.concatenate([axis * math.radians(rot_deg), shift * trans]))
    return delta.compose(gt)


def control_grid(depth: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Depth sampled at the control points (the grid that upsamples back to ``depth`` if it is bilinear)."""
    h, w = depth.shape
    uu, vv = np.meshgrid(np.linspace(0, w - 1, shape[1]), np.linspace(0, h - 1, shape[0]))
    return bilinear_sample(depth, uu, vv)


@dataclass(frozen=True)
class AblationConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    rot_perturb_deg: float = 2.0
    trans_perturb_frac: float = 0.02    # of the plane depth
    optim: OptimConfig = OptimConfig()
    workers: int = 1


@dataclass(frozen=True)
class AblationRow:
    scene: str
    seed: int
    row: str
    mode: str
    hot_loss_share: float
    background_contrast: float
    rot_err_deg: float
    trans_err_pct: float
    pose_error: float
    depth_absrel: float
    final_loss: float
    iterations: int
    status: str


def _ablation_job(spec: SceneSpec, seed: int, cfg: AblationConfig) -> list[AblationRow]:
    snip = render_snippet(spec, seed)
    c = len(snip.frames) // 2
    gt = snip.poses[c]
    # separate stream so the perturbation does not depend on render internals
    rng = np.random.default_rng([seed, 1])
    init = perturb_pose(gt, cfg.rot_perturb_deg, cfg.trans_perturb_frac * spec.plane_depth, rng)
    ctrl = control_grid(snip.depths[c], cfg.optim.ctrl_shape)
    hot = snip.hot_masks[c] | snip.hot_masks[c + 1]
    rows = []
    for label, mode in ABLATION_ROWS:
        mapping = replace(cfg.optim.mapping, mode=mode)
        rep = domination_report(snip.frames[c], snip.frames[c + 1], hot, mapping)
        tr = optimize_pose_depth(snip.frames, init, ctrl, replace(cfg.optim, mapping=mapping),
                                 spec.intrinsics, snip.depths, gt, snip.depths[c])
        rows.append(AblationRow(spec.name, seed, label, mode, rep.hot_loss_share,
                                rep.background_contrast, tr.rot_err_deg, tr.trans_err_pct,
                                tr.pose_error, tr.depth_absrel, tr.losses[-1],
                                len(tr.iterations) - 1, tr.status))
    return rows


@dataclass
class AblationReport:
    rows: list[AblationRow]

    def select(self, scene: str | None = None, row: str | None = None) -> list[AblationRow]:
        return [r for r in self.rows
                if (scene is None or r.scene == scene) and (row is None or r.row == row)]

    def median(self, scene: str, row: str, metric: str = "pose_error") -> float:
        return float(np.median([getattr(r, metric) for r in self.select(scene, row)]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in self.rows:
            writer.writerow([_fmt(getattr(r, k)) for k in CSV_FIELDS])
        return buf.getvalue()

    def table(self) -> str:
        """Per-scene medians over seeds, one line per ablation row."""
        head = (f"{'scene':<10} {'row':<6} {'hot_share*':>10} {'bg_contrast':>11} "
                f"{'rot_deg':>8} {'trans_%':>8} {'absrel':>8}")
        lines = [head, "-" * len(head)]
        for scene in dict.fromkeys(r.scene for r in self.rows):
            for label, _ in ABLATION_ROWS:
                if not self.select(scene, label):
                    continue
                lines.append(
                    f"{scene:<10} {label:<6} {self.median(scene, label, 'hot_loss_share'):>10.4f} "
                    f"{self.median(scene, label, 'background_contrast'):>11.5f} "
                    f"{self.median(scene, label, 'rot_err_deg'):>8.4f} "
                    f"{self.median(scene, label, 'trans_err_pct'):>8.4f} "
                    f"{self.median(scene, label, 'depth_absrel'):>8.5f}")
        lines.append("* hot_share: share of |I_t - I_s| on heat-source pixels "
                     "(this harness's measure of domination)")
        return "\n".join(lines)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10e}"
    return str(x)


def ablate(scene_specs: Sequence[SceneSpec], cfg: AblationConfig = AblationConfig()) -> AblationReport:
    """Base / +TCTR / +LDE rows for every scene and seed, same initial guess across rows.

    Rows come out in (scene, seed, row) order whatever ``cfg.workers`` is.
    """
    if not scene_specs:
        raise ValueError("ablate needs at least one scene spec")
    jobs = [(spec, seed) for spec in scene_specs for seed in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_ablation_job, *zip(*jobs), [cfg] * len(jobs)))
    else:
        results = [_ablation_job(spec, seed, cfg) for spec, seed in jobs]
    return AblationReport([row for rows in results for row in rows])
