"""``thermoseed`` command line: thin adapters over the library.

Settings resolve as command-line flags, then a ``--config`` key=value file,
then the built-in defaults.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .config import (RunConfig, format_kv, format_pose, load_intrinsics, load_poses, read_kv)
from .frameio import (FrameIOError, RawFrame, atomic_write, export_depth_map, export_frame,
                      export_heatmap, export_histogram_csv, load_depth_map, load_image,
                      load_raw_frame, load_sequence, write_histogram_csv)
from .lde import clahe
from .losses import total_loss
from .mapping import MODES, enhance_group
from .optimize import (AblationConfig, OptimConfig, ablate, control_grid, optimize_pose_depth,
                       perturb_pose)
from .synth import SceneSpec, bundled_scene, domination_report, load_scene_spec, render_snippet
from .tctr import build_histogram, build_profile

THREADS_ENV = "THERMOSEED_THREADS"
FORMATS = ("pgm16", "png16", "png8")
_EXT = {"pgm16": ".pgm", "png16": ".png", "png8": ".png"}
REMAP_DEFAULTS = RunConfig(mode="tctr")

_RUN_HELP = {
    "bins": "histogram bins N_bin",
    "clip": "CLAHE clip limit",
    "tiles": "CLAHE tile grid ROWSxCOLS",
    "gamma": "SSIM/L1 balance and the loss weight gamma",
    "lambda_gc": "geometric consistency weight",
    "lambda_sm": "smoothness weight",
    "group_size": "frames per mapping group",
    "mode": f"mapping mode, one of {', '.join(MODES)}",
    "seed": "random seed",
}


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, except for flags whose default is resolved later."""

    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


class CliError(Exception):
    """Bad input detected by the adapter layer; reported as a one-line diagnostic."""


def thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise CliError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _pmap(fn, items):
    """Ordered map, threaded up to the configured cap."""
    items = list(items)
    n = min(thread_cap(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _add_run_flags(p: argparse.ArgumentParser, names, defaults: RunConfig = RunConfig()) -> None:
    for name in names:
        kind = {f.name: f.type for f in fields(RunConfig)}[name]
        caster = {"int": int, "float": float, "str": str}[kind]
        extra = {"choices": MODES} if name == "mode" else {}
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=caster, default=None,
                       metavar=name.upper() if name != "mode" else None,
                       help=f"{_RUN_HELP[name]} (default: {getattr(defaults, name)})", **extra)
    p.add_argument("--config", type=Path, default=None,
                   help="key=value file with any of the settings above; flags win over it")


def resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    cfg = base or RunConfig()
    if getattr(args, "config", None) is not None:
        kv = read_kv(args.config)
        known = {f.name for f in fields(RunConfig)}
        for key in kv:
            if key.replace("-", "_") not in known:
                raise CliError(f"{args.config}: unknown setting {key!r}")
        cfg = cfg.updated(kv)
    flags = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    cfg = cfg.updated(flags)
    cfg.mapping()  # validates mode and tile grid early
    return cfg


def _load_frames(paths) -> list[RawFrame]:
    frames = [load_raw_frame(p, i) for i, p in enumerate(paths)]
    _check_sizes([(p, f.shape) for p, f in zip(paths, frames)])
    return frames


def _check_sizes(items) -> None:
    ref_path, ref_shape = items[0]
    for path, shape in items[1:]:
        if shape != ref_shape:
            raise CliError(f"size mismatch: {path} is {shape[1]}x{shape[0]} "
                           f"but {ref_path} is {ref_shape[1]}x{ref_shape[0]}")


def _frames_from_inputs(inputs) -> list[RawFrame]:
    if len(inputs) == 1 and Path(inputs[0]).is_dir():
        return list(load_sequence(inputs[0]))
    return _load_frames(inputs)


def _groups(n: int, size: int) -> list[range]:
    if size < 1:
        raise CliError("group size must be at least 1")
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def _scene(arg: str) -> SceneSpec:
    path = Path(arg)
    if path.is_file():
        return load_scene_spec(path)
    try:
        return bundled_scene(arg)
    except FileNotFoundError:
        raise CliError(f"scene spec not found: {arg}") from None


# -- subcommands ---------------------------------------------------------------

def cmd_histogram(args) -> int:
    cfg = resolve_config(args)
    frames = _frames_from_inputs(args.inputs)
    profile = build_profile(build_histogram(frames, cfg.bins))
    if args.out:
        export_histogram_csv(profile, args.out)
    else:
        write_histogram_csv(profile, sys.stdout)
    return 0


def cmd_remap(args) -> int:
    cfg = resolve_config(args, REMAP_DEFAULTS)
    seq = load_sequence(args.in_dir, args.glob)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = list(seq)
    mapping = cfg.mapping()
    for g, idx in enumerate(_groups(len(frames), cfg.group_size)):
        group = [frames[i] for i in idx]
        # the profile is built once per group; per-frame work after it may run in parallel
        enhanced = enhance_group(group, mapping)
        if mapping.mode in ("tctr", "tctr+lde"):
            export_histogram_csv(build_profile(build_histogram(group, cfg.bins)),
                                 out / f"profile_{g:03d}.csv")
        _pmap(lambda pair: export_frame(pair[1], out / (Path(pair[0].path).stem + _EXT[args.format]),
                                        args.format), zip(group, enhanced))
    print(f"remapped {len(frames)} frames in {len(_groups(len(frames), cfg.group_size))} "
          f"group(s) with mode {mapping.mode} -> {out}")
    return 0


def cmd_enhance(args) -> int:
    cfg = resolve_config(args)
    src = Path(args.input)
    clahe_cfg = cfg.mapping().clahe
    if src.is_dir():
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        paths = sorted(p for p in src.iterdir() if p.suffix.lower() in (".pgm", ".png"))
        if not paths:
            raise CliError(f"no .pgm or .png images in {src}")
        targets = [out / (p.stem + _EXT[args.format]) for p in paths]
    else:
        paths, targets = [src], [Path(args.output)]
    _pmap(lambda pt: export_frame(clahe(load_image(pt[0]), clahe_cfg), pt[1], args.format),
          zip(paths, targets))
    print(f"enhanced {len(paths)} image(s)")
    return 0


def cmd_diff(args) -> int:
    cfg = resolve_config(args)
    frames = _load_frames([args.a, args.b])
    hot = None
    if args.hot_mask:
        hot = load_raw_frame(args.hot_mask).counts > 0
        _check_sizes([(args.a, frames[0].shape), (args.hot_mask, hot.shape)])
    rep = domination_report(frames[0], frames[1], hot, cfg.mapping())
    a, b = enhance_group(frames, cfg.mapping())
    diff = np.abs(a - b)
    if args.out:
        export_heatmap(diff, args.out)
    print(f"mode = {rep.mode}")
    print(f"mean_abs_diff = {diff.mean():.10g}")
    print(f"max_abs_diff = {diff.max():.10g}")
    if hot is not None:
        print(f"hot_loss_share = {rep.hot_loss_share:.10g}")
    print(f"background_contrast = {rep.background_contrast:.10g}")
    return 0


def cmd_loss(args) -> int:
    cfg = resolve_config(args)
    frames = _load_frames(args.frames)
    if len(args.depths) != len(frames):
        raise CliError(f"need one depth map per frame: {len(frames)} frames, {len(args.depths)} depths")
    depths = [load_depth_map(p) for p in args.depths]
    _check_sizes([(p, f.shape) for p, f in zip(args.frames, frames)]
                 + [(p, d.shape) for p, d in zip(args.depths, depths)])
    poses = load_poses(args.poses)
    if len(poses) == 1 and len(frames) > 2:
        poses = poses * (len(frames) - 1)
    if len(poses) != len(frames) - 1:
        raise CliError(f"{args.poses}: need {len(frames) - 1} poses for {len(frames)} frames, got {len(poses)}")
    K = load_intrinsics(args.intrinsics)
    b = total_loss(frames, depths, poses, K, cfg.weights(), cfg.mapping())
    for key, value in b.as_dict().items():
        print(f"{key} = {value:.12g}")
    if args.export_dir:
        out = Path(args.export_dir)
        out.mkdir(parents=True, exist_ok=True)
        for k, (t, s) in enumerate(b.pairs):
            tag = f"pair{k}_{t}from{s}"
            export_heatmap(b.l_pe_map[k], out / f"{tag}_l_pe.png", 0.0)
            export_heatmap(b.g_diff_map[k], out / f"{tag}_g_diff.png", 0.0)
            export_heatmap(b.m_sp[k], out / f"{tag}_m_sp.png", 0.0, 1.0)
            export_heatmap(b.v_p[k].astype(float), out / f"{tag}_v_p.png", 0.0, 1.0)
    return 0


def cmd_render(args) -> int:
    cfg = resolve_config(args)
    spec = _scene(args.spec)
    seed = cfg.seed
    snip = render_snippet(spec, seed, args.frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, (frame, depth, hot) in enumerate(zip(snip.frames, snip.depths, snip.hot_masks)):
        export_frame(frame, out / f"frame_{k:03d}.pgm")
        export_depth_map(depth, out / f"depth_{k:03d}.npy")
        export_depth_map(depth, out / f"depth_{k:03d}.pgm")
        export_frame(RawFrame(hot.astype(np.uint16)), out / f"hot_{k:03d}.pgm")
    K = spec.intrinsics
    with atomic_write(out / "intrinsics.cfg", "w") as fh:
        fh.write(format_kv({"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy}))
    with atomic_write(out / "poses.cfg", "w") as fh:
        fh.write("# tx ty tz rx ry rz: camera k -> camera k+1\n")
        fh.write(format_kv({f"pose{k}": format_pose(T) for k, T in enumerate(snip.poses)}))
    print(f"rendered {len(snip.frames)} frames of scene {spec.name!r} (seed {seed}) -> {out}")
    return 0


def cmd_optimize(args) -> int:
    cfg = resolve_config(args)
    frames = _load_frames(args.frames)
    if len(frames) < 2:
        raise CliError("optimize needs at least two frames")
    if len(args.depths) != len(frames):
        raise CliError(f"need one depth map per frame: {len(frames)} frames, {len(args.depths)} depths")
    depths = [load_depth_map(p) for p in args.depths]
    _check_sizes([(p, f.shape) for p, f in zip(args.frames, frames)]
                 + [(p, d.shape) for p, d in zip(args.depths, depths)])
    K = load_intrinsics(args.intrinsics)
    c = len(frames) // 2
    init = load_poses(args.poses)[min(c, len(frames) - 2)]
    gt_pose = None
    if args.gt_poses:
        gt_pose = load_poses(args.gt_poses)[min(c, len(frames) - 2)]
    if args.perturb_deg or args.perturb_trans:
        init = perturb_pose(init, args.perturb_deg, args.perturb_trans, np.random.default_rng([cfg.seed, 1]))
    ocfg = OptimConfig(max_iters=args.max_iters, weights=cfg.weights(), mapping=cfg.mapping())
    ctrl = control_grid(depths[c], ocfg.ctrl_shape)
    tr = optimize_pose_depth(frames, init, ctrl, ocfg, K, depths, gt_pose, depths[c] if gt_pose else None)
    print(f"status = {tr.status}")
    print(f"iterations = {len(tr.iterations) - 1}")
    print(f"initial_loss = {tr.losses[0]:.12g}")
    print(f"final_loss = {tr.losses[-1]:.12g}")
    print("pose = " + " ".join(f"{x:.9g}" for x in format_pose(tr.pose)))
    if gt_pose is not None:
        print(f"rot_err_deg = {tr.rot_err_deg:.6g}")
        print(f"trans_err_pct = {tr.trans_err_pct:.6g}")
    if args.out:
        with atomic_write(Path(args.out), "w") as fh:
            fh.write("iteration,loss," + ",".join(["tx", "ty", "tz", "rx", "ry", "rz"]) + "\n")
            for i, (x, f) in enumerate(tr.iterations):
                p = list(x[3:6]) + list(x[:3])
                fh.write(f"{i},{f:.12e}," + ",".join(f"{v:.12e}" for v in p) + "\n")
    if args.depth_out:
        export_depth_map(tr.depth, args.depth_out)
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    specs = [_scene(s) for s in (args.spec or ["hotspot"])]
    if args.seeds < 1:
        raise CliError("--seeds must be at least 1")
    ocfg = OptimConfig(max_iters=args.max_iters, weights=cfg.weights(), mapping=cfg.mapping())
    acfg = AblationConfig(seeds=tuple(range(cfg.seed, cfg.seed + args.seeds)), optim=ocfg,
                          workers=thread_cap())
    report = ablate(specs, acfg)
    if args.out:
        with atomic_write(Path(args.out), "w") as fh:
            fh.write(report.to_csv())
    print(report.table())
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermoseed",
        description="Temporally consistent thermal mapping and self-supervised loss tools. "
                    f"{THREADS_ENV} caps worker threads/processes (default 1).",
        formatter_class=_HelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    fmt = _HelpFormatter

    p = sub.add_parser("histogram", help="group histogram and mapping profile as CSV", formatter_class=fmt)
    p.add_argument("inputs", nargs="+", help="raw 16-bit PGM frames, or one directory of them")
    p.add_argument("--out", type=Path, help="CSV path (stdout if omitted)")
    _add_run_flags(p, ["bins"])
    p.set_defaults(func=cmd_histogram)

    p = sub.add_parser("remap", help="map raw frames group by group", formatter_class=fmt)
    p.add_argument("in_dir", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--glob", default="*.pgm", help="frame file pattern inside in_dir")
    p.add_argument("--format", choices=FORMATS, default="pgm16", help="output image format")
    _add_run_flags(p, ["bins", "group_size", "mode", "clip", "tiles"], REMAP_DEFAULTS)
    p.set_defaults(func=cmd_remap)
    p.description = "Writes one enhanced frame per input and one profile CSV per group."

    p = sub.add_parser("enhance", help="CLAHE on already-mapped images", formatter_class=fmt)
    p.add_argument("input", help="image file or directory of .pgm/.png images in [0, 1] scale")
    p.add_argument("output", help="output file, or directory when input is a directory")
    p.add_argument("--format", choices=FORMATS, default="pgm16", help="output image format")
    _add_run_flags(p, ["clip", "tiles"])
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("diff", help="|I_t - I_s| after group mapping", formatter_class=fmt)
    p.add_argument("a", help="raw target frame")
    p.add_argument("b", help="raw source frame")
    p.add_argument("--out", type=Path, help="heatmap PNG of the difference")
    p.add_argument("--hot-mask", help="PGM whose non-zero pixels mark the heat source")
    _add_run_flags(p, ["bins", "clip", "tiles", "mode"])
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("loss", help="total loss and per-term breakdown for a snippet", formatter_class=fmt)
    p.add_argument("frames", nargs="+", help="raw frames in temporal order")
    p.add_argument("--intrinsics", required=True, type=Path, help="key=value file with fx fy cx cy")
    p.add_argument("--poses", required=True, type=Path,
                   help="pose0..poseN-2 (camera k -> k+1) or a single pose for all pairs")
    p.add_argument("--depths", required=True, nargs="+",
                   help="one depth map per frame: .npy in metres or PGM in millimetres")
    p.add_argument("--export-dir", type=Path, help="write per-pair loss and mask heatmaps here")
    _add_run_flags(p, ["gamma", "lambda_gc", "lambda_sm", "bins", "clip", "tiles", "mode"])
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("render", help="render a synthetic snippet with ground truth", formatter_class=fmt)
    p.add_argument("--spec", required=True, help="scene file, or a bundled scene name (hotspot, plane, fronto)")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--frames", type=int, default=3, help="snippet length")
    _add_run_flags(p, ["seed"])
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("optimize", help="fit pose and centre depth by direct descent", formatter_class=fmt)
    p.add_argument("frames", nargs="+")
    p.add_argument("--intrinsics", required=True, type=Path)
    p.add_argument("--poses", required=True, type=Path, help="initial poses")
    p.add_argument("--depths", required=True, nargs="+",
                   help="reference depth per frame; the centre one initializes the fit")
    p.add_argument("--gt-poses", type=Path, help="ground-truth poses for error reporting")
    p.add_argument("--perturb-deg", type=float, default=0.0, help="random rotation added to the initial pose")
    p.add_argument("--perturb-trans", type=float, default=0.0, help="random translation (m) added to the initial pose")
    p.add_argument("--max-iters", type=int, default=OptimConfig.max_iters)
    p.add_argument("--out", type=Path, help="trace CSV")
    p.add_argument("--depth-out", type=Path, help="fitted centre depth (.npy or millimetre PGM)")
    _add_run_flags(p, ["gamma", "lambda_gc", "lambda_sm", "bins", "clip", "tiles", "mode", "seed"])
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("ablate", help="base / +TCTR / +LDE comparison on synthetic scenes", formatter_class=fmt)
    p.add_argument("--spec", action="append", help="scene file or bundled name; repeatable (default: hotspot)")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at --seed")
    p.add_argument("--out", type=Path, help="report CSV")
    p.add_argument("--max-iters", type=int, default=OptimConfig.max_iters)
    _add_run_flags(p, ["gamma", "lambda_gc", "lambda_sm", "bins", "clip", "tiles", "seed"])
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, FrameIOError, ValueError, OSError) as e:
        print(f"thermoseed {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
