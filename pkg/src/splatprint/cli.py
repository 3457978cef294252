"""Command-line driver.

Exit codes: 0 on success, 2 for configuration errors, 3 when a stage fails.
Reports are printed as ``key: value`` lines; tables also go to CSV files.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidConfig, SplatprintError
from .gsplat.cloud import load_checkpoint, save_checkpoint
from .gsplat.render import Camera, render
from .io import write_csv, write_ppm
from .pairwise import align_all_pairs, align_views
from .pipeline import (
    STAGES, RunDir, _poses_from_json, default_run_config, eval_depth, eval_novel_views, eval_registration,
    load_run_config, read_json, registration_report, run_pipeline, run_stage, sim3_to_dict, write_json,
)
from .scene import (
    NoiseConfig, camera_pose_for_yaw, generate_scene, load_scene_config, oracle_pointmap, render_view,
)
from .segment import THETA_HI, THETA_KEEP, THETA_LO, segment

EXIT_CONFIG = 2
EXIT_STAGE = 3


def _print_report(values: dict, out=None):
    out = out or sys.stdout
    for key, val in values.items():
        if isinstance(val, float):
            val = f"{val:.6g}"
        print(f"{key}: {val}", file=out)


def _scene(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scene config not found: {path}")
    return generate_scene(load_scene_config(path))


def _run_config(args):
    """RunConfig from ``--config`` (if given) with ``--out`` and per-command overrides."""
    if getattr(args, "config", None):
        cfg = load_run_config(args.config, out_dir=args.out)
    else:
        if args.out is None:
            raise ConfigError("either --config or --out is required")
        cfg = default_run_config(args.out)
        if getattr(args, "scene", None):
            scene_path = Path(args.scene)
            if not scene_path.is_file():
                raise ConfigError(f"scene config not found: {scene_path}")
            cfg = replace(cfg, scene=load_scene_config(scene_path))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, noise=replace(cfg.noise, seed=args.seed))
    if getattr(args, "noise", None) is not None:
        cfg = replace(cfg, noise=replace(cfg.noise, sigma_mm=args.noise))
    if getattr(args, "iters", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, iters=args.iters).validate())
    if getattr(args, "backend", None):
        cfg = replace(cfg, train=replace(cfg.train, backend=args.backend))
    return cfg


def _run_stages(cfg, names):
    metrics = {}
    for name in names:
        rec = run_stage(cfg, name)
        metrics.update({f"{name}.{k}": v for k, v in rec["metrics"].items()})
    return metrics


def _views(scene, poses_path=None):
    views = [render_view(scene, k) for k in range(scene.n_views)]
    if poses_path:
        poses = _poses_from_json(read_json(poses_path))
        if len(poses) != len(views):
            raise ConfigError(f"{poses_path} has {len(poses)} poses for {len(views)} views")
        views = [replace(v, world_from_camera=p) for v, p in zip(views, poses)]
    return views


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen(args):
    cfg = _run_config(args)
    _print_report(_run_stages(cfg, ["scene"]))


def cmd_align_pair(args):
    scene = _scene(args.scene)
    try:
        a, b = (int(x) for x in args.views.split(","))
    except ValueError:
        raise ConfigError(f"--views expects two indices like 0,1; got {args.views!r}") from None
    if not (0 <= a < scene.n_views and 0 <= b < scene.n_views) or a == b:
        raise ConfigError(f"--views must name two distinct views in [0, {scene.n_views})")
    noise = NoiseConfig(sigma_mm=args.noise, seed=args.seed)
    pm = {(v, e): oracle_pointmap(scene, v, e, noise) for v in (a, b) for e in (a, b)}
    res = align_views(pm[(a, a)], pm[(b, b)], pm[(a, b)], pm[(b, a)], args.conf_threshold)
    t = res.transform
    gt = scene.pose(b).inverse().compose(scene.pose(a))
    rel = gt.rotation.matrix.T @ t.rotation.matrix
    angle = math.degrees(math.acos(np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)))
    _print_report({
        "views": f"{a},{b}",
        "scale": t.scale,
        "rotation_wxyz": " ".join(f"{q:.9f}" for q in t.rotation.quat),
        "translation": " ".join(f"{x:.9f}" for x in t.translation),
        "weighted_residual": res.weighted_residual,
        "rotation_error_deg": angle,
    })
    if args.output:
        write_json(args.output, sim3_to_dict(t) | {"weighted_residual": res.weighted_residual})


def cmd_align_global(args):
    cfg = _run_config(args)
    names = ["pairwise_align", "global_align"]
    if not RunDir(cfg.out_dir).scene_config().is_file():
        names.insert(0, "scene")
    _print_report(_run_stages(cfg, names))


def cmd_train(args):
    cfg = _run_config(args)
    _print_report(_run_stages(cfg, ["gsplat_train"]))


def cmd_segment(args):
    scene = _scene(args.scene)
    cloud = load_checkpoint(args.ckpt)
    views = _views(scene, args.poses)
    clean, report = segment(cloud, views, args.theta_lo, args.theta_hi, args.theta_keep, args.backend)
    save_checkpoint(args.output, clean)
    _print_report({"output": args.output, **vars(report)})


def cmd_render(args):
    scene = _scene(args.scene)
    cloud = load_checkpoint(args.ckpt)
    cfg = scene.config
    if args.yaw is not None:
        intr = scene.intrinsics(0)
        pose = camera_pose_for_yaw(args.yaw, cfg.distance_mm, cfg.look_at_y_mm)
    else:
        if not 0 <= args.view < scene.n_views:
            raise ConfigError(f"--view must lie in [0, {scene.n_views})")
        view = _views(scene, args.poses)[args.view]
        intr, pose = view.intrinsics, view.world_from_camera
    bg = tuple(float(x) for x in args.background.split(","))
    image = render(cloud, Camera(intr, pose), bg, args.backend)
    write_ppm(args.output, image)
    _print_report({"output": args.output, "width": intr.width, "height": intr.height})


def cmd_eval_reg(args):
    if args.scene:
        scene = _scene(args.scene)
        noise = NoiseConfig(sigma_mm=args.noise if args.noise is not None else 0.02, seed=args.seed or 0)
        n = scene.n_views
        pms = {(v, e): oracle_pointmap(scene, v, e, noise) for v in range(n) for e in range(n)}
        rows = registration_report(scene, pms, align_all_pairs(pms, args.conf_threshold), _views(scene))
        if args.csv:
            write_csv(args.csv, ("view_a", "view_b", "d_3d_px", "d_oracle_px", "d_2d_baseline_px"), rows)
        metrics = {
            "registration_d_3d_mean": float(np.mean([r[2] for r in rows])),
            "registration_d_oracle_mean": float(np.mean([r[3] for r in rows])),
            "registration_d_2d_mean": float(np.mean([r[4] for r in rows])),
        }
        for a, b, d3, do, d2 in rows:
            metrics[f"pair_{a}_{b}"] = f"d_3d={d3:.4f} d_oracle={do:.4f} d_2d={d2:.4f}"
        _print_report(metrics)
        return
    cfg = _run_config(args)
    _, outs, metrics = eval_registration(cfg, RunDir(cfg.out_dir))
    _print_report(metrics | {"csv": outs[0]})


def cmd_eval_depth(args):
    cfg = _run_config(args)
    _, outs, metrics = eval_depth(cfg, RunDir(cfg.out_dir), scale_align=not args.no_scale_align,
                                  uniform_weights=args.uniform_weights)
    _print_report(metrics | {"csv": outs[0]})


def cmd_eval_nvs(args):
    cfg = _run_config(args)
    if args.n_novel is not None:
        cfg = replace(cfg, n_novel=args.n_novel)
    _, outs, metrics = eval_novel_views(cfg, RunDir(cfg.out_dir))
    _print_report(metrics | {"csv": outs[-1]})


def cmd_run(args):
    cfg = _run_config(args)
    stages = args.stages.split(",") if args.stages else list(STAGES)
    manifest = run_pipeline(cfg, stages)
    _print_report({"manifest": Path(cfg.out_dir) / "manifest.json", "config_sha256": manifest.config_sha256,
                   **manifest.metrics})


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_run_args(p, scene=True):
    p.add_argument("--config", help="run config (INI)")
    p.add_argument("--out", help="run directory (overrides the config's out_dir)")
    if scene:
        p.add_argument("--scene", help="scene config (INI), used when --config is absent")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--backend", choices=("numba", "numpy"), default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="splatprint", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene, views, masks and pointmaps")
    _add_run_args(p)
    p.add_argument("--noise", type=float, default=None, help="pointmap noise sigma (mm)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("align-pair", help="align two views of a scene from their pointmaps")
    p.add_argument("--scene", required=True, help="scene config (INI)")
    p.add_argument("--views", default="0,1", help="two view indices, e.g. 0,1")
    p.add_argument("--noise", type=float, default=0.0, help="pointmap noise sigma (mm)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--conf-threshold", type=float, default=0.5)
    p.add_argument("--output", help="write the transform as JSON")
    p.set_defaults(func=cmd_align_pair)

    p = sub.add_parser("align-global", help="pairwise and global alignment into a fused cloud")
    _add_run_args(p)
    p.add_argument("--noise", type=float, default=None, help="pointmap noise sigma (mm)")
    p.set_defaults(func=cmd_align_global)

    p = sub.add_parser("train", help="fit gaussians to the views of a run directory")
    _add_run_args(p, scene=False)
    p.add_argument("--iters", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="remove background gaussians by mask voting")
    p.add_argument("--ckpt", required=True, help="gaussian checkpoint (PLY)")
    p.add_argument("--scene", required=True, help="scene config (INI)")
    p.add_argument("--poses", help="poses JSON (defaults to the scene's cameras)")
    p.add_argument("--theta-lo", type=float, default=THETA_LO)
    p.add_argument("--theta-hi", type=float, default=THETA_HI)
    p.add_argument("--theta-keep", type=float, default=THETA_KEEP)
    p.add_argument("--backend", choices=("numba", "numpy"), default=None)
    p.add_argument("--output", default="segmented.ply")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("render", help="render a checkpoint from a scene camera or a yaw angle")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--poses", help="poses JSON (defaults to the scene's cameras)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--view", type=int, default=0)
    g.add_argument("--yaw", type=float, default=None, help="yaw in degrees on the scene's camera circle")
    p.add_argument("--background", default="0,0,0")
    p.add_argument("--backend", choices=("numba", "numpy"), default=None)
    p.add_argument("--output", default="render.ppm")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval-reg", help="minutia registration distance (3D, oracle, 2D baseline)")
    _add_run_args(p)
    p.add_argument("--noise", type=float, default=None, help="pointmap noise sigma (mm), with --scene")
    p.add_argument("--conf-threshold", type=float, default=0.5)
    p.add_argument("--csv", help="per-pair CSV, with --scene")
    p.set_defaults(func=cmd_eval_reg)

    p = sub.add_parser("eval-depth", help="weighted depth error of the aligned pointmaps")
    _add_run_args(p, scene=False)
    p.add_argument("--uniform-weights", action="store_true")
    p.add_argument("--no-scale-align", action="store_true")
    p.set_defaults(func=cmd_eval_depth)

    p = sub.add_parser("eval-nvs", help="novel-view PSNR along the interpolated trajectory")
    _add_run_args(p, scene=False)
    p.add_argument("--n-novel", type=int, default=None)
    p.set_defaults(func=cmd_eval_nvs)

    p = sub.add_parser("run", help="full pipeline")
    _add_run_args(p)
    p.add_argument("--noise", type=float, default=None, help="pointmap noise sigma (mm)")
    p.add_argument("--iters", type=int, default=None, help="training iterations")
    p.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)}")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, InvalidConfig) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SplatprintError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
