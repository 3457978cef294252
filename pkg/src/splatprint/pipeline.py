"""End-to-end run: scene, pairwise and global alignment, splat training, cleanup, evaluation.

Every stage reads its inputs from the run directory and writes its outputs
there, so any stage can be rerun on its own. After each stage the manifest
(``manifest.json``) is rewritten atomically with sha256 hashes of the stage's
inputs and outputs; it carries no timestamps or absolute paths, so two runs of
the same config produce identical manifests.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidConfig, MalformedFile, SplatprintError, StageError
from .geometry import CameraView, Rotation, Sim3Transform
from .global_align import (
    GlobalOpts, build_view_graph, fuse_point_cloud, normalized_rig, optimize_global, view_poses,
)
from .gsplat.cloud import GaussianCloud, load_checkpoint, save_checkpoint
from .gsplat.render import Camera, render
from .gsplat.train import TRACE_HEADER, TrainConfig, train
from .io import read_pgm_mask, read_ply, read_ppm, write_csv, write_pgm_mask, write_ply, write_ppm, write_text
from .metrics import (
    masked_psnr, novel_view_poses, psnr, register_and_project, registration_distance,
    similarity_baseline, weighted_depth_error, yaw_deg,
)
from .pairwise import PairAlignment, align_all_pairs
from .scene import (
    NoiseConfig, Pointmap, SceneConfig, all_pointmaps, export_scene, format_scene_config,
    generate_scene, load_scene_config, raycast_view, render_from_pose, render_view, scene_config_from_parser,
    visible_minutiae,
)
from .segment import THETA_HI, THETA_KEEP, THETA_LO, segment

MANIFEST_FORMAT = "splatprint-run v1"
POINTMAP_FORMAT = "splatprint-pointmap v1"
STAGES = ("scene", "pairwise_align", "global_align", "gsplat_train", "segment", "evaluate")


@dataclass(frozen=True)
class RunConfig:
    out_dir: Path = Path("run")
    scene: SceneConfig = SceneConfig()
    noise: NoiseConfig = NoiseConfig(sigma_mm=0.02)
    conf_threshold: float = 0.5
    global_opts: GlobalOpts = GlobalOpts()
    confidence_floor: float = 0.0
    voxel_mm: float = 0.2
    init_opacity: float = 0.5
    train: TrainConfig = TrainConfig()
    theta_lo: float = THETA_LO
    theta_hi: float = THETA_HI
    theta_keep: float = THETA_KEEP
    n_novel: int = 12
    seed: int = 0

    def describe(self) -> dict:
        """Resolved settings as plain data (the output directory is left out)."""
        d = {
            "scene": asdict(self.scene),
            "noise": asdict(self.noise),
            "align": {
                "conf_threshold": self.conf_threshold,
                "global": asdict(self.global_opts),
                "confidence_floor": self.confidence_floor,
                "voxel_mm": self.voxel_mm,
            },
            "train": asdict(self.train) | {"init_opacity": self.init_opacity},
            "segment": {"theta_lo": self.theta_lo, "theta_hi": self.theta_hi, "theta_keep": self.theta_keep},
            "eval": {"n_novel": self.n_novel},
            "seed": self.seed,
        }
        return json.loads(json.dumps(d, default=list))

    def sha256(self) -> str:
        text = json.dumps(self.describe(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _section(parser, name):
    return dict(parser.items(name)) if parser.has_section(name) else {}


def _number(section, key, raw, kind):
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from None


def load_run_config(path, out_dir=None) -> RunConfig:
    """Parse an INI run config. Relative paths resolve against the config's directory.

    Sections: ``[run]`` (out_dir, scene, seed), ``[noise]``, ``[align]``,
    ``[train]``, ``[segment]``, ``[eval]``; scene keys may also be given inline
    under ``[scene]`` and ``[camera]`` when no scene file is referenced.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"run config not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    base = path.parent
    run = _section(parser, "run")
    seed = _number("run", "seed", run.get("seed", "0"), int)

    if "scene" in run:
        scene_path = (base / run["scene"]).resolve() if not Path(run["scene"]).is_absolute() else Path(run["scene"])
        if not scene_path.is_file():
            raise ConfigError(f"scene config not found: {scene_path}")
        scene = load_scene_config(scene_path)
    else:
        scene = scene_config_from_parser(parser)

    noise_s = _section(parser, "noise")
    noise = NoiseConfig(
        sigma_mm=_number("noise", "sigma_mm", noise_s.get("sigma_mm", "0.02"), float),
        seed=_number("noise", "seed", noise_s.get("seed", str(seed)), int),
        falloff_px=_number("noise", "falloff_px", noise_s.get("falloff_px", "3.0"), float),
        min_confidence=_number("noise", "min_confidence", noise_s.get("min_confidence", "0.2"), float),
    )

    al = _section(parser, "align")
    gopts = GlobalOpts(
        max_iters=_number("align", "global_iters", al.get("global_iters", "300"), int),
        lr=_number("align", "global_lr", al.get("global_lr", "0.01"), float),
        lr_rotation=_number("align", "global_lr_rotation", al.get("global_lr_rotation", "0.001"), float),
        seed=seed,
    )

    tr = _section(parser, "train")
    init_opacity = _number("train", "init_opacity", tr.pop("init_opacity", "0.5"), float)
    tr.setdefault("seed", str(seed))
    try:
        tcfg = TrainConfig.from_mapping(tr)
    except (InvalidConfig, ValueError) as exc:
        raise ConfigError(f"[train]: {exc}") from exc

    sg = _section(parser, "segment")
    ev = _section(parser, "eval")
    out = Path(out_dir) if out_dir is not None else base / run.get("out_dir", "run")
    cfg = RunConfig(
        out_dir=out,
        scene=scene,
        noise=noise,
        conf_threshold=_number("align", "conf_threshold", al.get("conf_threshold", "0.5"), float),
        global_opts=gopts,
        confidence_floor=_number("align", "confidence_floor", al.get("confidence_floor", "0.0"), float),
        voxel_mm=_number("align", "voxel_mm", al.get("voxel_mm", "0.2"), float),
        init_opacity=init_opacity,
        train=tcfg,
        theta_lo=_number("segment", "theta_lo", sg.get("theta_lo", str(THETA_LO)), float),
        theta_hi=_number("segment", "theta_hi", sg.get("theta_hi", str(THETA_HI)), float),
        theta_keep=_number("segment", "theta_keep", sg.get("theta_keep", str(THETA_KEEP)), float),
        n_novel=_number("eval", "n_novel", ev.get("n_novel", "12"), int),
        seed=seed,
    )
    return cfg


def default_run_config(out_dir, **overrides) -> RunConfig:
    return replace(RunConfig(out_dir=Path(out_dir)), **overrides)


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sim3_to_dict(t: Sim3Transform) -> dict:
    return {
        "scale": float(t.scale),
        "rotation_wxyz": [float(x) for x in t.rotation.quat],
        "translation": [float(x) for x in t.translation],
    }


def sim3_from_dict(d) -> Sim3Transform:
    return Sim3Transform(float(d["scale"]), Rotation(np.array(d["rotation_wxyz"])), np.array(d["translation"]))


def write_json(path, obj):
    write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: {exc.msg}", exc.pos) from exc


def save_pointmap(path, pm: Pointmap):
    idx = np.flatnonzero(pm.valid.ravel())
    write_ply(
        path, pm.points.reshape(-1, 3)[idx],
        extra={"pixel": idx, "confidence": pm.confidence.ravel()[idx]},
        comments=[POINTMAP_FORMAT, f"view {pm.view} ref {pm.ref} width {pm.width} height {pm.height}"],
        float_fmt="%.17g",
    )


def load_pointmap(path) -> Pointmap:
    props, comments = read_ply(path)
    meta = next((c.split() for c in comments if c.startswith("view ")), None)
    if POINTMAP_FORMAT not in comments or meta is None:
        raise MalformedFile(f"{path}: not a {POINTMAP_FORMAT} file", 0)
    view, ref, w, h = int(meta[1]), int(meta[3]), int(meta[5]), int(meta[7])
    idx = props["pixel"].astype(np.int64)
    pts = np.zeros((h * w, 3))
    pts[idx] = np.stack([props["x"], props["y"], props["z"]], axis=1)
    conf = np.zeros(h * w)
    conf[idx] = props["confidence"]
    valid = np.zeros(h * w, dtype=bool)
    valid[idx] = True
    return Pointmap(pts.reshape(h, w, 3), conf.reshape(h, w), valid.reshape(h, w), view=view, ref=ref)


# ---------------------------------------------------------------------------
# run directory layout
# ---------------------------------------------------------------------------


class RunDir:
    def __init__(self, root):
        self.root = Path(root)

    def __truediv__(self, rel):
        return self.root / rel

    def rel(self, path) -> str:
        return Path(path).relative_to(self.root).as_posix()

    def scene_config(self):
        return self / "scene/scene.ini"

    def view_image(self, k):
        return self / f"scene/view_{k}.ppm"

    def view_mask(self, k):
        return self / f"scene/mask_{k}.pgm"

    def pointmap(self, v, e):
        return self / f"scene/pointmap_{v}_{e}.ply"


def load_scene(run: RunDir):
    path = run.scene_config()
    if not path.is_file():
        raise ConfigError(f"scene config not found: {path}")
    return generate_scene(load_scene_config(path))


def load_views(run: RunDir, scene, poses=None):
    """Captured views as persisted (8-bit images, masks) with ground-truth or given poses."""
    views = []
    for k in range(scene.n_views):
        mask = read_pgm_mask(run.view_mask(k))
        views.append(CameraView(
            intrinsics=scene.intrinsics(k),
            world_from_camera=scene.pose(k) if poses is None else poses[k],
            image=read_ppm(run.view_image(k)),
            mask=mask,
            minutiae_px=visible_minutiae(scene, k, mask),
        ))
    return views


def load_pointmaps(run: RunDir, n_views):
    return {(v, e): load_pointmap(run.pointmap(v, e)) for v in range(n_views) for e in range(n_views)}


def _poses_from_json(d):
    return [sim3_from_dict(p) for p in d["poses"]]


def rig_order(yaws):
    """Indices of the left, center and right cameras by yaw."""
    order = np.argsort(np.asarray(yaws, dtype=np.float64), kind="stable")
    return int(order[0]), int(order[len(order) // 2]), int(order[-1])


# ---------------------------------------------------------------------------
# stages: each returns (inputs, outputs, metrics)
# ---------------------------------------------------------------------------


def stage_scene(cfg: RunConfig, run: RunDir):
    scene = generate_scene(cfg.scene)
    write_text(run.scene_config(), format_scene_config(cfg.scene))
    ply, meta = export_scene(scene, run / "scene")
    outs = [run.scene_config(), ply, meta]
    for k in range(scene.n_views):
        view = render_view(scene, k)
        write_ppm(run.view_image(k), view.image)
        write_pgm_mask(run.view_mask(k), view.mask)
        outs += [run.view_image(k), run.view_mask(k)]
    for (v, e), pm in sorted(all_pointmaps(scene, cfg.noise).items()):
        save_pointmap(run.pointmap(v, e), pm)
        outs.append(run.pointmap(v, e))
    return [], outs, {"n_views": scene.n_views, "n_minutiae": len(scene.minutiae)}


def stage_pairwise(cfg: RunConfig, run: RunDir):
    scene = load_scene(run)
    n = scene.n_views
    pms = load_pointmaps(run, n)
    pairs = align_all_pairs(pms, cfg.conf_threshold)
    out = {
        f"{a}-{b}": sim3_to_dict(p.transform) | {
            "weighted_residual": p.weighted_residual, "inlier_weight_sum": p.inlier_weight_sum,
        }
        for (a, b), p in sorted(pairs.items())
    }
    path = run / "align/pairwise.json"
    write_json(path, out)
    ins = [run.scene_config()] + [run.pointmap(v, e) for v in range(n) for e in range(n)]
    return ins, [path], {"n_pairs": len(pairs)}


def load_pairwise(run: RunDir):
    d = read_json(run / "align/pairwise.json")
    out = {}
    for key, val in d.items():
        a, b = (int(x) for x in key.split("-"))
        out[(a, b)] = PairAlignment(sim3_from_dict(val), val["weighted_residual"], val["inlier_weight_sum"])
    return out


def stage_global(cfg: RunConfig, run: RunDir):
    scene = load_scene(run)
    n = scene.n_views
    pms = load_pointmaps(run, n)
    pairs = load_pairwise(run)
    colors = {k: read_ppm(run.view_image(k)) for k in range(n)}
    ga = optimize_global(build_view_graph(pms, pairs, colors), cfg.global_opts)
    poses, scale = normalized_rig(ga)
    fused = fuse_point_cloud(ga, cfg.confidence_floor, None)
    fused_pts = fused.points / scale

    outs = []
    path = run / "align/fused.ply"
    write_ply(path, fused_pts, fused.colors, comments=["splatprint fused cloud"])
    outs.append(path)
    path = run / "align/poses.json"
    write_json(path, {
        "poses": [sim3_to_dict(poses[k]) for k in range(n)],
        "scale": scale,
        "edge_scales": list(ga.edge_scales),
        "final_objective": ga.final_objective,
    })
    outs.append(path)
    path = run / "align/global_trace.csv"
    write_csv(path, ("iter", "objective"), list(enumerate(ga.objective_trace)))
    outs.append(path)

    # per-view predicted depth in each camera's own (similarity) frame
    sim_poses = view_poses(ga)
    for v in range(n):
        sel = ga.valid[v]
        pcam = sim_poses[v].inverse().apply(ga.chi[v][sel])
        idx = np.flatnonzero(sel.ravel())
        path = run / f"align/depth_{v}.ply"
        write_ply(path, pcam, extra={"pixel": idx, "weight": ga.confidence[v][sel]},
                  comments=["splatprint depth", f"width {sel.shape[1]} height {sel.shape[0]}"],
                  float_fmt="%.17g")
        outs.append(path)
    ins = [run.scene_config()] + [run.pointmap(v, e) for v in range(n) for e in range(n)]
    ins += [run / "align/pairwise.json"] + [run.view_image(k) for k in range(n)]
    return ins, outs, {"final_objective": ga.final_objective, "n_fused_points": len(fused_pts)}


def stage_train(cfg: RunConfig, run: RunDir):
    from .global_align import voxel_downsample

    scene = load_scene(run)
    n = scene.n_views
    props, _ = read_ply(run / "align/fused.ply")
    pts = np.stack([props["x"], props["y"], props["z"]], axis=1)
    cols = np.stack([props["red"], props["green"], props["blue"]], axis=1)
    if cfg.voxel_mm:
        pts, cols = voxel_downsample(pts, cols, cfg.voxel_mm)
    init = GaussianCloud.from_points(pts, cols, opacity=cfg.init_opacity)
    poses = _poses_from_json(read_json(run / "align/poses.json"))
    views = load_views(run, scene)
    res = train(init, views, cfg.train, poses=poses)

    outs = []
    path = run / "train/gaussians.ply"
    save_checkpoint(path, res.cloud)
    outs.append(path)
    path = run / "train/poses.json"
    write_json(path, {"poses": [sim3_to_dict(p) for p in res.poses]})
    outs.append(path)
    path = run / "train/loss.csv"
    write_csv(path, TRACE_HEADER, res.trace)
    outs.append(path)
    scores = []
    for k in range(n):
        img = render(res.cloud, Camera(views[k].intrinsics, res.poses[k]), cfg.train.background, cfg.train.backend)
        scores.append(psnr(img, views[k].image))
        path = run / f"train/render_{k}.ppm"
        write_ppm(path, img)
        outs.append(path)
    ins = [run.scene_config(), run / "align/fused.ply", run / "align/poses.json"]
    ins += [p for k in range(n) for p in (run.view_image(k), run.view_mask(k))]
    metrics = {
        "n_gaussians_init": len(init), "n_gaussians": len(res.cloud),
        "train_psnr_mean": float(np.mean(scores)), "train_psnr_min": float(np.min(scores)),
    }
    return ins, outs, metrics


def stage_segment(cfg: RunConfig, run: RunDir):
    scene = load_scene(run)
    n = scene.n_views
    cloud = load_checkpoint(run / "train/gaussians.ply")
    poses = _poses_from_json(read_json(run / "train/poses.json"))
    views = load_views(run, scene, poses)
    clean, report = segment(cloud, views, cfg.theta_lo, cfg.theta_hi, cfg.theta_keep, cfg.train.backend)
    outs = []
    path = run / "segment/gaussians.ply"
    save_checkpoint(path, clean)
    outs.append(path)
    path = run / "segment/report.json"
    write_json(path, asdict(report))
    outs.append(path)
    ins = [run.scene_config(), run / "train/gaussians.ply", run / "train/poses.json"]
    ins += [p for k in range(n) for p in (run.view_image(k), run.view_mask(k))]
    return ins, outs, asdict(report)


def registration_report(scene, pointmaps, pairs, views):
    """D per view pair for the 3D pipeline, the ground-truth transform and the 2D baseline."""
    rows = []
    for (a, b), pa in sorted(pairs.items()):
        intr_b = scene.intrinsics(b)
        gt = scene.pose(b).inverse().compose(scene.pose(a))
        ma, mb = views[a].minutiae_px, views[b].minutiae_px
        d3 = registration_distance(register_and_project(pointmaps[(a, a)], ma, mb, pa.transform, intr_b))
        do = registration_distance(register_and_project(pointmaps[(a, a)], ma, mb, gt, intr_b))
        d2 = registration_distance(similarity_baseline(ma, mb))
        rows.append((a, b, d3, do, d2))
    return rows


def eval_novel_views(cfg: RunConfig, run: RunDir, scene=None):
    """Render the interpolated trajectory and score it against ground truth."""
    scene = scene or load_scene(run)
    views = load_views(run, scene)
    bg, be = cfg.train.background, cfg.train.backend
    trained = load_checkpoint(run / "train/gaussians.ply")
    clean = load_checkpoint(run / "segment/gaussians.ply")
    poses = _poses_from_json(read_json(run / "train/poses.json"))
    outs, metrics = [], {}

    for key, cloud in (("train_psnr", trained), ("train_psnr_segmented", clean)):
        scores = [psnr(render(cloud, Camera(v.intrinsics, p), bg, be), v.image) for v, p in zip(views, poses)]
        metrics[f"{key}_mean"] = float(np.mean(scores))
        metrics[f"{key}_min"] = float(np.min(scores))

    left, center, right = rig_order(cfg.scene.yaws_deg)
    gt_poses = novel_view_poses(scene.pose(left), scene.pose(center), scene.pose(right), cfg.n_novel)
    rc_poses = novel_view_poses(poses[left], poses[center], poses[right], cfg.n_novel)
    intr = scene.intrinsics(center)
    rows = []
    for i, (gp, rp) in enumerate(zip(gt_poses, rc_poses)):
        gt_img, gt_mask = render_from_pose(scene, intr, gp)
        cam = Camera(intr, rp)
        before = render(trained, cam, bg, be)
        after = render(clean, cam, bg, be)
        held_out = 0 < i < cfg.n_novel - 1
        rows.append((i, yaw_deg(gp), int(held_out), psnr(after, gt_img), masked_psnr(after, gt_img, gt_mask),
                     psnr(before, gt_img), masked_psnr(before, gt_img, gt_mask)))
        path = run / f"eval/novel_{i:02d}.ppm"
        write_ppm(path, after)
        outs.append(path)
    path = run / "eval/novel.csv"
    write_csv(path, ("frame", "yaw_deg", "held_out", "psnr", "masked_psnr", "psnr_unsegmented",
                     "masked_psnr_unsegmented"), rows)
    outs.append(path)
    held = [r for r in rows if r[2]]
    if held:
        metrics["heldout_psnr_mean"] = float(np.mean([r[3] for r in held]))
        metrics["heldout_psnr_min"] = float(np.min([r[3] for r in held]))
        metrics["heldout_masked_psnr_mean"] = float(np.mean([r[4] for r in held]))
        metrics["heldout_masked_psnr_unsegmented_mean"] = float(np.mean([r[6] for r in held]))
    ins = [run / "train/gaussians.ply", run / "segment/gaussians.ply", run / "train/poses.json"]
    ins += [run.view_image(k) for k in range(scene.n_views)]
    return ins, outs, metrics


def eval_registration(cfg: RunConfig, run: RunDir, scene=None):
    scene = scene or load_scene(run)
    n = scene.n_views
    views = load_views(run, scene)
    reg = registration_report(scene, load_pointmaps(run, n), load_pairwise(run), views)
    path = run / "eval/registration.csv"
    write_csv(path, ("view_a", "view_b", "d_3d_px", "d_oracle_px", "d_2d_baseline_px"), reg)
    metrics = {
        "registration_d_3d_mean": float(np.mean([r[2] for r in reg])),
        "registration_d_oracle_mean": float(np.mean([r[3] for r in reg])),
        "registration_d_2d_mean": float(np.mean([r[4] for r in reg])),
    }
    ins = [run / "align/pairwise.json"] + [run.pointmap(v, v) for v in range(n)]
    ins += [run.view_mask(k) for k in range(n)]
    return ins, [path], metrics


def eval_depth(cfg: RunConfig, run: RunDir, scene=None, scale_align=True, uniform_weights=False):
    """Confidence-weighted depth error of the globally aligned pointmaps against ray-cast truth."""
    scene = scene or load_scene(run)
    rows = []
    for v in range(scene.n_views):
        props, _ = read_ply(run / f"align/depth_{v}.ply")
        rc = raycast_view(scene, v)
        h, w = rc.mask.shape
        pred = np.full(h * w, np.nan)
        wts = np.zeros(h * w)
        idx = props["pixel"].astype(np.int64)
        pred[idx] = props["z"]
        wts[idx] = 1.0 if uniform_weights else props["weight"]
        gt = np.where(rc.mask, rc.points_cam[..., 2], np.nan).ravel()
        rows.append((v, weighted_depth_error(pred, gt, rc.mask.ravel() & np.isfinite(pred), wts, scale_align)))
    path = run / "eval/depth.csv"
    write_csv(path, ("view", "weighted_depth_error_mm"), rows)
    ins = [run / f"align/depth_{v}.ply" for v in range(scene.n_views)]
    return ins, [path], {"depth_error_mm_mean": float(np.mean([r[1] for r in rows]))}


def stage_evaluate(cfg: RunConfig, run: RunDir):
    scene = load_scene(run)
    ins, outs, metrics = [run.scene_config()], [], {}
    for fn in (eval_novel_views, eval_registration, eval_depth):
        i, o, m = fn(cfg, run, scene)
        ins += [p for p in i if p not in ins]
        outs += o
        metrics.update(m)
    path = run / "eval/metrics.json"
    write_json(path, metrics)
    return ins, outs + [path], metrics


STAGE_FUNCS = {
    "scene": stage_scene,
    "pairwise_align": stage_pairwise,
    "global_align": stage_global,
    "gsplat_train": stage_train,
    "segment": stage_segment,
    "evaluate": stage_evaluate,
}


# ---------------------------------------------------------------------------
# manifest and driver
# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    config_sha256: str
    config: dict
    stages: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "format": MANIFEST_FORMAT,
            "config_sha256": self.config_sha256,
            "config": self.config,
            "stages": self.stages,
            "metrics": self.metrics,
        }

    def write(self, path):
        write_json(path, self.to_dict())


def _stage_record(run: RunDir, name, ins, outs, metrics, status="ok", error=None):
    rec = {
        "name": name,
        "status": status,
        "inputs": {run.rel(p): sha256_file(p) for p in ins if Path(p).is_file()},
        "outputs": {run.rel(p): sha256_file(p) for p in outs if Path(p).is_file()},
        "metrics": metrics,
    }
    if error is not None:
        rec["error"] = error
    return rec


def run_stage(cfg: RunConfig, name, manifest: RunManifest = None) -> dict:
    """Run one stage from persisted inputs and return its manifest record."""
    if name not in STAGE_FUNCS:
        raise ConfigError(f"unknown stage {name!r}; stages are {', '.join(STAGES)}")
    run = RunDir(cfg.out_dir)
    run.root.mkdir(parents=True, exist_ok=True)
    try:
        ins, outs, metrics = STAGE_FUNCS[name](cfg, run)
    except (SplatprintError, OSError, ValueError) as exc:
        if manifest is not None:
            manifest.stages.append(_stage_record(run, name, [], [], {}, "failed", f"{type(exc).__name__}: {exc}"))
            manifest.write(run / "manifest.json")
        if isinstance(exc, StageError):
            raise
        raise StageError(name, exc) from exc
    return _stage_record(run, name, ins, outs, metrics)


def run_pipeline(cfg: RunConfig, stages=STAGES) -> RunManifest:
    """Run ``stages`` in order, rewriting the manifest after each one."""
    run = RunDir(cfg.out_dir)
    run.root.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.sha256(), cfg.describe())
    for name in stages:
        rec = run_stage(cfg, name, manifest)
        manifest.stages.append(rec)
        if name == "evaluate":
            manifest.metrics = rec["metrics"]
        manifest.write(run / "manifest.json")
    return manifest
