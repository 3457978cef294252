"""Fit a gaussian cloud to posed images with Adam, optionally refining camera poses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from ..errors import InvalidConfig, NonFiniteLoss
from ..geometry import quat_multiply, quat_normalize, rotvec_to_quat
from .cloud import GaussianCloud
from .render import Camera, backward, perturb_camera

TRACE_HEADER = ("iter", "l1", "dssim", "total", "psnr")


@dataclass(frozen=True)
class TrainConfig:
    iters: int = 2000
    lambda_ssim: float = 0.2
    lr_means: float = 2e-3  # mm per step, decays to lr_means_final
    lr_means_final: float = 2e-5
    lr_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacity: float = 5e-2
    lr_colors: float = 2e-2
    lr_pose: float = 1e-4
    refine_poses: bool = True
    fix_first_pose: bool = True
    densify: bool = False
    densify_interval: int = 100
    densify_from: int = 100
    densify_until: int = 1500
    grad_threshold: float = 2e-5  # mean screen-space positional gradient, loss per px
    dense_scale: float = 0.1  # mm; clone below, split above
    prune_opacity: float = 0.005
    background: tuple = (0.0, 0.0, 0.0)
    backend: str = None
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise InvalidConfig(f"lambda_ssim must lie in [0, 1], got {self.lambda_ssim}")
        if self.iters < 0:
            raise InvalidConfig(f"iters must be >= 0, got {self.iters}")
        if self.densify and self.densify_interval < 1:
            raise InvalidConfig("densify_interval must be >= 1")
        return self

    @classmethod
    def from_mapping(cls, values):
        """Build from string-valued settings (e.g. an INI section); unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise InvalidConfig(f"unknown train setting {key!r}")
            default = getattr(cls, key)
            if isinstance(default, bool):
                kw[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                kw[key] = int(raw)
            elif isinstance(default, float):
                kw[key] = float(raw)
            elif key == "background":
                kw[key] = tuple(float(x) for x in str(raw).replace(",", " ").split())
            else:
                kw[key] = None if raw in (None, "", "none") else str(raw)
        return replace(cls(), **kw).validate()


@dataclass
class TrainResult:
    cloud: GaussianCloud
    poses: list  # refined world_from_camera per view
    trace: list = field(default_factory=list)  # rows of TRACE_HEADER


class _Adam:
    """Elementwise Adam with per-row state that survives reindexing."""

    def __init__(self, shape, beta1=0.9, beta2=0.999, eps=1e-15):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = np.zeros(shape[0]) if len(shape) else 0
        self.b1, self.b2, self.eps = beta1, beta2, eps

    def step(self, grad, lr):
        self.t = self.t + 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        t = np.reshape(self.t, np.shape(self.t) + (1,) * (grad.ndim - np.ndim(self.t)))
        mhat = self.m / (1 - self.b1**t)
        vhat = self.v / (1 - self.b2**t)
        return lr * mhat / (np.sqrt(vhat) + self.eps)

    def reindex(self, idx, n_new):
        """Keep rows ``idx`` and append ``n_new`` fresh rows."""
        pad = ((0, n_new),) + ((0, 0),) * (self.m.ndim - 1)
        self.m = np.pad(self.m[idx], pad)
        self.v = np.pad(self.v[idx], pad)
        self.t = np.pad(self.t[idx], (0, n_new))


_GROUPS = ("means", "log_scales", "rotations", "opacity_logits", "color_logits")


def _psnr(a, b):
    mse = float(np.mean((a - b) ** 2))
    return 99.0 if mse == 0.0 else min(99.0, 10.0 * math.log10(1.0 / mse))


def _apply_rotation(quats, step):
    return quat_normalize(quat_multiply(rotvec_to_quat(step), quats))


def _densify(cloud, opt, grad_acc, seen, cfg, rng):
    """Clone small and split large high-gradient gaussians, then prune transparent ones."""
    avg = grad_acc / np.maximum(seen, 1)
    hot = (avg > cfg.grad_threshold) & (seen > 0)
    big = cloud.scales.max(axis=1) > cfg.dense_scale
    clone_idx = np.flatnonzero(hot & ~big)
    split_idx = np.flatnonzero(hot & big)

    parts = [cloud.subset(clone_idx)]
    if len(split_idx):
        src = cloud.subset(split_idx)
        rots = src.rotations()
        for _ in range(2):
            local = rng.normal(size=(len(src), 3)) * src.scales
            child = src.copy()
            child.means = src.means + np.einsum("nij,nj->ni", rots, local)
            child.log_scales = src.log_scales - np.log(1.6)
            parts.append(child)
    keep_parent = np.ones(len(cloud), dtype=bool)
    keep_parent[split_idx] = False
    grown = GaussianCloud.concat([cloud.subset(np.flatnonzero(keep_parent))] + parts)
    n_new = len(grown) - int(keep_parent.sum())

    alive = grown.opacities >= cfg.prune_opacity
    out = grown.subset(np.flatnonzero(alive))
    base = np.flatnonzero(keep_parent)
    alive_idx = np.flatnonzero(alive)
    for name in _GROUPS:
        opt[name].reindex(base, n_new)
        opt[name].reindex(alive_idx, 0)
    return out


def train(init_cloud: GaussianCloud, views, cfg: TrainConfig = TrainConfig(), poses=None,
          callback=None) -> TrainResult:
    """Optimize ``init_cloud`` against ``views`` (round-robin, reshuffled each epoch).

    ``poses`` overrides the views' world_from_camera as the starting point for
    pose refinement. ``callback(it, cloud, poses)`` runs after each step.
    """
    cfg.validate()
    views = list(views)
    if not views:
        raise InvalidConfig("training needs at least one view")
    if len(init_cloud) == 0:
        raise InvalidConfig("training needs a nonempty initial cloud")
    poses = [v.world_from_camera for v in views] if poses is None else list(poses)
    cloud = init_cloud.copy()
    if cfg.iters == 0:
        return TrainResult(cloud, poses, [])

    rng = np.random.default_rng(cfg.seed)
    n = len(cloud)
    opt = {
        "means": _Adam((n, 3)), "log_scales": _Adam((n, 3)), "rotations": _Adam((n, 3)),
        "opacity_logits": _Adam((n,)), "color_logits": _Adam((n, 3)),
    }
    pose_opt = [(_Adam((1, 3)), _Adam((1, 3))) for _ in views]
    grad_acc = np.zeros(n)
    seen = np.zeros(n)
    trace = []
    order = []
    decay = math.log(cfg.lr_means_final / cfg.lr_means) if cfg.lr_means > 0 else 0.0

    for it in range(cfg.iters):
        if not order:
            order = list(rng.permutation(len(views)))
        k = int(order.pop(0))
        view = views[k]
        cam = Camera(view.intrinsics, poses[k])
        (total, l1v, dssim), g, image = backward(
            cloud, cam, view.image, cfg.lambda_ssim, cfg.background, cfg.backend,
        )
        if not (math.isfinite(total) and math.isfinite(g.max_abs())):
            raise NonFiniteLoss(f"non-finite loss or gradient at iteration {it}")
        trace.append((it, l1v, dssim, total, _psnr(image, view.image)))

        lr_m = cfg.lr_means * math.exp(decay * it / max(cfg.iters - 1, 1))
        cloud.means = cloud.means - opt["means"].step(g.means, lr_m)
        cloud.log_scales = cloud.log_scales - opt["log_scales"].step(g.log_scales, cfg.lr_scales)
        cloud.quats = _apply_rotation(cloud.quats, -opt["rotations"].step(g.rotations, cfg.lr_rotations))
        cloud.opacity_logits = cloud.opacity_logits - opt["opacity_logits"].step(g.opacity_logits, cfg.lr_opacity)
        cloud.color_logits = cloud.color_logits - opt["color_logits"].step(g.color_logits, cfg.lr_colors)

        if cfg.refine_poses and not (cfg.fix_first_pose and k == 0):
            ar, at = pose_opt[k]
            d_rot = -ar.step(g.cam_rotation[None], cfg.lr_pose)[0]
            d_trans = -at.step(g.cam_translation[None], cfg.lr_pose)[0]
            poses[k] = perturb_camera(poses[k], d_rot, d_trans)

        if not cloud.is_finite():
            raise NonFiniteLoss(f"parameters became non-finite at iteration {it}")

        if cfg.densify:
            grad_acc += g.means2d_norm
            seen += g.means2d_norm > 0
            step = it + 1
            if cfg.densify_from <= step <= cfg.densify_until and step % cfg.densify_interval == 0:
                cloud = _densify(cloud, opt, grad_acc, seen, cfg, rng)
                grad_acc = np.zeros(len(cloud))
                seen = np.zeros(len(cloud))
        if callback is not None:
            callback(it, cloud, poses)

    return TrainResult(cloud, poses, trace)

