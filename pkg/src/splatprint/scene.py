"""Synthetic finger scenes: ray-cast images, masks, minutiae and oracle pointmaps.

The finger is a cylinder (axis along world +y, which points *down* in the
images) capped at ``y <= 0`` by a half ellipsoid. Texture coordinates on the
surface are ``u = radius * theta`` (arc length around the axis, ``theta = 0``
facing the yaw-0 camera) and ``v = y``. Ridges are a sinusoid of a smooth
phase field; each minutia is a unit phase vortex, which splits or terminates
a ridge at that point.
"""

from __future__ import annotations

import configparser
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, IndexOutOfRange, InvalidConfig
from .geometry import CameraIntrinsics, CameraView, Rotation, Sim3Transform, rot_y

SCENE_FORMAT = "splatprint-scene v1"
MINUTIA_TYPES = ("ending", "bifurcation")


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    radius_mm: float = 8.0
    cylinder_length_mm: float = 30.0
    cap_length_mm: float = 10.0
    ridge_frequency: float = 0.5  # cycles / mm
    n_minutiae: int = 30
    min_minutia_spacing_mm: float = 1.5
    skin_color: tuple = (0.86, 0.66, 0.56)
    ridge_color: tuple = (0.42, 0.25, 0.20)
    ambient: float = 0.45
    light_dir: tuple = (0.25, -0.6, -1.0)  # towards the light, world frame
    yaws_deg: tuple = (-45.0, 0.0, 45.0)
    width: int = 128
    height: int = 128
    focal_px: float = 500.0
    distance_mm: float = 80.0
    look_at_y_mm: float = 3.0

    def validate(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidConfig("image dimensions must be positive")
        if len(self.yaws_deg) < 2:
            raise InvalidConfig("at least two cameras are required")
        if self.n_minutiae < 0:
            raise InvalidConfig("minutiae count must be >= 0")
        if self.radius_mm <= 0 or self.cylinder_length_mm <= 0 or self.cap_length_mm <= 0:
            raise InvalidConfig("finger dimensions must be positive")
        if self.ridge_frequency <= 0:
            raise InvalidConfig("ridge frequency must be positive")
        if self.focal_px <= 0 or self.distance_mm <= self.radius_mm:
            raise InvalidConfig("cameras must have positive focal length and sit outside the finger")


@dataclass(frozen=True)
class NoiseConfig:
    sigma_mm: float = 0.0
    seed: int = 0
    falloff_px: float = 3.0
    min_confidence: float = 0.2


@dataclass(frozen=True, eq=False)
class Minutia:
    id: int
    point: np.ndarray
    type: str
    u: float
    v: float


@dataclass(frozen=True, eq=False)
class FingerScene:
    config: SceneConfig
    phase_offset: float
    curvature: float  # per mm, bends ridges into arches
    tilt: float  # ridge slope along u
    minutiae: tuple  # of Minutia
    rig: tuple  # of (CameraIntrinsics, Sim3Transform world_from_camera)

    @property
    def n_views(self):
        return len(self.rig)

    @property
    def rng_seed(self):
        return self.config.seed

    def intrinsics(self, k) -> CameraIntrinsics:
        return self.rig[self._check(k)][0]

    def pose(self, k) -> Sim3Transform:
        return self.rig[self._check(k)][1]

    def _check(self, k):
        if not 0 <= k < len(self.rig):
            raise IndexOutOfRange(f"camera index {k} outside rig of size {len(self.rig)}")
        return k

    def to_json(self) -> str:
        return json.dumps(scene_metadata(self), indent=1, sort_keys=True)


@dataclass(frozen=True, eq=False)
class Pointmap:
    """Per-pixel 3D points (mm) of ``view`` expressed in camera ``ref``."""

    points: np.ndarray  # (H, W, 3)
    confidence: np.ndarray  # (H, W)
    valid: np.ndarray  # (H, W) bool
    view: int = -1
    ref: int = -1

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        conf = np.asarray(self.confidence, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if pts.shape[:2] != valid.shape or conf.shape != valid.shape:
            raise ValueError("pointmap arrays disagree in shape")
        conf = np.where(valid, conf, 0.0)
        pts = np.where(valid[..., None], pts, 0.0)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self):
        return self.valid.shape[0]

    @property
    def width(self):
        return self.valid.shape[1]


# ---------------------------------------------------------------------------
# scene construction
# ---------------------------------------------------------------------------


def camera_pose_for_yaw(yaw_deg, distance_mm, look_at_y_mm) -> Sim3Transform:
    rot = rot_y(yaw_deg)
    forward = rot.matrix[:, 2]
    center = np.array([0.0, look_at_y_mm, 0.0]) - distance_mm * forward
    return Sim3Transform(1.0, rot, center)


def build_rig(config: SceneConfig):
    intr = CameraIntrinsics.centered(config.focal_px, config.width, config.height)
    return tuple(
        (intr, camera_pose_for_yaw(y, config.distance_mm, config.look_at_y_mm)) for y in config.yaws_deg
    )


def surface_point(config: SceneConfig, theta, v):
    """Surface point at angle ``theta`` (rad) around the axis and height ``v``."""
    theta = np.asarray(theta, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    r = config.radius_mm
    c = config.cap_length_mm
    ring = np.where(v >= 0, r, r * np.sqrt(np.clip(1.0 - (v / c) ** 2, 0.0, None)))
    return np.stack(np.broadcast_arrays(ring * np.sin(theta), v, -ring * np.cos(theta)), axis=-1)


def surface_residual(config: SceneConfig, p):
    """Signed implicit-function distance proxy (0 on the surface)."""
    p = np.asarray(p, dtype=np.float64)
    r = config.radius_mm
    k = r / config.cap_length_mm
    yy = np.where(p[..., 1] < 0, k * p[..., 1], 0.0)
    return np.sqrt(p[..., 0] ** 2 + yy**2 + p[..., 2] ** 2) - r


def generate_scene(config: SceneConfig = SceneConfig()) -> FingerScene:
    config.validate()
    rng = np.random.default_rng(config.seed)
    phase_offset = float(rng.uniform(0.0, 2 * np.pi))
    curvature = float(rng.uniform(0.02, 0.05))
    tilt = float(rng.uniform(-0.08, 0.08))

    # minutiae sampled in texture space, rejection for minimum spacing
    u_max = config.radius_mm * np.radians(100.0)
    v_lo = -0.5 * config.cap_length_mm
    v_hi = min(config.cylinder_length_mm, 11.0)
    placed = []
    attempts = 0
    while len(placed) < config.n_minutiae:
        attempts += 1
        if attempts > 200000:
            raise InvalidConfig("cannot place the requested number of minutiae")
        u = rng.uniform(-u_max, u_max)
        v = rng.uniform(v_lo, v_hi)
        if all((u - pu) ** 2 + (v - pv) ** 2 >= config.min_minutia_spacing_mm**2 for pu, pv, _ in placed):
            placed.append((u, v, int(rng.integers(0, 2))))
    minutiae = []
    for i, (u, v, kind) in enumerate(placed):
        p = surface_point(config, u / config.radius_mm, v)
        minutiae.append(Minutia(i, p, MINUTIA_TYPES[kind], float(u), float(v)))

    return FingerScene(
        config=config,
        phase_offset=phase_offset,
        curvature=curvature,
        tilt=tilt,
        minutiae=tuple(minutiae),
        rig=build_rig(config),
    )


# ---------------------------------------------------------------------------
# texture and ray casting
# ---------------------------------------------------------------------------


def texture_coords(scene: FingerScene, p):
    p = np.asarray(p, dtype=np.float64)
    theta = np.arctan2(p[..., 0], -p[..., 2])
    return scene.config.radius_mm * theta, p[..., 1]


def ridge_phase(scene: FingerScene, u, v):
    f = scene.config.ridge_frequency
    phase = 2 * np.pi * f * (v + scene.curvature * u**2 + scene.tilt * u) + scene.phase_offset
    for m in scene.minutiae:
        sign = 1.0 if m.type == "ending" else -1.0
        phase = phase + sign * np.arctan2(v - m.v, u - m.u)
    return phase


def albedo(scene: FingerScene, p):
    """Ridge-textured surface color at world points ``p`` (..., 3)."""
    u, v = texture_coords(scene, p)
    ridge = 0.5 + 0.5 * np.cos(ridge_phase(scene, u, v))
    skin = np.asarray(scene.config.skin_color)
    dark = np.asarray(scene.config.ridge_color)
    return skin + (dark - skin) * ridge[..., None]


def intersect(config: SceneConfig, origin, dirs):
    """First intersection of rays ``origin + s * dirs`` with the finger.

    Returns ``(s, normal)``; ``s`` is ``nan`` where the ray misses.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    r = config.radius_mm
    length = config.cylinder_length_mm
    k2 = (r / config.cap_length_mm) ** 2
    ox, oy, oz = o[..., 0], o[..., 1], o[..., 2]
    dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]

    best = np.full(d.shape[:-1], np.inf)

    a = dx * dx + dz * dz
    b = 2 * (ox * dx + oz * dz)
    c = ox * ox + oz * oz - r * r
    disc = b * b - 4 * a * c
    with np.errstate(invalid="ignore", divide="ignore"):
        s_cyl = (-b - np.sqrt(disc)) / (2 * a)
    y_cyl = oy + s_cyl * dy
    ok = (disc >= 0) & (a > 0) & (s_cyl > 0) & (y_cyl >= 0) & (y_cyl <= length)
    best = np.where(ok, s_cyl, best)

    a = dx * dx + k2 * dy * dy + dz * dz
    b = 2 * (ox * dx + k2 * oy * dy + oz * dz)
    c = ox * ox + k2 * oy * oy + oz * oz - r * r
    disc = b * b - 4 * a * c
    with np.errstate(invalid="ignore", divide="ignore"):
        s_cap = (-b - np.sqrt(disc)) / (2 * a)
    y_cap = oy + s_cap * dy
    ok = (disc >= 0) & (s_cap > 0) & (y_cap < 0) & (s_cap < best)
    best = np.where(ok, s_cap, best)

    hit = np.isfinite(best)
    s = np.where(hit, best, np.nan)
    p = o + np.where(hit, s, 0.0)[..., None] * d
    grad = p.copy()
    grad[..., 1] = np.where(p[..., 1] < 0, k2 * p[..., 1], 0.0)
    normal = grad / np.maximum(np.linalg.norm(grad, axis=-1, keepdims=True), 1e-300)
    return s, normal


@dataclass(frozen=True, eq=False)
class RayCast:
    depth: np.ndarray  # (H, W) camera z, nan on misses
    points_cam: np.ndarray  # (H, W, 3)
    points_world: np.ndarray
    normals_world: np.ndarray
    mask: np.ndarray


def raycast_view(scene: FingerScene, k) -> RayCast:
    intr = scene.intrinsics(k)
    pose = scene.pose(k)
    rays_cam = intr.rays()
    dirs = rays_cam @ pose.rotation.matrix.T
    origin = np.broadcast_to(pose.center, dirs.shape)
    s, normal = intersect(scene.config, origin, dirs)
    mask = np.isfinite(s)
    # rays have unit z in the camera frame, so the ray parameter is the depth
    depth = s
    pts_cam = np.where(mask[..., None], rays_cam * np.where(mask, s, 0.0)[..., None], 0.0)
    pts_world = origin + np.where(mask, s, 0.0)[..., None] * dirs
    return RayCast(depth, pts_cam, pts_world, normal, mask)


def shade(scene: FingerScene, points_world, normals):
    light = np.asarray(scene.config.light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    lam = np.clip(normals @ light, 0.0, None)
    amb = scene.config.ambient
    return np.clip(albedo(scene, points_world) * (amb + (1 - amb) * lam)[..., None], 0.0, 1.0)


def visible_minutiae(scene: FingerScene, k, mask=None):
    """Pixel coordinates of minutiae visible (unoccluded, in-mask) from camera k."""
    intr = scene.intrinsics(k)
    pose = scene.pose(k)
    cam_from_world = pose.inverse()
    if mask is None:
        mask = raycast_view(scene, k).mask
    out = []
    for m in scene.minutiae:
        pc = cam_from_world.apply(m.point)
        if pc[2] <= 1e-6:
            continue
        u = intr.focal_px * pc[0] / pc[2] + intr.cx
        v = intr.focal_px * pc[1] / pc[2] + intr.cy
        if not (0 <= u < intr.width and 0 <= v < intr.height):
            continue
        ray = pose.rotation.matrix @ (pc / pc[2])
        s, _ = intersect(scene.config, pose.center, ray)
        if not np.isfinite(s) or abs(s - pc[2]) > 1e-6 * pc[2]:
            continue
        if not mask[int(v), int(u)]:
            continue
        out.append((m.id, float(u), float(v)))
    return tuple(out)


def render_view(scene: FingerScene, k) -> CameraView:
    rc = raycast_view(scene, k)
    image = np.zeros(rc.mask.shape + (3,))
    image[rc.mask] = shade(scene, rc.points_world[rc.mask], rc.normals_world[rc.mask])
    return CameraView(
        intrinsics=scene.intrinsics(k),
        world_from_camera=scene.pose(k),
        image=image,
        mask=rc.mask,
        minutiae_px=visible_minutiae(scene, k, rc.mask),
    )


def render_from_pose(scene: FingerScene, intr: CameraIntrinsics, world_from_camera: Sim3Transform):
    """Ground-truth image and mask from an arbitrary rigid camera."""
    rays_cam = intr.rays()
    dirs = rays_cam @ world_from_camera.rotation.matrix.T
    origin = np.broadcast_to(world_from_camera.center, dirs.shape)
    s, normal = intersect(scene.config, origin, dirs)
    mask = np.isfinite(s)
    pts = origin + np.where(mask, s, 0.0)[..., None] * dirs
    image = np.zeros(mask.shape + (3,))
    image[mask] = shade(scene, pts[mask], normal[mask])
    return image, mask


def silhouette_confidence(mask, falloff_px=3.0, min_confidence=0.2):
    """1 in the interior, linear ramp down to ``min_confidence`` at the silhouette."""
    dist = ndimage.distance_transform_edt(mask)
    conf = min_confidence + (1.0 - min_confidence) * np.clip((dist - 1.0) / falloff_px, 0.0, 1.0)
    return np.where(mask, conf, 0.0)


def oracle_pointmap(scene: FingerScene, view, ref, noise: NoiseConfig = NoiseConfig()) -> Pointmap:
    """Stand-in for a pointmap regressor: exact ray-cast geometry plus noise."""
    scene._check(view)
    scene._check(ref)
    rc = raycast_view(scene, view)
    if view == ref:
        pts = rc.points_cam
    else:
        ref_from_view = scene.pose(ref).inverse().compose(scene.pose(view))
        pts = ref_from_view.apply(rc.points_cam)
    conf = silhouette_confidence(rc.mask, noise.falloff_px, noise.min_confidence)
    if noise.sigma_mm > 0:
        rng = np.random.default_rng([noise.seed, view, ref])
        pts = pts + rng.normal(0.0, noise.sigma_mm, size=pts.shape)
    return Pointmap(pts, conf, rc.mask, view=view, ref=ref)


def all_pointmaps(scene: FingerScene, noise: NoiseConfig = NoiseConfig()):
    """Every ordered pair ``(view, ref)``, including self-frame maps."""
    n = scene.n_views
    return {(v, e): oracle_pointmap(scene, v, e, noise) for v in range(n) for e in range(n)}


# ---------------------------------------------------------------------------
# config files and export
# ---------------------------------------------------------------------------


def _floats(text):
    return tuple(float(x) for x in text.replace(",", " ").split())


def load_scene_config(path) -> SceneConfig:
    """Read an INI-style scene config (sections ``[scene]`` and ``[camera]``)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scene config not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return scene_config_from_parser(parser)


def scene_config_from_parser(parser) -> SceneConfig:
    kw = {}
    defaults = SceneConfig()
    for section in ("scene", "camera", "texture"):
        if not parser.has_section(section):
            continue
        for key, raw in parser.items(section):
            if not hasattr(defaults, key):
                raise ConfigError(f"unknown scene key '{key}' in [{section}]")
            ref = getattr(defaults, key)
            try:
                if isinstance(ref, tuple):
                    kw[key] = _floats(raw)
                elif isinstance(ref, int):
                    kw[key] = int(raw)
                else:
                    kw[key] = float(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for '{key}': {raw!r}") from exc
    cfg = SceneConfig(**kw)
    try:
        cfg.validate()
    except InvalidConfig as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def format_scene_config(config: SceneConfig) -> str:
    scene_keys = [
        "seed", "radius_mm", "cylinder_length_mm", "cap_length_mm", "ridge_frequency",
        "n_minutiae", "min_minutia_spacing_mm", "skin_color", "ridge_color", "ambient", "light_dir",
    ]
    camera_keys = ["yaws_deg", "width", "height", "focal_px", "distance_mm", "look_at_y_mm"]

    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(repr(float(x)) for x in v)
        return repr(v)

    lines = ["[scene]"]
    lines += [f"{k} = {fmt(getattr(config, k))}" for k in scene_keys]
    lines += ["", "[camera]"]
    lines += [f"{k} = {fmt(getattr(config, k))}" for k in camera_keys]
    return "\n".join(lines) + "\n"


def scene_metadata(scene: FingerScene) -> dict:
    return {
        "format": SCENE_FORMAT,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(scene.config).items()},
        "texture": {
            "phase_offset": scene.phase_offset,
            "curvature": scene.curvature,
            "tilt": scene.tilt,
        },
        "minutiae": [
            {"id": m.id, "type": m.type, "point": [float(x) for x in m.point], "u": m.u, "v": m.v}
            for m in scene.minutiae
        ],
        "rig": [
            {
                "focal_px": intr.focal_px,
                "principal_point": [intr.cx, intr.cy],
                "width": intr.width,
                "height": intr.height,
                "yaw_deg": float(y),
                "rotation_wxyz": [float(x) for x in pose.rotation.quat],
                "center": [float(x) for x in pose.center],
            }
            for (intr, pose), y in zip(scene.rig, scene.config.yaws_deg)
        ],
    }


def surface_samples(scene: FingerScene, n_theta=180, n_v=120):
    cfg = scene.config
    theta = np.linspace(-np.pi, np.pi, n_theta, endpoint=False)
    v = np.linspace(-cfg.cap_length_mm * 0.999, cfg.cylinder_length_mm, n_v)
    tt, vv = np.meshgrid(theta, v)
    pts = surface_point(cfg, tt, vv).reshape(-1, 3)
    return pts, albedo(scene, pts)


def export_scene(scene: FingerScene, out_dir, stem="scene"):
    """Write ``<stem>.ply`` (surface samples) and ``<stem>.json`` (minutiae, rig)."""
    from .io import write_ply

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pts, colors = surface_samples(scene)
    write_ply(out_dir / f"{stem}.ply", pts, colors, comments=[SCENE_FORMAT])
    meta_path = out_dir / f"{stem}.json"
    tmp = meta_path.with_suffix(".json.tmp")
    tmp.write_text(scene.to_json() + "\n")
    os.replace(tmp, meta_path)
    return out_dir / f"{stem}.ply", meta_path
