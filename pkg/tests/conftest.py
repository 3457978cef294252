import numpy as np
import pytest

from splatprint.geometry import CameraIntrinsics, Sim3Transform, quat_normalize, rot_x, rot_y
from splatprint.gsplat.cloud import GaussianCloud
from splatprint.gsplat.render import Camera
from splatprint.scene import SceneConfig, all_pointmaps, generate_scene


@pytest.fixture(scope="session")
def scene():
    return generate_scene(SceneConfig())


@pytest.fixture(scope="session")
def clean_pointmaps(scene):
    return all_pointmaps(scene)


def random_cloud(n, rng, spread=2.0):
    return GaussianCloud(
        rng.uniform(-spread, spread, (n, 3)),
        np.log(rng.uniform(0.4, 1.2, (n, 3))),
        quat_normalize(rng.normal(size=(n, 4))),
        rng.uniform(-1.5, 0.5, n),
        rng.normal(size=(n, 3)),
    )


@pytest.fixture
def small_camera():
    """32x32 camera looking at the origin from 10 mm, slightly off-axis."""
    intr = CameraIntrinsics.centered(40, 32, 32)
    pose = Sim3Transform(1.0, rot_y(5) @ rot_x(-3), np.array([0.3, -0.2, -10.0]))
    return Camera(intr, pose)


def injected_background(scene, n_floaters=50, held_yaw=-20.0, seed=0):
    """Front-facing surface gaussians plus floaters on a held-out camera's lines of sight.

    Returns ``(cloud, n_base, training_views, held_camera, held_image, held_mask)``;
    the floaters are the last ``n_floaters`` gaussians.
    """
    from splatprint.scene import albedo, camera_pose_for_yaw, render_from_pose, render_view, surface_point

    cfg = scene.config
    views = [render_view(scene, k) for k in range(scene.n_views)]
    tt, vv = np.meshgrid(np.radians(np.linspace(-25, 25, 36)), np.linspace(-2, 8, 40))
    pts = surface_point(cfg, tt, vv).reshape(-1, 3)
    base = GaussianCloud.from_points(pts, albedo(scene, pts), opacity=0.9)
    rng = np.random.default_rng(seed)
    held = camera_pose_for_yaw(held_yaw, cfg.distance_mm, cfg.look_at_y_mm)
    target = surface_point(cfg, np.radians(rng.uniform(-30, 10, n_floaters)), rng.uniform(0, 6, n_floaters))
    s = rng.uniform(0.3, 0.6, n_floaters)[:, None]
    floaters = GaussianCloud.from_points(
        held.center + s * (target - held.center), rng.uniform(0.2, 0.9, (n_floaters, 3)), scale=0.4, opacity=0.9,
    )
    intr = scene.intrinsics(0)
    image, mask = render_from_pose(scene, intr, held)
    return GaussianCloud.concat([base, floaters]), len(base), views, Camera(intr, held), image, mask
