import numpy as np
import pytest

from splatprint.errors import InvalidConfig
from splatprint.gsplat import Camera, GaussianCloud, render
from splatprint.gsplat.render import perturb_camera
from splatprint.gsplat.train import TRACE_HEADER, TrainConfig, train
from splatprint.scene import SceneConfig, generate_scene, render_view, surface_samples

FROZEN = dict(lr_means=0.0, lr_means_final=0.0, lr_scales=0.0, lr_rotations=0.0, lr_opacity=0.0, lr_colors=0.0)


@pytest.fixture(scope="module")
def rig():
    """Small finger rig whose images are renders of the initial cloud itself."""
    sc = generate_scene(SceneConfig(width=48, height=48, focal_px=190.0))
    pts, col = surface_samples(sc, 90, 60)
    cloud = GaussianCloud.from_points(pts, col, opacity=0.8)
    views = []
    for k in range(sc.n_views):
        v = render_view(sc, k)
        views.append(v.replace(image=np.clip(render(cloud, Camera(v.intrinsics, v.world_from_camera)), 0, 1)))
    return cloud, views


def perturbed(views):
    poses = [v.world_from_camera for v in views]
    poses[1] = perturb_camera(poses[1], np.radians([0.3, 1.0, 0.0]), np.array([0.2, 0.0, 0.0]))
    poses[2] = perturb_camera(poses[2], np.radians([0.0, -1.0, 0.2]), np.zeros(3))
    return poses


def rotation_errors(views, poses):
    return [v.world_from_camera.rotation.angle_to(p.rotation) for v, p in zip(views, poses)]


def test_zero_iterations_is_identity(rig):
    cloud, views = rig
    res = train(cloud, views, TrainConfig(iters=0))
    assert res.cloud.equals(cloud) and res.trace == []
    assert res.poses == [v.world_from_camera for v in views]


def test_deterministic(rig):
    cloud, views = rig
    cfg = TrainConfig(iters=6, seed=3)
    a, b = train(cloud, views, cfg), train(cloud, views, cfg)
    np.testing.assert_array_equal(a.cloud.as_array(), b.cloud.as_array())
    assert a.trace == b.trace
    assert len(a.trace[0]) == len(TRACE_HEADER)


def test_first_pose_fixed(rig):
    cloud, views = rig
    res = train(cloud, views, TrainConfig(iters=6, lr_pose=1e-2))
    assert res.poses[0] == views[0].world_from_camera
    assert res.poses[1] != views[1].world_from_camera


def test_pose_refinement_recovers_rotation(rig):
    cloud, views = rig
    start = perturbed(views)
    before = rotation_errors(views, start)
    res = train(cloud, views, TrainConfig(iters=90, lr_pose=3e-3, **FROZEN), poses=start)
    after = rotation_errors(views, res.poses)
    assert after[0] == 0.0
    assert after[1] < 0.5 * before[1] and after[2] < 0.5 * before[2]


def test_joint_refinement_reduces_pose_error(rig):
    cloud, views = rig
    start = perturbed(views)
    before = rotation_errors(views, start)
    res = train(cloud, views, TrainConfig(iters=90, lr_pose=3e-3), poses=start)
    after = rotation_errors(views, res.poses)
    assert after[1] < before[1] and after[2] < before[2]


def test_loss_decreases(rig):
    cloud, views = rig
    noisy = cloud.copy()
    noisy.color_logits = noisy.color_logits + np.random.default_rng(0).normal(0, 0.5, noisy.color_logits.shape)
    res = train(noisy, views, TrainConfig(iters=60, refine_poses=False))
    first = np.mean([r[3] for r in res.trace[:3]])
    last = np.mean([r[3] for r in res.trace[-3:]])
    assert last < 0.7 * first


def test_densify_changes_count(rig):
    cloud, views = rig
    sparse = cloud.subset(np.arange(0, len(cloud), 4))
    cfg = TrainConfig(iters=20, densify=True, densify_from=10, densify_interval=10, densify_until=20,
                      grad_threshold=0.0, refine_poses=False)
    res = train(sparse, views, cfg)
    assert len(res.cloud) > len(sparse)
    assert res.cloud.is_finite()


def test_from_mapping():
    cfg = TrainConfig.from_mapping({"iters": "50", "lambda-ssim": "0.3", "refine_poses": "off",
                                    "background": "0.1, 0.2, 0.3", "backend": "numpy"})
    assert cfg.iters == 50 and cfg.lambda_ssim == 0.3 and cfg.refine_poses is False
    assert cfg.background == (0.1, 0.2, 0.3) and cfg.backend == "numpy"
    with pytest.raises(InvalidConfig):
        TrainConfig.from_mapping({"bogus": "1"})
    with pytest.raises(InvalidConfig):
        TrainConfig.from_mapping({"lambda_ssim": "1.5"})


def test_rejects_empty_inputs(rig):
    cloud, views = rig
    with pytest.raises(InvalidConfig):
        train(cloud, [], TrainConfig(iters=1))
    with pytest.raises(InvalidConfig):
        train(GaussianCloud.empty(), views, TrainConfig(iters=1))
