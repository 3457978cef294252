import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatprint.errors import SingularCovariance
from splatprint.geometry import CameraIntrinsics, Rotation, Sim3Transform, quat_to_matrix, rot_x
from splatprint.gsplat._accel import BACKENDS, HAVE_NUMBA
from splatprint.gsplat.cloud import Gaussian3D, GaussianCloud, eval_gaussian, logit
from splatprint.gsplat.projection import project_gaussian
from splatprint.gsplat.render import Camera, backward, rasterize, render

from conftest import random_cloud


def axis_camera(size=32, f=40.0):
    return Camera(CameraIntrinsics.centered(f, size, size), Sim3Transform(1.0, Rotation.identity(), [0, 0, -10.0]))


def one_gaussian(mean, scale, opacity, color=(0.5, 0.5, 0.5), quat=(1, 0, 0, 0)):
    return GaussianCloud(
        np.array([mean], dtype=float), np.log(np.broadcast_to(scale, (1, 3))), np.array([quat], dtype=float),
        np.array([logit(opacity)]), logit(np.array([color])),
    )


# --- eval_gaussian ---------------------------------------------------------


def test_eval_at_mean():
    g = Gaussian3D(np.zeros(3), np.zeros(3), Rotation.identity(), float(logit(0.8)), np.zeros(3))
    assert abs(eval_gaussian(g, np.zeros(3)) - 0.8) < 1e-15


def test_eval_isotropic_unit_distance():
    g = Gaussian3D(np.zeros(3), np.zeros(3), Rotation.identity(), float(logit(0.8)), np.zeros(3))
    assert abs(eval_gaussian(g, [1, 0, 0]) - 0.48522) < 1e-5


def test_eval_anisotropic_matches_matrix_inverse():
    rng = np.random.default_rng(0)
    rot = rot_x(30)
    g = Gaussian3D(np.array([1.0, -2, 0.5]), np.log([1.0, 2.0, 3.0]), rot, 0.3, np.zeros(3))
    cov = rot.matrix @ np.diag([1.0, 4.0, 9.0]) @ rot.matrix.T
    for p in rng.normal(size=(20, 3)) * 3:
        d = p - g.mean
        ref = g.opacity * np.exp(-0.5 * d @ np.linalg.inv(cov) @ d)
        assert abs(eval_gaussian(g, p) - ref) < 1e-12


def test_eval_singular():
    g = Gaussian3D(np.zeros(3), np.log([1.0, 1e-10, 1.0]), Rotation.identity(), 0.0, np.zeros(3))
    with pytest.raises(SingularCovariance):
        eval_gaussian(g, np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_eval_rotation_invariance(q1, q2):
    q1 = np.array(q1) + np.array([1e-3, 0, 0, 0])
    q2 = np.array(q2) + np.array([1e-3, 0, 0, 0])
    rq, r = Rotation(q2), Rotation(q1)
    p = np.array([0.3, -0.7, 1.1])
    a = Gaussian3D(np.zeros(3), np.log([0.5, 1.0, 2.0]), r, 0.2, np.zeros(3))
    b = Gaussian3D(np.zeros(3), np.log([0.5, 1.0, 2.0]), rq @ r, 0.2, np.zeros(3))
    assert abs(eval_gaussian(b, rq.matrix @ p) - eval_gaussian(a, p)) < 1e-12


# --- projection ------------------------------------------------------------


def test_projected_covariance_pinhole_scaling():
    cam = axis_camera(size=256, f=500.0)
    s, d = 0.05, 10.0
    g = one_gaussian([0, 0, 0], s, 0.5).gaussian(0)
    splat = project_gaussian(g, cam)
    expected = (500.0 * s / d) ** 2
    np.testing.assert_allclose(splat.cov - 0.3 * np.eye(2), expected * np.eye(2), rtol=0.01, atol=1e-12)
    np.testing.assert_allclose(splat.mean, [128, 128])


def test_behind_camera_culled():
    g = one_gaussian([0, 0, -20], 0.1, 0.5).gaussian(0)
    assert project_gaussian(g, axis_camera()) is None


def test_corner_footprint_kept():
    cam = axis_camera()
    # pixel (1, 1) back-projected at depth 10
    x = (1.0 - 16.0) / 40.0 * 10.0
    g = one_gaussian([x, x, 0], 0.02, 0.5).gaussian(0)
    splat = project_gaussian(g, cam)
    assert splat is not None
    far = one_gaussian([100.0, 0, 0], 0.02, 0.5).gaussian(0)
    assert project_gaussian(far, cam) is None


# --- render ----------------------------------------------------------------


def test_empty_cloud_is_background():
    img = render(GaussianCloud.empty(), axis_camera(), (0.2, 0.4, 0.6))
    assert np.all(img == np.array([0.2, 0.4, 0.6]))


def test_single_gaussian_radial_profile():
    cloud = one_gaussian([0, 0, 0], 0.5, 0.9, color=(0.9, 0.9, 0.9))
    img = render(cloud, axis_camera())[..., 0]
    # principal point sits on a pixel corner: the four central pixels tie
    peak = np.argwhere(img == img.max())
    assert {tuple(p) for p in peak} == {(15, 15), (15, 16), (16, 15), (16, 16)}
    row = img[16, 16:]
    assert np.all(np.diff(row) <= 0)
    assert row[0] > row[-1]


def test_front_gaussian_dominates():
    front_color, back_color = (0.9, 0.1, 0.1), (0.1, 0.1, 0.9)
    cloud = GaussianCloud.concat([
        one_gaussian([0, 0, -1], 1.0, 0.995, front_color),
        one_gaussian([0, 0, 1], 1.0, 0.9, back_color),
    ])
    # odd size puts a pixel center on the optical axis
    img = render(cloud, axis_camera(size=33))
    front = 1 / (1 + np.exp(-logit(np.array(front_color))))
    assert np.all(np.abs(img[16, 16] - front) <= 0.015)


def test_compositing_conservation():
    rng = np.random.default_rng(5)
    cloud = random_cloud(40, rng)
    cloud.color_logits[:] = 40.0  # colors saturate to exactly 1
    res = rasterize(cloud, axis_camera(), (0, 0, 0))
    np.testing.assert_allclose(res.image[..., 0] + res.final_t, 1.0, atol=1e-6)


def test_order_invariance():
    rng = np.random.default_rng(6)
    cloud = random_cloud(60, rng)
    perm = rng.permutation(60)
    a = render(cloud, axis_camera(), (0.1, 0.2, 0.3))
    b = render(cloud.subset(perm), axis_camera(), (0.1, 0.2, 0.3))
    assert a.tobytes() == b.tobytes()


def test_deterministic():
    rng = np.random.default_rng(7)
    cloud = random_cloud(30, rng)
    assert render(cloud, axis_camera()).tobytes() == render(cloud, axis_camera()).tobytes()


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not available")
def test_backends_agree(small_camera):
    rng = np.random.default_rng(8)
    cloud = random_cloud(25, rng)
    gt = rng.uniform(size=(32, 32, 3))
    outs = {}
    for name in ("numba", "numpy"):
        outs[name] = backward(cloud, small_camera, gt, 0.2, (0.1, 0.2, 0.3), name)
    (la, ga, ia), (lb, gb, ib) = outs["numba"], outs["numpy"]
    np.testing.assert_allclose(ia, ib, atol=1e-12)
    np.testing.assert_allclose(la, lb, atol=1e-12)
    for name in ("means", "log_scales", "rotations", "opacity_logits", "color_logits", "cam_rotation",
                 "cam_translation"):
        np.testing.assert_allclose(getattr(ga, name), getattr(gb, name), atol=1e-10, rtol=1e-9)


def test_backend_registry():
    assert "numpy" in BACKENDS
    with pytest.raises(ValueError):
        render(GaussianCloud.empty(), axis_camera(), backend="cuda")
