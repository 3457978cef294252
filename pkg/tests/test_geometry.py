import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatprint.errors import NonPositiveDepth
from splatprint.geometry import (
    CameraIntrinsics, Rotation, Sim3Transform, matrix_to_quat, project, quat_to_matrix, rot_y, rot_z,
    sim3_apply, sim3_compose, sim3_inverse, unproject,
)

finite = st.floats(-50, 50, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


@st.composite
def sim3s(draw):
    q = np.array([draw(st.floats(-1, 1)) for _ in range(4)])
    if np.linalg.norm(q) < 1e-3:
        q = np.array([1.0, 0, 0, 0])
    scale = draw(st.floats(0.1, 10))
    return Sim3Transform(scale, Rotation(q), draw(vec3))


def test_apply_identity():
    np.testing.assert_array_equal(sim3_apply(Sim3Transform.identity(), [1, 2, 3]), [1, 2, 3])


def test_apply_scale_outside_translation():
    t = Sim3Transform(2.0, Rotation.identity(), [0, 0, 1])
    np.testing.assert_allclose(sim3_apply(t, [1, 0, 0]), [2, 0, 2])


def test_apply_rotation():
    t = Sim3Transform(1.0, rot_z(90), np.zeros(3))
    np.testing.assert_allclose(sim3_apply(t, [1, 0, 0]), [0, 1, 0], atol=1e-15)


def test_inverse_of_pure_scale():
    inv = sim3_inverse(Sim3Transform(2.0))
    assert inv.scale == 0.5
    np.testing.assert_array_equal(inv.translation, 0)
    assert inv.rotation.angle_to(Rotation.identity()) == 0


def test_compose_identity():
    c = sim3_compose(Sim3Transform.identity(), Sim3Transform.identity())
    np.testing.assert_array_equal(c.as_matrix(), np.eye(4))


def test_compose_matches_double_application():
    rng = np.random.default_rng(0)
    for _ in range(5):
        a = Sim3Transform(rng.uniform(0.2, 5), Rotation(rng.normal(size=4)), rng.normal(size=3))
        b = Sim3Transform(rng.uniform(0.2, 5), Rotation(rng.normal(size=4)), rng.normal(size=3))
        p = rng.normal(size=(100, 3)) * 10
        np.testing.assert_allclose(sim3_compose(a, b).apply(p), a.apply(b.apply(p)), atol=1e-9)
        np.testing.assert_allclose(a.compose(a.inverse()).apply(p), p, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(sim3s(), sim3s(), sim3s(), vec3)
def test_compose_associative(a, b, c, p):
    lhs = a.compose(b).compose(c).apply(p)
    rhs = a.compose(b.compose(c)).apply(p)
    assert np.allclose(lhs, rhs, atol=1e-9 * max(1.0, np.abs(lhs).max()))


@settings(max_examples=50, deadline=None)
@given(sim3s(), vec3)
def test_inverse_round_trip(a, p):
    back = a.inverse().apply(a.apply(p))
    assert np.allclose(back, p, atol=1e-9 * max(1.0, np.abs(p).max(), a.scale, 1 / a.scale))


def test_quaternion_round_trip_action():
    rng = np.random.default_rng(1)
    v = rng.normal(size=(100, 3))
    for _ in range(20):
        q = Rotation(rng.normal(size=4)).quat
        q2 = matrix_to_quat(quat_to_matrix(q))
        np.testing.assert_allclose(v @ quat_to_matrix(q2).T, v @ quat_to_matrix(q).T, atol=1e-9)


def test_quaternion_canonical_sign():
    r = Rotation(np.array([-0.5, 0.5, 0.5, 0.5]))
    assert r.quat[0] >= 0
    assert abs(np.linalg.norm(r.quat) - 1) < 1e-12


def test_project_examples():
    intr = CameraIntrinsics(500.0, 320.0, 240.0, 640, 480)
    assert project(intr, [0, 0, 1]) == (320.0, 240.0)
    assert project(intr, [1, 0, 2]) == (570.0, 240.0)
    with pytest.raises(NonPositiveDepth):
        project(intr, [0, 0, -1])


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 640), st.floats(0, 480), st.floats(0.01, 1e4))
def test_project_unproject(u, v, depth):
    intr = CameraIntrinsics(500.0, 320.0, 240.0, 640, 480)
    uu, vv = project(intr, unproject(intr, u, v, depth))
    assert abs(uu - u) < 1e-9 and abs(vv - v) < 1e-9


def test_center_and_rigid():
    t = Sim3Transform(2.0, rot_y(30), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(t.center, t.apply(np.zeros(3)))
    np.testing.assert_allclose(t.rigid().center, t.center)
    assert t.rigid().scale == 1.0


def test_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        Sim3Transform(0.0)
