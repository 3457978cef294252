import numpy as np
import pytest

from splatprint.errors import AllPruned, InvalidConfig, NoViews
from splatprint.geometry import CameraIntrinsics, CameraView, Sim3Transform, Rotation
from splatprint.gsplat import GaussianCloud, render
from splatprint.metrics import masked_psnr
from splatprint.segment import (
    decompose_boundary, prune_background, segment, split_longest_axis, vote_labels,
)

from conftest import injected_background

SIZE = 64
FOCAL = 64.0  # 6.4 px per mm at 10 mm depth


def half_mask_view():
    """Identity camera; the mask covers the left half (x < 32)."""
    intr = CameraIntrinsics.centered(FOCAL, SIZE, SIZE)
    mask = np.zeros((SIZE, SIZE), dtype=bool)
    mask[:, : SIZE // 2] = True
    return CameraView(intr, Sim3Transform.identity(), np.zeros((SIZE, SIZE, 3)), mask)


def blob(means, scales, opacity=0.9):
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    n = len(means)
    quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    return GaussianCloud(
        means, np.log(np.broadcast_to(scales, (n, 3))).copy(), quats,
        np.full(n, np.log(opacity / (1 - opacity))), np.zeros((n, 3)),
    )


def pixel_count_fraction(mean_mm, scale_mm, view):
    """Brute-force oracle: fraction of pixel centers inside the 99% ellipse that are masked."""
    f = view.intrinsics.focal_px
    c = view.intrinsics.cx
    u0, v0 = f * mean_mm[0] / mean_mm[2] + c, f * mean_mm[1] / mean_mm[2] + c
    sx, sy = f * scale_mm[0] / mean_mm[2], f * scale_mm[1] / mean_mm[2]
    jj, ii = np.meshgrid(np.arange(SIZE) + 0.5, np.arange(SIZE) + 0.5)
    inside = ((jj - u0) / sx) ** 2 + ((ii - v0) / sy) ** 2 <= 9.2103
    return view.mask[inside].mean()


def test_all_inside_and_all_outside():
    view = half_mask_view()
    cloud = blob([[-1.5, 0.0, 10.0], [1.5, 0.0, 10.0]], 0.1)
    votes = vote_labels(cloud, [view, view])
    np.testing.assert_array_equal(votes.fractions, [[1.0, 1.0], [0.0, 0.0]])
    assert votes[0].views_seen == 2


def test_straddle_fraction_matches_pixel_count():
    view = half_mask_view()
    mean, scale = np.array([0.0, 0.2, 10.0]), np.array([0.5, 0.3, 0.3])
    frac = vote_labels(blob(mean, scale), [view]).fractions[0, 0]
    assert 0.2 < frac < 0.8
    assert abs(frac - pixel_count_fraction(mean, scale, view)) < 1e-12


def test_culled_views_ignored():
    view = half_mask_view()
    votes = vote_labels(blob([[-1.0, 0.0, 10.0], [0.0, 0.0, -5.0]], 0.1), [view])
    assert votes[0].fractions == (1.0,)
    assert votes[1].fractions == (None,) and votes[1].views_seen == 0
    assert votes.min_fraction[1] == 0.0


def test_no_views():
    with pytest.raises(NoViews):
        vote_labels(blob([0, 0, 10], 0.1), [])


def test_split_geometry():
    cloud = blob([1.0, 2.0, 3.0], [0.2, 0.5, 0.1])
    kids = split_longest_axis(cloud)
    assert len(kids) == 2
    np.testing.assert_allclose(kids.means, [[1.0, 2.3, 3.0], [1.0, 1.7, 3.0]], atol=1e-12)
    np.testing.assert_allclose(kids.scales, [[0.2, 0.25, 0.1]] * 2, atol=1e-12)
    np.testing.assert_array_equal(kids.opacity_logits, cloud.opacity_logits[[0, 0]])


def test_decompose_straddler():
    view = half_mask_view()
    straddler = blob([0.0, 0.0, 10.0], [0.6, 0.1, 0.1])
    inner = blob([-2.0, 0.0, 10.0], 0.1)
    cloud = GaussianCloud.concat([inner, straddler])
    votes = vote_labels(cloud, [view])
    out = decompose_boundary(cloud, votes, [view], 0.3, 0.7)
    # the inner gaussian is untouched, the straddler leaves only its in-mask child
    assert len(out) == 2
    np.testing.assert_array_equal(out.means[0], inner.means[0])
    assert out.means[1, 0] < 0
    assert vote_labels(out, [view]).min_fraction[1] > 0.7


def test_decompose_without_straddlers_is_identity():
    view = half_mask_view()
    cloud = blob([[-2.0, 0.0, 10.0], [2.0, 0.0, 10.0]], 0.1)
    out = decompose_boundary(cloud, vote_labels(cloud, [view]), [view])
    np.testing.assert_array_equal(out.means, cloud.means)
    np.testing.assert_array_equal(out.log_scales, cloud.log_scales)


def test_empty_interval_is_pure_voting():
    view = half_mask_view()
    cloud = GaussianCloud.concat([blob([-2.0, 0.0, 10.0], 0.1), blob([0.2, 0.0, 10.0], [0.6, 0.1, 0.1])])
    out, report = segment(cloud, [view], 0.0, 0.0, 0.5)
    assert report.n_straddling == 0 and report.n_after_decompose == 2
    assert len(out) == 1


def test_bad_thresholds():
    view = half_mask_view()
    cloud = blob([-2.0, 0.0, 10.0], 0.1)
    with pytest.raises(InvalidConfig):
        segment(cloud, [view], 0.6, 0.4)


def test_keep_above_one_prunes_everything():
    view = half_mask_view()
    cloud = blob([-2.0, 0.0, 10.0], 0.1)
    with pytest.raises(AllPruned):
        prune_background(cloud, vote_labels(cloud, [view]), 1.1)


@pytest.fixture(scope="module")
def injected(scene):
    return injected_background(scene)


def test_prune_removes_exactly_injected(injected):
    cloud, n_base, views, *_ = injected
    out = prune_background(cloud, vote_labels(cloud, views))
    assert len(out) == n_base
    np.testing.assert_array_equal(out.means, cloud.means[:n_base])


def test_segmentation_improves_held_out_view(injected):
    cloud, n_base, views, cam, image, mask = injected
    clean, report = segment(cloud, views)
    assert report.n_in - report.n_out >= 50
    assert masked_psnr(render(clean, cam), image, mask) > masked_psnr(render(cloud, cam), image, mask)


def test_segment_properties(scene):
    from splatprint.scene import albedo, render_view, surface_point

    views = [render_view(scene, k) for k in range(scene.n_views)]
    # a full ring around the finger, so rim gaussians straddle some silhouette
    tt, vv = np.meshgrid(np.radians(np.arange(-180, 180, 6.0)), np.linspace(-2, 8, 12))
    pts = surface_point(scene.config, tt, vv).reshape(-1, 3)
    cloud = GaussianCloud.from_points(pts, albedo(scene, pts), scale=0.3)
    once, rep = segment(cloud, views)
    assert rep.n_straddling > 0 and rep.n_after_decompose > rep.n_in
    assert np.all(vote_labels(once, views).min_fraction >= 0.1)
    twice, rep2 = segment(once, views)
    assert rep2.n_straddling == 0
    np.testing.assert_array_equal(twice.means, once.means)
    np.testing.assert_array_equal(twice.log_scales, once.log_scales)
