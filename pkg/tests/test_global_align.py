import numpy as np
import pytest

from splatprint.errors import DisconnectedGraph, EmptyCloud
from splatprint.geometry import Rotation, Sim3Transform, rot_x
from splatprint.global_align import (
    GlobalOpts, build_view_graph, fuse_point_cloud, global_objective, normalized_rig, optimize_global,
    view_poses,
)
from splatprint.pairwise import align_all_pairs, weighted_procrustes
from splatprint.scene import Pointmap


@pytest.fixture(scope="module")
def clean_alignment(clean_pointmaps):
    graph = build_view_graph(clean_pointmaps, align_all_pairs(clean_pointmaps))
    return optimize_global(graph, GlobalOpts())


def gauge_fit(ga, scene):
    """Sim3 taking the reconstruction frame to the world, fitted on every global point."""
    src, dst = [], []
    for v in ga.graph.views:
        sel = ga.valid[v]
        src.append(ga.chi[v][sel])
        dst.append(scene.pose(v).apply(ga.graph.self_maps[v].points[sel]))
    src, dst = np.concatenate(src), np.concatenate(dst)
    return weighted_procrustes(src, dst, np.ones(len(src)))[0]


def test_graph_sizes(clean_pointmaps):
    pairs = align_all_pairs(clean_pointmaps)
    assert len(build_view_graph(clean_pointmaps, pairs).edges) == 3
    two = {k: v for k, v in clean_pointmaps.items() if max(k) < 2}
    assert len(build_view_graph(two, align_all_pairs(two)).edges) == 1


def test_disconnected_graph(clean_pointmaps):
    pm = clean_pointmaps
    maps = {(0, 0): pm[(0, 0)], (1, 1): pm[(1, 1)], (0, 1): pm[(0, 1)], (1, 0): pm[(1, 0)],
            (2, 2): pm[(2, 2)]}
    pairs = align_all_pairs({k: v for k, v in maps.items() if max(k) < 2})
    maps[(3, 3)] = pm[(2, 2)]
    maps[(2, 3)] = pm[(2, 2)]
    maps[(3, 2)] = pm[(2, 2)]
    pairs[(2, 3)] = pairs[(0, 1)]
    with pytest.raises(DisconnectedGraph):
        build_view_graph(maps, pairs)


def test_noise_free_recovery(clean_alignment, scene):
    ga = clean_alignment
    g = gauge_fit(ga, scene)
    poses = view_poses(ga)
    for v in ga.graph.views:
        est = g.compose(poses[v])
        gt = scene.pose(v)
        assert np.degrees(est.rotation.angle_to(gt.rotation)) < 0.1
        assert np.linalg.norm(est.center - gt.center) < 0.1


def test_objective_small_and_monotone(clean_alignment):
    trace = np.array(clean_alignment.objective_trace)
    assert np.all(np.diff(trace) <= 0)
    assert clean_alignment.final_objective < 1e-6 * 80.0


def test_gauge_fixed(clean_alignment):
    assert abs(np.sum(np.log(clean_alignment.edge_scales))) < 1e-12
    assert all(s > 0 for s in clean_alignment.edge_scales)


def test_two_view_matches_pairwise(clean_pointmaps):
    two = {k: v for k, v in clean_pointmaps.items() if max(k) < 2}
    pairs = align_all_pairs(two)
    ga = optimize_global(build_view_graph(two, pairs), GlobalOpts(max_iters=50))
    poses = view_poses(ga)
    rel = poses[1].inverse().compose(poses[0])
    pw = pairs[(0, 1)].transform
    assert rel.rotation.angle_to(pw.rotation) < 1e-6
    # compare up to global scale
    np.testing.assert_allclose(rel.center / rel.scale, pw.center / pw.scale, atol=1e-6)


def test_max_iters_zero_rejected(clean_pointmaps):
    graph = build_view_graph(clean_pointmaps, align_all_pairs(clean_pointmaps))
    with pytest.raises(ValueError):
        optimize_global(graph, GlobalOpts(max_iters=0))


def test_objective_invariant_to_world_frame(clean_alignment):
    ga = clean_alignment
    g = Sim3Transform(1.0, rot_x(20), np.array([3.0, -1.0, 2.0]))
    chi = {v: np.where(ga.valid[v][..., None], g.apply(ga.chi[v]), 0.0) for v in ga.graph.views}
    moved = tuple(g.compose(t) for t in ga.edge_transforms)
    a = global_objective(ga.graph, ga.chi, ga.edge_transforms)
    b = global_objective(ga.graph, chi, moved)
    assert abs(a - b) < 1e-6


def test_zero_confidence_pixels_do_not_matter(clean_pointmaps):
    pm = clean_pointmaps
    pairs = align_all_pairs(pm)
    base = optimize_global(build_view_graph(pm, pairs), GlobalOpts(max_iters=40))
    rng = np.random.default_rng(0)
    padded = {}
    for key, p in pm.items():
        extra = ~p.valid & (rng.uniform(size=p.valid.shape) < 0.05)
        pts = np.where(extra[..., None], rng.normal(size=p.points.shape) * 50, p.points)
        padded[key] = Pointmap(pts, p.confidence, p.valid | extra, p.view, p.ref)
    ga = optimize_global(build_view_graph(padded, pairs), GlobalOpts(max_iters=40))
    for v in base.graph.views:
        sel = base.confidence[v] > 0
        np.testing.assert_allclose(ga.chi[v][sel], base.chi[v][sel], atol=1e-9)


def test_fuse_counts_and_floor(clean_alignment):
    ga = clean_alignment
    cloud = fuse_point_cloud(ga, 0.0)
    assert len(cloud) == sum(int(ga.valid[v].sum()) for v in ga.graph.views)
    with pytest.raises(EmptyCloud):
        fuse_point_cloud(ga, 1.1)


def test_voxel_downsample_spacing(clean_alignment):
    voxel = 0.2
    cloud = fuse_point_cloud(clean_alignment, 0.0, voxel_mm=voxel)
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    assert len(np.unique(keys, axis=0)) == len(keys)


def test_normalized_rig_is_rigid(clean_alignment, scene):
    poses, scale = normalized_rig(clean_alignment)
    assert scale > 0
    for v, p in poses.items():
        assert p.scale == 1.0
    d01 = np.linalg.norm(poses[0].center - poses[1].center)
    gt = np.linalg.norm(scene.pose(0).center - scene.pose(1).center)
    assert abs(d01 - gt) < 1e-3 * gt
