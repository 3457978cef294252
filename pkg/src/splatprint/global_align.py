"""Groupwise stage: joint optimization of global pointmaps, edge poses and scales.

Objective, for edges ``e`` over view pairs and each view ``v`` in ``e``::

    sum_e sum_v sum_i C[v,e]_i * || chi[v]_i - s_e (R_e X[v,e]_i + t_e) ||

with ``X[v,e]`` the pointmap of view ``v`` in the reference frame of edge
``e``. The norm is unsquared (smoothed as ``sqrt(r^2 + eps^2) - eps``) unless
``squared_norm`` is set, and the total is divided by the confidence mass so
values are in mm. Scales are gauge-fixed by ``sum_e log s_e = 0``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DisconnectedGraph, EmptyCloud, NonFiniteObjective
from .geometry import Rotation, Sim3Transform, rigid_pose, so3_exp
from .pairwise import PairAlignment, weighted_procrustes
from .scene import Pointmap


@dataclass(frozen=True)
class GlobalOpts:
    max_iters: int = 300
    lr: float = 0.01
    lr_rotation: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_norm: float = 1e-6
    squared_norm: bool = False
    seed: int = 0


@dataclass(frozen=True, eq=False)
class Edge:
    n: int
    m: int
    ref: int
    maps: dict  # view -> Pointmap in frame `ref`


@dataclass(frozen=True, eq=False)
class ViewGraph:
    views: tuple
    edges: tuple  # of Edge
    init: dict  # (n, m) -> PairAlignment (frame n -> frame m)
    self_maps: dict  # view -> Pointmap in its own frame
    colors: dict = field(default_factory=dict)  # view -> (H, W, 3) image


@dataclass(frozen=True, eq=False)
class GlobalAlignment:
    chi: dict  # view -> (H, W, 3) global points
    valid: dict  # view -> (H, W) bool
    confidence: dict  # view -> (H, W)
    edge_transforms: tuple  # Sim3 per edge: X -> s (R X + t)
    edge_scales: tuple
    final_objective: float
    iterations_run: int
    objective_trace: tuple
    graph: ViewGraph

    @property
    def edge_poses(self):
        return tuple(Sim3Transform(1.0, t.rotation, t.translation) for t in self.edge_transforms)


@dataclass(frozen=True, eq=False)
class ColoredPointCloud:
    points: np.ndarray
    colors: np.ndarray

    def __len__(self):
        return len(self.points)


def _connected(views, pairs):
    if not views:
        return False
    adj = {v: set() for v in views}
    for n, m in pairs:
        adj[n].add(m)
        adj[m].add(n)
    seen = {views[0]}
    todo = deque([views[0]])
    while todo:
        v = todo.popleft()
        for w in adj[v] - seen:
            seen.add(w)
            todo.append(w)
    return len(seen) == len(views)


def build_view_graph(pointmaps, alignments, colors=None) -> ViewGraph:
    """Assemble the view graph from ``(view, ref) -> Pointmap`` and pair alignments."""
    views = tuple(sorted({v for v, _ in pointmaps} | {v for pair in alignments for v in pair}))
    if len(views) < 2:
        raise DisconnectedGraph("need at least two views")
    edges = []
    for (n, m) in sorted(alignments):
        for ref in (n, m):
            if (n, ref) in pointmaps and (m, ref) in pointmaps:
                edges.append(Edge(n, m, ref, {n: pointmaps[(n, ref)], m: pointmaps[(m, ref)]}))
                break
    if not _connected(list(views), [(e.n, e.m) for e in edges]):
        raise DisconnectedGraph(f"view graph over {views} is not connected")
    self_maps = {v: pointmaps[(v, v)] for v in views if (v, v) in pointmaps}
    return ViewGraph(views, tuple(edges), dict(alignments), self_maps, dict(colors or {}))


def _frames_from_tree(graph: ViewGraph):
    """world_from_frame for every view, world = frame of the first view."""
    root = graph.views[0]
    frames = {root: Sim3Transform.identity()}
    todo = deque([root])
    while todo:
        v = todo.popleft()
        for (n, m), pa in sorted(graph.init.items()):
            if n == v and m not in frames:
                frames[m] = frames[n].compose(pa.transform.inverse())
                todo.append(m)
            elif m == v and n not in frames:
                frames[n] = frames[m].compose(pa.transform)
                todo.append(n)
    return frames


class _Problem:
    """Flattened residual blocks for vectorized objective/gradient evaluation."""

    def __init__(self, graph: ViewGraph, opts: GlobalOpts):
        self.graph = graph
        self.opts = opts
        self.views = graph.views
        shape = None
        self.valid = {}
        self.conf = {}
        for v in self.views:
            maps = [e.maps[v] for e in graph.edges if v in e.maps]
            valid = np.zeros(maps[0].valid.shape, bool)
            conf = np.zeros(maps[0].valid.shape)
            for pm in maps:
                valid |= pm.valid & (pm.confidence > 0)
                conf = np.maximum(conf, pm.confidence)
            self.valid[v] = valid
            self.conf[v] = conf
            shape = valid.shape
        self.shape = shape
        self.pix = {v: np.flatnonzero(self.valid[v]) for v in self.views}
        # residual blocks: (edge index, view, chi rows, X, C)
        self.blocks = []
        total = 0.0
        for k, e in enumerate(graph.edges):
            for v in (e.n, e.m):
                pm = e.maps[v]
                sel = pm.valid.ravel() & (pm.confidence.ravel() > 0)
                flat = np.flatnonzero(sel)
                rows = np.searchsorted(self.pix[v], flat)
                x = pm.points.reshape(-1, 3)[flat]
                c = pm.confidence.ravel()[flat]
                self.blocks.append((k, v, rows, x, c))
                total += c.sum()
        self.wtotal = total

    def evaluate(self, chi, rot, trans, logs):
        eps = self.opts.eps_norm
        obj = 0.0
        g_chi = {v: np.zeros_like(chi[v]) for v in self.views}
        g_rot = np.zeros((len(rot), 3))
        g_t = np.zeros((len(rot), 3))
        g_logs = np.zeros(len(rot))
        for k, v, rows, x, c in self.blocks:
            s = np.exp(logs[k])
            rx = x @ rot[k].T
            y = s * (rx + trans[k])
            r = chi[v][rows] - y
            if self.opts.squared_norm:
                rr = np.sum(r * r, axis=1)
                obj += np.sum(c * rr)
                g = 2.0 * c[:, None] * r
            else:
                nrm = np.sqrt(np.sum(r * r, axis=1) + eps * eps)
                obj += np.sum(c * (nrm - eps))
                g = (c / nrm)[:, None] * r
            g /= self.wtotal
            np.add.at(g_chi[v], rows, g)
            gs = g.sum(axis=0)
            g_t[k] -= s * gs
            g_logs[k] -= np.sum(g * y)
            g_rot[k] -= s * np.sum(np.cross(rx, g), axis=0)
        return obj / self.wtotal, g_chi, g_rot, g_t, g_logs


def _recenter(chi, logs):
    shift = logs.mean()
    factor = np.exp(-shift)
    return {v: c * factor for v, c in chi.items()}, logs - shift


def initial_state(graph: ViewGraph, problem: _Problem):
    frames = _frames_from_tree(graph)
    rot = np.array([frames[e.ref].rotation.matrix for e in graph.edges])
    trans = np.array([frames[e.ref].translation for e in graph.edges])
    logs = np.array([np.log(frames[e.ref].scale) for e in graph.edges])
    chi = {}
    for v in graph.views:
        acc = np.zeros((len(problem.pix[v]), 3))
        have = np.zeros(len(problem.pix[v]), bool)
        for e in graph.edges:
            if v not in e.maps:
                continue
            pm = e.maps[v]
            sel = pm.valid.ravel()[problem.pix[v]] & ~have
            if not np.any(sel):
                continue
            pts = pm.points.reshape(-1, 3)[problem.pix[v][sel]]
            acc[sel] = frames[e.ref].apply(pts)
            have |= sel
        chi[v] = acc
    chi, logs = _recenter(chi, logs)
    return chi, rot, trans, logs


class _Adam:
    def __init__(self, beta1, beta2, eps=1e-12):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, name, grad, lr):
        m = self.m.get(name, np.zeros_like(grad))
        v = self.v.get(name, np.zeros_like(grad))
        m = self.b1 * m + (1 - self.b1) * grad
        v = self.b2 * v + (1 - self.b2) * grad * grad
        self.m[name], self.v[name] = m, v
        mh = m / (1 - self.b1**self.t)
        vh = v / (1 - self.b2**self.t)
        return -lr * mh / (np.sqrt(vh) + self.eps)


def optimize_global(graph: ViewGraph, opts: GlobalOpts = GlobalOpts()) -> GlobalAlignment:
    """Adaptive first-order descent on the global objective with backtracking.

    A step that raises the objective is rejected and the step size halved, so
    the accepted objective sequence never increases.
    """
    if opts.max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if not _connected(list(graph.views), [(e.n, e.m) for e in graph.edges]):
        raise DisconnectedGraph("view graph is not connected")
    problem = _Problem(graph, opts)
    chi, rot, trans, logs = initial_state(graph, problem)
    obj, g_chi, g_rot, g_t, g_logs = problem.evaluate(chi, rot, trans, logs)
    if not np.isfinite(obj):
        raise NonFiniteObjective("initial objective is not finite")
    trace = [obj]
    adam = _Adam(opts.beta1, opts.beta2)
    backoff = 1.0
    for it in range(opts.max_iters):
        decay = 0.5 * (1 + np.cos(np.pi * it / opts.max_iters))
        lr = opts.lr * decay * backoff
        lr_rot = opts.lr_rotation * decay * backoff
        adam.t += 1
        new_chi = {v: chi[v] + adam.step(("chi", v), g_chi[v], lr) for v in graph.views}
        new_t = trans + adam.step("t", g_t, lr)
        new_logs = logs + adam.step("logs", g_logs, lr)
        omega = adam.step("rot", g_rot, lr_rot)
        new_rot = np.einsum("kij,kjl->kil", so3_exp(omega), rot)
        new_chi, new_logs = _recenter(new_chi, new_logs)
        res = problem.evaluate(new_chi, new_rot, new_t, new_logs)
        if not np.isfinite(res[0]):
            raise NonFiniteObjective(f"objective diverged at iteration {it}")
        if res[0] <= obj:
            chi, rot, trans, logs = new_chi, new_rot, new_t, new_logs
            obj, g_chi, g_rot, g_t, g_logs = res
        else:
            backoff *= 0.5
        trace.append(obj)

    h, w = problem.shape
    chi_maps, conf_maps = {}, {}
    for v in graph.views:
        full = np.zeros((h * w, 3))
        full[problem.pix[v]] = chi[v]
        chi_maps[v] = full.reshape(h, w, 3)
        conf_maps[v] = problem.conf[v]
    transforms = tuple(
        Sim3Transform(float(np.exp(logs[k])), Rotation.from_matrix(rot[k]), trans[k]) for k in range(len(rot))
    )
    return GlobalAlignment(
        chi=chi_maps,
        valid=dict(problem.valid),
        confidence=conf_maps,
        edge_transforms=transforms,
        edge_scales=tuple(float(np.exp(x)) for x in logs),
        final_objective=float(obj),
        iterations_run=opts.max_iters,
        objective_trace=tuple(float(x) for x in trace),
        graph=graph,
    )


def global_objective(graph: ViewGraph, chi, transforms, opts: GlobalOpts = GlobalOpts()):
    """Objective value for explicit ``chi`` maps and per-edge similarity transforms."""
    problem = _Problem(graph, opts)
    flat = {v: chi[v].reshape(-1, 3)[problem.pix[v]] for v in graph.views}
    rot = np.array([t.rotation.matrix for t in transforms])
    trans = np.array([t.translation for t in transforms])
    logs = np.log([t.scale for t in transforms])
    return problem.evaluate(flat, rot, trans, logs)[0]


def view_poses(ga: GlobalAlignment):
    """world_from_camera similarity per view, fitted from its self-frame pointmap."""
    poses = {}
    for v in ga.graph.views:
        pm = ga.graph.self_maps.get(v)
        if pm is None:
            # fall back to an edge where v is the reference frame
            for k, e in enumerate(ga.graph.edges):
                if e.ref == v:
                    poses[v] = ga.edge_transforms[k]
                    break
            continue
        sel = pm.valid & ga.valid[v]
        t, _ = weighted_procrustes(pm.points[sel], ga.chi[v][sel], pm.confidence[sel])
        poses[v] = t
    return poses


def normalized_rig(ga: GlobalAlignment):
    """Rigid per-view poses in the reconstruction rescaled by its mean pose scale.

    Returns ``(poses, scale)``; dividing fused points by ``scale`` puts them in
    the same frame as ``poses``.
    """
    vp = view_poses(ga)
    scale = float(np.exp(np.mean([np.log(vp[v].scale) for v in ga.graph.views])))
    return {v: rigid_pose(vp[v].rotation, vp[v].center / scale) for v in ga.graph.views}, scale


def fuse_point_cloud(ga: GlobalAlignment, confidence_floor=0.0, voxel_mm=None) -> ColoredPointCloud:
    pts, cols = [], []
    for v in ga.graph.views:
        sel = ga.valid[v] & (ga.confidence[v] >= confidence_floor)
        pts.append(ga.chi[v][sel])
        img = ga.graph.colors.get(v)
        cols.append(img[sel] if img is not None else np.full((np.count_nonzero(sel), 3), 0.5))
    pts = np.concatenate(pts)
    cols = np.concatenate(cols)
    if len(pts) == 0:
        raise EmptyCloud(f"confidence floor {confidence_floor} removes every point")
    if voxel_mm:
        pts, cols = voxel_downsample(pts, cols, voxel_mm)
    return ColoredPointCloud(pts, cols)


def voxel_downsample(points, colors, voxel_mm):
    """Average points and colors falling in the same voxel."""
    keys = np.floor(points / voxel_mm).astype(np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    counts = np.bincount(inv, minlength=len(uniq)).astype(np.float64)
    out_p = np.stack([np.bincount(inv, points[:, k], len(uniq)) for k in range(3)], axis=1) / counts[:, None]
    out_c = np.stack([np.bincount(inv, colors[:, k], len(uniq)) for k in range(3)], axis=1) / counts[:, None]
    return out_p, out_c
