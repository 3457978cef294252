"""Pairwise stage: focal recovery and confidence-weighted Procrustes alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCorrespondences, DegeneratePointmap
from .geometry import Rotation, Sim3Transform
from .scene import Pointmap

DEFAULT_CONF_THRESHOLD = 0.5


@dataclass(frozen=True)
class PairAlignment:
    """Similarity taking view-1 self-frame points into view-2's frame."""

    transform: Sim3Transform
    weighted_residual: float
    inlier_weight_sum: float


def weighted_median(values, weights):
    values = np.asarray(values, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    idx = np.searchsorted(cw, 0.5 * cw[-1])
    return float(v[min(idx, len(v) - 1)])


def recover_focal(pm: Pointmap, principal_point, irls_steps=10):
    """Focal length (px) minimizing the confidence-weighted reprojection error.

    Starts from the weighted median of per-pixel closed-form estimates and
    refines with iteratively reweighted least squares on the (unsquared) 2D
    reprojection residual norm.
    """
    h, w = pm.valid.shape
    uu, vv = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    cx, cy = principal_point
    pts = pm.points
    z = pts[..., 2]
    du = np.stack([uu - cx, vv - cy], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = pts[..., :2] / z[..., None]
    qn = np.linalg.norm(q, axis=-1)
    dn = np.linalg.norm(du, axis=-1)
    sel = pm.valid & (z > 0) & (pm.confidence > 0) & (qn > 1e-9) & (dn > 1e-9)
    if np.count_nonzero(sel) < 100:
        raise DegeneratePointmap(
            f"need >= 100 off-axis valid pixels for focal recovery, have {np.count_nonzero(sel)}"
        )
    q = q[sel]
    du = du[sel]
    conf = pm.confidence[sel]
    f = weighted_median(dn[sel] / qn[sel], conf)
    for _ in range(irls_steps):
        res = np.linalg.norm(du - f * q, axis=-1)
        wts = conf / np.maximum(res, 1e-6)
        f = float(np.sum(wts * np.sum(du * q, axis=-1)) / np.sum(wts * np.sum(q * q, axis=-1)))
    if not np.isfinite(f) or f <= 0:
        raise DegeneratePointmap("focal estimate is not positive")
    return f


def weighted_procrustes(src, dst, weights):
    """Closed-form minimizer of ``sum w ||s (R x + t) - y||^2``.

    Returns ``(Sim3Transform, objective_value)``. The scale is shared by the
    rotation and translation, so ``t`` is the usual Umeyama translation
    divided by the scale.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(weights, dtype=np.float64).ravel()
    keep = w > 0
    src, dst, w = src[keep], dst[keep], w[keep]
    if len(w) < 3:
        raise DegenerateCorrespondences(f"need >= 3 positively weighted points, have {len(w)}")
    wsum = w.sum()
    mu_x = w @ src / wsum
    mu_y = w @ dst / wsum
    xc = src - mu_x
    yc = dst - mu_y
    cov_xx = (xc * w[:, None]).T @ xc / wsum
    sx = np.linalg.svd(cov_xx, compute_uv=False)
    # rank < 2 means collinear (or coincident) sources
    if sx[1] < 1e-9 * sx[0] or sx[0] == 0:
        raise DegenerateCorrespondences("correspondences are collinear")
    cov_yx = (yc * w[:, None]).T @ xc / wsum
    u, d, vt = np.linalg.svd(cov_yx)
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0
    rmat = (u * s) @ vt
    var_x = np.trace(cov_xx)
    scale = float(np.sum(d * s) / var_x)
    if scale <= 0:
        raise DegenerateCorrespondences("non-positive scale")
    t_eff = mu_y - scale * rmat @ mu_x
    transform = Sim3Transform(scale, Rotation.from_matrix(rmat), t_eff / scale)
    resid = transform.apply(src) - dst
    objective = float(np.sum(w * np.sum(resid * resid, axis=1)))
    return transform, objective


def procrustes_objective(transform: Sim3Transform, src, dst, weights):
    resid = transform.apply(np.asarray(src, dtype=np.float64)) - np.asarray(dst, dtype=np.float64)
    return float(np.sum(np.asarray(weights) * np.sum(resid * resid, axis=-1)))


def procrustes_align(pm1: Pointmap, pm2: Pointmap, correspondences) -> PairAlignment:
    """Align ``pm1`` onto ``pm2`` given ``(K, 2)`` flat pixel-index pairs."""
    corr = np.asarray(correspondences, dtype=np.int64).reshape(-1, 2)
    p1 = pm1.points.reshape(-1, 3)[corr[:, 0]]
    p2 = pm2.points.reshape(-1, 3)[corr[:, 1]]
    c1 = pm1.confidence.ravel()[corr[:, 0]]
    c2 = pm2.confidence.ravel()[corr[:, 1]]
    w = c1 * c2
    transform, obj = weighted_procrustes(p1, p2, w)
    return PairAlignment(transform, obj, float(w.sum()))


def _pixel_pairs(a: Pointmap, b: Pointmap, conf_threshold):
    if a.valid.shape != b.valid.shape:
        raise ValueError("pointmaps of the same view must share a pixel grid")
    ok = a.valid & b.valid & (a.confidence >= conf_threshold) & (b.confidence >= conf_threshold)
    idx = np.flatnonzero(ok)
    return np.stack([idx, idx], axis=1)


def align_views(x11: Pointmap, x22: Pointmap, x12: Pointmap = None, x21: Pointmap = None,
                conf_threshold=DEFAULT_CONF_THRESHOLD) -> PairAlignment:
    """Relative similarity from view 1's frame into view 2's frame.

    ``xvr`` is the pointmap of view ``v`` expressed in view ``r``'s frame.
    Each view's self-frame map and its cross-frame map share pixels, which
    gives dense correspondences without any feature matching: view 1's
    pixels pair ``x11`` with ``x12``; view 2's pixels pair ``x21`` with ``x22``.
    """
    if x12 is None and x21 is None:
        raise ValueError("need at least one cross-frame pointmap")
    src, dst, w = [], [], []
    if x12 is not None:
        corr = _pixel_pairs(x11, x12, conf_threshold)[:, 0]
        src.append(x11.points.reshape(-1, 3)[corr])
        dst.append(x12.points.reshape(-1, 3)[corr])
        w.append(x11.confidence.ravel()[corr] * x12.confidence.ravel()[corr])
    if x21 is not None:
        corr = _pixel_pairs(x21, x22, conf_threshold)[:, 0]
        src.append(x21.points.reshape(-1, 3)[corr])
        dst.append(x22.points.reshape(-1, 3)[corr])
        w.append(x21.confidence.ravel()[corr] * x22.confidence.ravel()[corr])
    w = np.concatenate(w)
    transform, obj = weighted_procrustes(np.concatenate(src), np.concatenate(dst), w)
    return PairAlignment(transform, obj, float(w.sum()))


def align_all_pairs(pointmaps, conf_threshold=DEFAULT_CONF_THRESHOLD):
    """Pairwise alignments ``(n, m) -> PairAlignment`` for every ordered view pair present."""
    views = sorted({v for v, _ in pointmaps})
    out = {}
    for n in views:
        for m in views:
            if n >= m:
                continue
            x12 = pointmaps.get((n, m))
            x21 = pointmaps.get((m, n))
            if (n, n) not in pointmaps or (m, m) not in pointmaps or (x12 is None and x21 is None):
                continue
            out[(n, m)] = align_views(pointmaps[(n, n)], pointmaps[(m, m)], x12, x21, conf_threshold)
    return out
