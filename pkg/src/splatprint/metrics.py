"""Evaluation: minutia registration distance, depth error, PSNR and novel-view poses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyOverlap, EmptySet, InvalidCount, NoSharedMinutiae
from .geometry import CameraIntrinsics, Rotation, Sim3Transform, rigid_pose
from .gsplat.loss import ssim
from .pairwise import weighted_median

PSNR_CAP = 99.0


@dataclass(frozen=True)
class MinutiaPairSet:
    """Mated minutiae: ``src[i]`` (registered) against ``dst[i]`` (reference), in pixels."""

    ids: tuple
    src: np.ndarray
    dst: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.float64).reshape(-1, 2)
        dst = np.asarray(self.dst, dtype=np.float64).reshape(-1, 2)
        if src.shape != dst.shape:
            raise DimensionMismatch(f"pair arrays differ: {src.shape} vs {dst.shape}")
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    def __len__(self):
        return len(self.src)


def registration_distance(pairs) -> float:
    """Mean Euclidean pixel distance between mated minutiae."""
    if not isinstance(pairs, MinutiaPairSet):
        src, dst = pairs
        pairs = MinutiaPairSet(tuple(range(len(np.asarray(src).reshape(-1, 2)))), src, dst)
    if len(pairs) == 0:
        raise EmptySet("registration distance needs at least one minutia pair")
    return float(np.mean(np.linalg.norm(pairs.src - pairs.dst, axis=1)))


def lift_pixels(points, valid, px):
    """Bilinear lookup of a pointmap at continuous pixel coordinates.

    Pixel ``(i, j)`` has its center at ``(i + 0.5, j + 0.5)``. Invalid
    neighbours are dropped and the remaining weights renormalized; returns NaN
    when no neighbour is valid.
    """
    points = np.asarray(points, dtype=np.float64)
    h, w = valid.shape
    px = np.asarray(px, dtype=np.float64).reshape(-1, 2)
    x = px[:, 0] - 0.5
    y = px[:, 1] - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    acc = np.zeros((len(px), 3))
    wsum = np.zeros(len(px))
    for dy, dx, wt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                       (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + dx, y0 + dy
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        ok = np.zeros(len(px), dtype=bool)
        ok[inside] = valid[yi[inside], xi[inside]]
        wt = np.where(ok, wt, 0.0)
        acc[ok] += wt[ok, None] * points[yi[ok], xi[ok]]
        wsum += wt
    out = np.full((len(px), 3), np.nan)
    good = wsum > 0
    out[good] = acc[good] / wsum[good, None]
    return out


def _by_id(minutiae):
    return {int(m[0]): (float(m[1]), float(m[2])) for m in minutiae}


def register_and_project(pointmap_a, minutiae_a, minutiae_b, b_from_a: Sim3Transform,
                         intrinsics_b: CameraIntrinsics) -> MinutiaPairSet:
    """Lift view-a minutiae through its self-frame pointmap, move them into view b and project.

    Minutiae are ``(id, x, y)`` rows; pairs are formed by id with view b's own
    minutiae.
    """
    a, b = _by_id(minutiae_a), _by_id(minutiae_b)
    shared = sorted(set(a) & set(b))
    if not shared:
        raise NoSharedMinutiae("the two views have no minutia id in common")
    px = np.array([a[i] for i in shared])
    pts = lift_pixels(pointmap_a.points, pointmap_a.valid, px)
    keep = np.all(np.isfinite(pts), axis=1)
    if not np.any(keep):
        raise NoSharedMinutiae("no shared minutia could be lifted to 3D")
    ids = [i for i, k in zip(shared, keep) if k]
    p_b = b_from_a.apply(pts[keep])
    z = p_b[:, 2]
    if np.any(z <= 1e-9):
        raise NoSharedMinutiae("a transported minutia lies behind camera b")
    uv = np.stack([intrinsics_b.focal_px * p_b[:, 0] / z + intrinsics_b.cx,
                   intrinsics_b.focal_px * p_b[:, 1] / z + intrinsics_b.cy], axis=1)
    return MinutiaPairSet(tuple(ids), uv, np.array([b[i] for i in ids]))


def fit_similarity_2d(src, dst):
    """Least-squares 2D similarity ``dst ~ s R src + t``; returns ``(s, R, t)``."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) < 2:
        raise EmptySet("a 2D similarity needs at least two point pairs")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - mu_s, dst - mu_d
    u, sv, vt = np.linalg.svd(b.T @ a / len(src))
    d = np.diag([1.0, np.sign(np.linalg.det(u @ vt)) or 1.0])
    r = u @ d @ vt
    var = np.mean(np.sum(a * a, axis=1))
    s = float(np.sum(sv * np.diag(d)) / var) if var > 0 else 1.0
    return s, r, mu_d - s * r @ mu_s


def similarity_baseline(minutiae_a, minutiae_b) -> MinutiaPairSet:
    """2D baseline: fit an image-plane similarity on the shared minutiae and apply it."""
    a, b = _by_id(minutiae_a), _by_id(minutiae_b)
    shared = sorted(set(a) & set(b))
    if not shared:
        raise NoSharedMinutiae("the two views have no minutia id in common")
    src = np.array([a[i] for i in shared])
    dst = np.array([b[i] for i in shared])
    s, r, t = fit_similarity_2d(src, dst)
    return MinutiaPairSet(tuple(shared), src @ (s * r).T + t, dst)


def weighted_depth_error(pred, gt, valid=None, weights=None, scale_align=True) -> float:
    """Weighted mean absolute depth error (mm) over valid pixels.

    With ``scale_align`` the prediction is first multiplied by the weighted
    median of ``gt / pred``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"depth maps differ: {pred.shape} vs {gt.shape}")
    valid = np.ones(pred.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    w = np.ones(pred.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    sel = valid & (w > 0) & np.isfinite(pred) & np.isfinite(gt)
    if not np.any(sel):
        raise EmptyOverlap("no valid pixel with positive weight")
    p, g, w = pred[sel], gt[sel], w[sel]
    if scale_align:
        ok = p != 0
        if not np.any(ok):
            raise EmptyOverlap("predicted depths are all zero; cannot align scale")
        p = p * weighted_median(g[ok] / p[ok], w[ok])
    return float(np.sum(w * np.abs(p - g)) / np.sum(w))


def psnr(a, b) -> float:
    """``10 log10(1 / MSE)`` for range 1; identical images give the 99 dB sentinel."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def masked_psnr(a, b, mask) -> float:
    """PSNR over the pixels where ``mask`` is set."""
    mask = np.asarray(mask, dtype=bool)
    if not np.any(mask):
        raise EmptyOverlap("mask selects no pixel")
    return psnr(np.asarray(a)[mask], np.asarray(b)[mask])


def image_report(rendered, gt):
    return {"psnr": psnr(rendered, gt), "ssim": ssim(rendered, gt)}


def _slerp(q0, q1, s):
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1, dot = -q1, -dot
    if dot > 1.0 - 1e-12:
        q = q0 + s * (q1 - q0)
        return q / np.linalg.norm(q)
    theta = math.acos(min(1.0, dot))
    return (math.sin((1 - s) * theta) * q0 + math.sin(s * theta) * q1) / math.sin(theta)


def interpolate_pose(a: Sim3Transform, b: Sim3Transform, s) -> Sim3Transform:
    """Rotation slerp and camera-center lerp between two poses."""
    q = _slerp(a.rotation.quat, b.rotation.quat, s)
    c = (1 - s) * a.center + s * b.center
    return rigid_pose(Rotation(q), c)


def novel_view_poses(left: Sim3Transform, center: Sim3Transform, right: Sim3Transform, n=12):
    """``n`` poses at equal parameter steps along left -> center -> right, endpoints included."""
    if int(n) != n or n < 2:
        raise InvalidCount(f"need at least 2 poses, got {n}")
    out = []
    for k in range(int(n)):
        s = k / (n - 1)
        if s <= 0.5:
            out.append(interpolate_pose(left, center, 2 * s))
        else:
            out.append(interpolate_pose(center, right, 2 * s - 1))
    return out


def yaw_deg(pose: Sim3Transform) -> float:
    """Yaw of the optical axis about the world y axis, in degrees."""
    fwd = pose.rotation.matrix[:, 2]
    return math.degrees(math.atan2(fwd[0], fwd[2]))


def depth_from_pointmap(points, valid):
    """Camera-frame z per pixel, NaN where invalid."""
    return np.where(valid, np.asarray(points)[..., 2], np.nan)
