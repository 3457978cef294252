"""Tile-based rendering of a gaussian cloud and the analytic adjoint."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..errors import DimensionMismatch
from ..geometry import CameraIntrinsics, Sim3Transform
from ._accel import kernels
from .raster_numpy import ALPHA_MAX, ALPHA_MIN
from .cloud import GaussianCloud, sigmoid
from .loss import loss_and_grad
from .projection import Projection, project_gaussians, projection_backward

TILE = 16


class Camera(NamedTuple):
    """Minimal camera: anything with these two attributes can be rendered."""

    intrinsics: CameraIntrinsics
    world_from_camera: Sim3Transform


@dataclass(eq=False)
class RenderResult:
    image: np.ndarray
    final_t: np.ndarray
    last: np.ndarray
    proj: Projection
    ids: np.ndarray
    bbox: np.ndarray
    tile_start: np.ndarray
    tile_end: np.ndarray
    tiles_x: int
    opac: np.ndarray
    colors: np.ndarray
    background: np.ndarray
    backend: str


@dataclass(eq=False)
class Gradients:
    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray  # left tangent, (N, 3)
    opacity_logits: np.ndarray
    color_logits: np.ndarray
    cam_rotation: np.ndarray  # tangent of camera_from_world, (3,)
    cam_translation: np.ndarray
    means2d_norm: np.ndarray = None  # screen-space positional gradient magnitude

    def max_abs(self):
        return max(
            float(np.max(np.abs(a))) if a.size else 0.0
            for a in (self.means, self.log_scales, self.rotations, self.opacity_logits,
                      self.color_logits, self.cam_rotation, self.cam_translation)
        )


def bin_tiles(proj: Projection, opac, colors, width, height, tile=TILE):
    """Sorted (tile, depth) entry list, per-tile ranges and per-gaussian pixel boxes."""
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    idx = np.flatnonzero(proj.visible)
    u, v = proj.means2d[idx, 0], proj.means2d[idx, 1]
    # extent where alpha falls below the compositing cutoff
    op = np.minimum(opac[idx], ALPHA_MAX)
    reach = np.sqrt(2.0 * np.log(np.maximum(op / ALPHA_MIN, 1.0)) * proj.lam_max[idx])
    rad = np.ceil(reach)
    x_lo = np.clip(np.ceil(u - rad - 0.5), 0, width - 1).astype(np.int64)
    x_hi = np.clip(np.floor(u + rad - 0.5), -1, width - 1).astype(np.int64)
    y_lo = np.clip(np.ceil(v - rad - 0.5), 0, height - 1).astype(np.int64)
    y_hi = np.clip(np.floor(v + rad - 0.5), -1, height - 1).astype(np.int64)
    ok = (x_hi >= x_lo) & (y_hi >= y_lo) & (u + rad - 0.5 >= 0) & (v + rad - 0.5 >= 0)
    idx, x_lo, x_hi, y_lo, y_hi = idx[ok], x_lo[ok], x_hi[ok], y_lo[ok], y_hi[ok]
    bbox = np.zeros((len(proj.visible), 4), dtype=np.int64)
    bbox[:, 1] = bbox[:, 3] = -1
    bbox[idx] = np.stack([x_lo, x_hi, y_lo, y_hi], axis=1)
    tx0, tx1 = x_lo // tile, x_hi // tile
    ty0, ty1 = y_lo // tile, y_hi // tile
    nx = tx1 - tx0 + 1
    counts = nx * (ty1 - ty0 + 1)
    gid = np.repeat(idx, counts)
    first = np.repeat(np.cumsum(counts) - counts, counts)
    j = np.arange(len(gid)) - first
    nxr = np.repeat(nx, counts)
    tx = np.repeat(tx0, counts) + j % nxr
    ty = np.repeat(ty0, counts) + j // nxr
    tile_id = ty * tiles_x + tx
    # depth order, ties broken by parameters so input order never matters
    order = np.lexsort((
        colors[gid, 2], colors[gid, 1], colors[gid, 0], opac[gid],
        proj.means2d[gid, 1], proj.means2d[gid, 0], proj.depths[gid], tile_id,
    ))
    ids = np.ascontiguousarray(gid[order], dtype=np.int64)
    tsorted = tile_id[order]
    all_tiles = np.arange(tiles_x * tiles_y)
    start = np.searchsorted(tsorted, all_tiles, side="left").astype(np.int64)
    end = np.searchsorted(tsorted, all_tiles, side="right").astype(np.int64)
    return ids, start, end, tiles_x, bbox


def rasterize(cloud: GaussianCloud, camera, background=(0.0, 0.0, 0.0), backend=None) -> RenderResult:
    intr = camera.intrinsics
    cam_from_world = camera.world_from_camera.inverse()
    bg = np.ascontiguousarray(background, dtype=np.float64).reshape(3)
    proj = project_gaussians(cloud, intr, cam_from_world)
    opac = np.ascontiguousarray(sigmoid(cloud.opacity_logits))
    colors = np.ascontiguousarray(sigmoid(cloud.color_logits))
    ids, start, end, tiles_x, bbox = bin_tiles(proj, opac, colors, intr.width, intr.height)
    k = kernels(backend)
    image, final_t, last = k.rasterize_forward(
        np.ascontiguousarray(proj.means2d), np.ascontiguousarray(proj.conics), opac, colors,
        ids, bbox, start, end, tiles_x, intr.width, intr.height, TILE, bg,
    )
    return RenderResult(image, final_t, last, proj, ids, bbox, start, end, tiles_x, opac, colors, bg,
                        backend or "default")


def render(cloud: GaussianCloud, view, background=(0.0, 0.0, 0.0), backend=None):
    """Render ``cloud`` from ``view`` (anything with intrinsics and world_from_camera)."""
    return rasterize(cloud, view, background, backend).image


def render_backward(cloud: GaussianCloud, res: RenderResult, grad_image) -> Gradients:
    """Chain ``d L / d image`` through compositing and projection."""
    intr = res.proj.intrinsics
    k = kernels(None if res.backend == "default" else res.backend)
    g_mean2d_e, g_conic_e, g_opac_e, g_color_e = k.rasterize_backward(
        np.ascontiguousarray(res.proj.means2d), np.ascontiguousarray(res.proj.conics), res.opac, res.colors,
        res.ids, res.bbox, res.tile_start, res.tile_end, res.tiles_x, intr.width, intr.height, TILE,
        res.background, np.ascontiguousarray(grad_image, dtype=np.float64), res.final_t, res.last,
    )
    n = len(cloud)
    ids = res.ids

    def reduce(vals):
        if vals.ndim == 1:
            return np.bincount(ids, weights=vals, minlength=n)
        return np.stack([np.bincount(ids, weights=vals[:, j], minlength=n) for j in range(vals.shape[1])], axis=1)

    g_mean2d = reduce(g_mean2d_e)
    g_conic = reduce(g_conic_e)
    g_opac = reduce(g_opac_e)
    g_color = reduce(g_color_e)
    g_means, g_log_scales, g_rot, g_cam_rot, g_cam_t = projection_backward(res.proj, g_mean2d, g_conic)
    return Gradients(
        means=g_means,
        log_scales=g_log_scales,
        rotations=g_rot,
        opacity_logits=g_opac * res.opac * (1.0 - res.opac),
        color_logits=g_color * res.colors * (1.0 - res.colors),
        cam_rotation=g_cam_rot,
        cam_translation=g_cam_t,
        means2d_norm=np.linalg.norm(g_mean2d, axis=1),
    )


def backward(cloud: GaussianCloud, view, gt, lambda_ssim=0.2, background=(0.0, 0.0, 0.0), backend=None):
    """Loss of the render against ``gt`` and gradients for every parameter.

    Returns ``((total, l1, dssim), Gradients, rendered_image)``.
    """
    gt = np.asarray(gt, dtype=np.float64)
    intr = view.intrinsics
    if gt.shape != (intr.height, intr.width, 3):
        raise DimensionMismatch(f"ground truth {gt.shape} does not match camera {intr.width}x{intr.height}")
    res = rasterize(cloud, view, background, backend)
    values, g_img = loss_and_grad(res.image, gt, lambda_ssim)
    return values, render_backward(cloud, res, g_img), res.image


def perturb_camera(world_from_camera: Sim3Transform, d_rot, d_trans) -> Sim3Transform:
    """Apply a camera tangent step: ``p_cam <- exp(d_rot) p_cam + d_trans``."""
    from ..geometry import Rotation

    cfw = world_from_camera.inverse()
    dr = Rotation.from_rotvec(d_rot)
    new = Sim3Transform(1.0, dr @ cfw.rotation, dr.matrix @ cfw.translation + np.asarray(d_trans))
    return new.inverse()
