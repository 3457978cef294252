"""Perspective projection of 3D gaussians to screen-space splats, with its adjoint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import CameraIntrinsics, Sim3Transform, quat_to_matrix

NEAR_PLANE = 0.1
DILATION = 0.3
CHI2_99 = 9.210340371976182  # 99% quantile of chi-square with 2 dof


@dataclass(frozen=True, eq=False)
class Splat2D:
    mean: np.ndarray
    cov: np.ndarray
    depth: float


@dataclass(eq=False)
class Projection:
    """Per-gaussian screen-space quantities plus the intermediates the adjoint needs."""

    visible: np.ndarray  # (N,) bool
    means2d: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 2, 2)
    conics: np.ndarray  # (N, 3) a, b, c of [[a, b], [b, c]]
    depths: np.ndarray
    lam_max: np.ndarray  # largest eigenvalue of cov2d
    p_cam: np.ndarray
    jac: np.ndarray  # (N, 2, 3)
    tmat: np.ndarray  # J @ W
    cov3d: np.ndarray
    rmat: np.ndarray
    scales: np.ndarray
    w_rot: np.ndarray  # camera_from_world rotation
    intrinsics: CameraIntrinsics


def camera_of(view):
    """``(intrinsics, camera_from_world)`` for a CameraView-like object."""
    return view.intrinsics, view.world_from_camera.inverse()


def project_gaussians(cloud, intr: CameraIntrinsics, cam_from_world: Sim3Transform) -> Projection:
    w_rot = cam_from_world.rotation.matrix
    t = cam_from_world.translation
    f = intr.focal_px
    p = cloud.means @ w_rot.T + t
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    front = z > NEAR_PLANE
    zs = np.where(front, z, 1.0)

    rmat = quat_to_matrix(cloud.quats) if len(cloud) else np.zeros((0, 3, 3))
    scales = np.exp(cloud.log_scales)
    m = rmat * scales[:, None, :]
    cov3d = m @ np.swapaxes(m, 1, 2)

    jac = np.zeros((len(p), 2, 3))
    jac[:, 0, 0] = f / zs
    jac[:, 0, 2] = -f * x / zs**2
    jac[:, 1, 1] = f / zs
    jac[:, 1, 2] = -f * y / zs**2
    tmat = jac @ w_rot
    cov2d = tmat @ cov3d @ np.swapaxes(tmat, 1, 2)
    cov2d[:, 0, 0] += DILATION
    cov2d[:, 1, 1] += DILATION

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(0.0, mid * mid - det))
    means2d = np.stack([f * x / zs + intr.cx, f * y / zs + intr.cy], axis=1)
    r99 = np.sqrt(CHI2_99 * lam)
    inside = (
        (means2d[:, 0] + r99 > 0)
        & (means2d[:, 0] - r99 < intr.width)
        & (means2d[:, 1] + r99 > 0)
        & (means2d[:, 1] - r99 < intr.height)
    )
    visible = front & (det > 0) & inside
    return Projection(
        visible=visible, means2d=means2d, cov2d=cov2d, conics=conics, depths=z, lam_max=lam,
        p_cam=p, jac=jac, tmat=tmat, cov3d=cov3d, rmat=rmat, scales=scales, w_rot=w_rot,
        intrinsics=intr,
    )


def project_gaussian(g, view):
    """Screen-space splat of a single gaussian, or ``None`` when culled."""
    from .cloud import GaussianCloud

    cloud = GaussianCloud(
        g.mean[None], np.asarray(g.log_scales)[None], g.rotation.quat[None],
        np.array([g.opacity_logit]), np.asarray(g.color_logits)[None],
    )
    intr, cfw = camera_of(view)
    proj = project_gaussians(cloud, intr, cfw)
    if not proj.visible[0]:
        return None
    return Splat2D(proj.means2d[0].copy(), proj.cov2d[0].copy(), float(proj.depths[0]))


def _tangent_from_matrix_grad(grad_r, r):
    """Gradient w.r.t. a left tangent perturbation ``R <- exp(phi) R``."""
    a = grad_r @ np.swapaxes(r, -1, -2)
    return np.stack(
        [a[..., 2, 1] - a[..., 1, 2], a[..., 0, 2] - a[..., 2, 0], a[..., 1, 0] - a[..., 0, 1]], axis=-1
    )


def projection_backward(proj: Projection, g_means2d, g_conics):
    """Chain screen-space gradients back to 3D parameters and the camera.

    ``g_conics`` holds gradients for ``(a, b, c)`` where ``b`` stands for both
    off-diagonal entries. Returns ``(g_means, g_log_scales, g_rot_tangent,
    g_cam_rot, g_cam_trans)``.
    """
    f = proj.intrinsics.focal_px
    vis = proj.visible
    n = len(vis)
    p = proj.p_cam
    x, y = p[:, 0], p[:, 1]
    z = np.where(vis, p[:, 2], 1.0)

    a, b, c = proj.conics[:, 0], proj.conics[:, 1], proj.conics[:, 2]
    conic = np.empty((n, 2, 2))
    conic[:, 0, 0], conic[:, 0, 1], conic[:, 1, 0], conic[:, 1, 1] = a, b, b, c
    gk = np.empty((n, 2, 2))
    gk[:, 0, 0] = g_conics[:, 0]
    gk[:, 0, 1] = gk[:, 1, 0] = 0.5 * g_conics[:, 1]
    gk[:, 1, 1] = g_conics[:, 2]
    gcov = -conic @ gk @ conic

    tmat = proj.tmat
    g_sigma = np.swapaxes(tmat, 1, 2) @ gcov @ tmat
    g_t = 2.0 * gcov @ tmat @ proj.cov3d
    g_j = g_t @ proj.w_rot.T
    g_w = np.einsum("nji,njk->ik", proj.jac, g_t * vis[:, None, None])

    g_p = np.zeros((n, 3))
    inv_z2 = 1.0 / z**2
    g_p[:, 0] += -f * inv_z2 * g_j[:, 0, 2]
    g_p[:, 1] += -f * inv_z2 * g_j[:, 1, 2]
    g_p[:, 2] += (
        -f * inv_z2 * (g_j[:, 0, 0] + g_j[:, 1, 1])
        + 2 * f * x / z**3 * g_j[:, 0, 2]
        + 2 * f * y / z**3 * g_j[:, 1, 2]
    )
    gu, gv = g_means2d[:, 0], g_means2d[:, 1]
    g_p[:, 0] += gu * f / z
    g_p[:, 1] += gv * f / z
    g_p[:, 2] += -(gu * f * x + gv * f * y) * inv_z2
    g_p *= vis[:, None]

    g_means = g_p @ proj.w_rot
    g_cam_trans = g_p.sum(axis=0)
    g_cam_rot = np.cross(p * vis[:, None], g_p).sum(axis=0) + _tangent_from_matrix_grad(g_w, proj.w_rot)

    g_m = 2.0 * g_sigma @ (proj.rmat * proj.scales[:, None, :])
    g_m *= vis[:, None, None]
    g_s = np.einsum("nik,nik->nk", proj.rmat, g_m)
    g_log_scales = g_s * proj.scales
    g_r = g_m * proj.scales[:, None, :]
    g_rot = _tangent_from_matrix_grad(g_r, proj.rmat)
    return g_means, g_log_scales, g_rot, g_cam_rot, g_cam_trans
