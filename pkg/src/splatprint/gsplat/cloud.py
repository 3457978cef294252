"""Gaussian scene representation and its checkpoint format."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ..errors import MalformedFile, SingularCovariance
from ..geometry import Rotation, quat_normalize, quat_to_matrix

CHECKPOINT_FORMAT = "splatprint-gs v1"
CHECKPOINT_FIELDS = (
    ["x", "y", "z"]
    + [f"log_scale_{i}" for i in range(3)]
    + ["rot_w", "rot_x", "rot_y", "rot_z"]
    + ["opacity_logit"]
    + [f"color_logit_{i}" for i in range(3)]
)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True, eq=False)
class Gaussian3D:
    mean: np.ndarray
    log_scales: np.ndarray
    rotation: Rotation
    opacity_logit: float
    color_logits: np.ndarray

    @property
    def scales(self):
        return np.exp(np.asarray(self.log_scales, dtype=np.float64))

    @property
    def opacity(self):
        return float(sigmoid(self.opacity_logit))

    @property
    def color(self):
        return sigmoid(self.color_logits)

    def covariance(self):
        r = self.rotation.matrix
        return (r * self.scales**2) @ r.T


def eval_gaussian(g: Gaussian3D, p):
    """Opacity-weighted Gaussian density ``alpha * exp(-0.5 d^T Sigma^-1 d)``."""
    s = g.scales
    if np.any(s < 1e-9):
        raise SingularCovariance(f"gaussian scale below 1e-9 mm: {s}")
    r = g.rotation.matrix
    # Sigma^-1 = R diag(1/s^2) R^T, evaluated in the gaussian's local frame
    d = (np.asarray(p, dtype=np.float64) - g.mean) @ r
    m = np.sum((d / s) ** 2, axis=-1)
    return g.opacity * np.exp(-0.5 * m)


@dataclass(eq=False)
class GaussianCloud:
    """Struct-of-arrays collection of gaussians."""

    means: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    opacity_logits: np.ndarray
    color_logits: np.ndarray
    source: np.ndarray = None  # (N, 2) int: (view, pixel) provenance, -1 when unknown

    def __post_init__(self):
        n = len(self.means)
        self.means = np.asarray(self.means, dtype=np.float64).reshape(n, 3)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.color_logits = np.asarray(self.color_logits, dtype=np.float64).reshape(n, 3)
        if self.source is None:
            self.source = np.full((n, 2), -1, dtype=np.int64)
        self.source = np.asarray(self.source, dtype=np.int64).reshape(n, 2)

    def __len__(self):
        return len(self.means)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)))

    @classmethod
    def from_points(cls, points, colors, scale=None, opacity=0.5, source=None, knn=3):
        """Isotropic gaussians at ``points``; default scale is the mean k-NN distance."""
        points = np.asarray(points, dtype=np.float64)
        n = len(points)
        if scale is None:
            k = min(knn + 1, n)
            if k > 1:
                dist, _ = cKDTree(points).query(points, k=k)
                s = np.clip(dist[:, 1:].mean(axis=1), 1e-4, None)
            else:
                s = np.full(n, 0.1)
        else:
            s = np.broadcast_to(np.asarray(scale, dtype=np.float64), (n,))
        quats = np.zeros((n, 4))
        quats[:, 0] = 1.0
        col = np.clip(np.asarray(colors, dtype=np.float64), 0.01, 0.99)
        return cls(
            means=points,
            log_scales=np.repeat(np.log(s)[:, None], 3, axis=1),
            quats=quats,
            opacity_logits=np.full(n, float(logit(opacity))),
            color_logits=logit(col),
            source=source,
        )

    @property
    def scales(self):
        return np.exp(self.log_scales)

    @property
    def opacities(self):
        return sigmoid(self.opacity_logits)

    @property
    def colors(self):
        return sigmoid(self.color_logits)

    def rotations(self):
        return quat_to_matrix(self.quats)

    def covariances(self):
        r = self.rotations()
        m = r * self.scales[:, None, :]
        return m @ np.swapaxes(m, 1, 2)

    def gaussian(self, i) -> Gaussian3D:
        return Gaussian3D(
            self.means[i].copy(),
            self.log_scales[i].copy(),
            Rotation(self.quats[i]),
            float(self.opacity_logits[i]),
            self.color_logits[i].copy(),
        )

    def copy(self):
        return GaussianCloud(
            self.means.copy(), self.log_scales.copy(), self.quats.copy(),
            self.opacity_logits.copy(), self.color_logits.copy(), self.source.copy(),
        )

    def subset(self, idx):
        idx = np.asarray(idx)
        return GaussianCloud(
            self.means[idx], self.log_scales[idx], self.quats[idx],
            self.opacity_logits[idx], self.color_logits[idx], self.source[idx],
        )

    @staticmethod
    def concat(clouds):
        clouds = list(clouds)
        return GaussianCloud(
            np.concatenate([c.means for c in clouds]),
            np.concatenate([c.log_scales for c in clouds]),
            np.concatenate([c.quats for c in clouds]),
            np.concatenate([c.opacity_logits for c in clouds]),
            np.concatenate([c.color_logits for c in clouds]),
            np.concatenate([c.source for c in clouds]),
        )

    def normalized(self):
        out = self.copy()
        out.quats = quat_normalize(out.quats)
        return out

    def is_finite(self):
        return all(
            np.all(np.isfinite(a))
            for a in (self.means, self.log_scales, self.quats, self.opacity_logits, self.color_logits)
        )

    def as_array(self):
        return np.concatenate(
            [self.means, self.log_scales, self.quats, self.opacity_logits[:, None], self.color_logits], axis=1
        )

    def equals(self, other, atol=0.0):
        if len(self) != len(other):
            return False
        return bool(np.allclose(self.as_array(), other.as_array(), rtol=0.0, atol=atol))


def save_checkpoint(path, cloud: GaussianCloud):
    """ASCII PLY with all gaussian parameters at full double precision."""
    from ..io import write_ply

    arr = cloud.as_array()
    extra = {name: arr[:, j] for j, name in enumerate(CHECKPOINT_FIELDS) if j >= 3}
    extra["source_view"] = cloud.source[:, 0].astype(np.float64)
    extra["source_pixel"] = cloud.source[:, 1].astype(np.float64)
    write_ply(path, cloud.means, None, extra=extra, comments=[CHECKPOINT_FORMAT], float_fmt="%.17g")


def load_checkpoint(path) -> GaussianCloud:
    from ..io import read_ply

    props, comments = read_ply(path)
    if CHECKPOINT_FORMAT not in comments:
        raise MalformedFile(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint", 0)
    missing = [f for f in CHECKPOINT_FIELDS if f not in props]
    if missing:
        raise MalformedFile(f"{path}: missing fields {missing}", 0)
    arr = np.stack([props[f] for f in CHECKPOINT_FIELDS], axis=1)
    source = None
    if "source_view" in props:
        source = np.stack([props["source_view"], props["source_pixel"]], axis=1).astype(np.int64)
    return GaussianCloud(arr[:, 0:3], arr[:, 3:6], arr[:, 6:10], arr[:, 10], arr[:, 11:14], source)
