"""Mask-based cleanup of a trained gaussian cloud.

Every gaussian is projected into each view and the fraction of its 99%
footprint that lands inside the foreground mask is recorded. Gaussians that
straddle the silhouette are split once along their longest axis and re-voted;
whatever still falls mostly outside a mask is pruned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllPruned, InvalidConfig, NoViews
from .gsplat._accel import kernels
from .gsplat.cloud import GaussianCloud
from .gsplat.projection import CHI2_99, project_gaussians

THETA_LO = 0.1
THETA_HI = 0.49
THETA_KEEP = 0.5
SPLIT_OFFSET = 0.6


@dataclass(frozen=True)
class VoteRecord:
    gaussian_id: int
    fractions: tuple  # per view; None where the gaussian is culled
    views_seen: int

    @property
    def min_fraction(self):
        seen = [f for f in self.fractions if f is not None]
        return min(seen) if seen else 0.0


class VoteTable:
    """Per-gaussian, per-view in-mask fractions (NaN where culled)."""

    def __init__(self, fractions):
        self.fractions = np.asarray(fractions, dtype=np.float64)

    def __len__(self):
        return len(self.fractions)

    def __getitem__(self, i) -> VoteRecord:
        row = self.fractions[i]
        fr = tuple(None if np.isnan(f) else float(f) for f in row)
        return VoteRecord(int(i), fr, int(np.sum(~np.isnan(row))))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def views_seen(self):
        return np.sum(~np.isnan(self.fractions), axis=1)

    @property
    def min_fraction(self):
        """Smallest observed fraction; a gaussian no view sees scores 0."""
        f = np.where(np.isnan(self.fractions), np.inf, self.fractions)
        out = f.min(axis=1) if f.shape[1] else np.full(len(f), np.inf)
        return np.where(np.isinf(out), 0.0, out)


def _view_fractions(cloud: GaussianCloud, view, backend=None):
    mask = np.ascontiguousarray(np.asarray(view.mask, dtype=np.bool_))
    intr = view.intrinsics
    proj = project_gaussians(cloud, intr, view.world_from_camera.inverse())
    out = np.full(len(cloud), np.nan)
    idx = np.flatnonzero(proj.visible)
    if len(idx) == 0:
        return out
    means = np.ascontiguousarray(proj.means2d[idx])
    conics = np.ascontiguousarray(proj.conics[idx])
    reach = np.sqrt(CHI2_99 * proj.lam_max[idx])
    bbox = np.stack([
        np.floor(means[:, 0] - reach), np.ceil(means[:, 0] + reach),
        np.floor(means[:, 1] - reach), np.ceil(means[:, 1] + reach),
    ], axis=1).astype(np.int64)
    total, inside = kernels(backend).footprint_overlap(means, conics, bbox, mask, CHI2_99)
    frac = inside / np.maximum(total, 1)
    # footprint too small to cover a pixel center: use the pixel under the mean
    tiny = total == 0
    if np.any(tiny):
        u = np.floor(means[tiny, 0]).astype(np.int64)
        v = np.floor(means[tiny, 1]).astype(np.int64)
        ok = (u >= 0) & (u < mask.shape[1]) & (v >= 0) & (v < mask.shape[0])
        hit = np.zeros(len(u))
        hit[ok] = mask[v[ok], u[ok]]
        frac[tiny] = hit
    out[idx] = frac
    return out


def vote_labels(cloud: GaussianCloud, views, backend=None) -> VoteTable:
    """In-mask fraction of each gaussian's footprint in every view."""
    views = list(views)
    if not views:
        raise NoViews("label voting needs at least one view with a mask")
    cols = [_view_fractions(cloud, v, backend) for v in views]
    return VoteTable(np.stack(cols, axis=1) if len(cloud) else np.zeros((0, len(views))))


def _check_thresholds(theta_lo, theta_hi):
    if theta_lo > theta_hi:
        raise InvalidConfig(f"theta_lo ({theta_lo}) must not exceed theta_hi ({theta_hi})")


def split_longest_axis(cloud: GaussianCloud, offset=SPLIT_OFFSET) -> GaussianCloud:
    """Two children per gaussian at ``+-offset * s`` along the longest axis, that scale halved."""
    n = len(cloud)
    axis = np.argmax(cloud.log_scales, axis=1)
    rows = np.arange(n)
    direction = cloud.rotations()[rows, :, axis]
    step = offset * cloud.scales[rows, axis][:, None] * direction
    log_scales = cloud.log_scales.copy()
    log_scales[rows, axis] -= np.log(2.0)

    def child(sign):
        return GaussianCloud(
            cloud.means + sign * step, log_scales, cloud.quats.copy(),
            cloud.opacity_logits.copy(), cloud.color_logits.copy(), cloud.source.copy(),
        )

    a, b = child(1.0), child(-1.0)
    # interleave so each parent's children stay adjacent
    order = np.stack([rows, rows + n], axis=1).ravel()
    return GaussianCloud.concat([a, b]).subset(order)


def decompose_boundary(cloud: GaussianCloud, records: VoteTable, views, theta_lo=THETA_LO,
                       theta_hi=THETA_HI, backend=None) -> GaussianCloud:
    """Split straddling gaussians once and drop children that land outside.

    A gaussian straddles when its minimum in-mask fraction lies in
    ``[theta_lo, theta_hi]``. An empty interval disables decomposition.
    """
    _check_thresholds(theta_lo, theta_hi)
    if theta_hi <= theta_lo or len(cloud) == 0:
        return cloud.copy()
    f = records.min_fraction
    straddle = (f >= theta_lo) & (f <= theta_hi)
    if not np.any(straddle):
        return cloud.copy()
    children = split_longest_axis(cloud.subset(np.flatnonzero(straddle)))
    child_votes = vote_labels(children, views, backend)
    children = children.subset(np.flatnonzero(child_votes.min_fraction >= theta_lo))
    return GaussianCloud.concat([cloud.subset(np.flatnonzero(~straddle)), children])


def prune_background(cloud: GaussianCloud, records: VoteTable, theta_keep=THETA_KEEP) -> GaussianCloud:
    """Keep gaussians whose minimum observed in-mask fraction reaches ``theta_keep``."""
    keep = np.flatnonzero(records.min_fraction >= theta_keep)
    if len(keep) == 0:
        raise AllPruned(f"no gaussian reaches in-mask fraction {theta_keep}")
    return cloud.subset(keep)


@dataclass(frozen=True)
class SegmentReport:
    n_in: int
    n_straddling: int
    n_after_decompose: int
    n_out: int


def segment(cloud: GaussianCloud, views, theta_lo=THETA_LO, theta_hi=THETA_HI,
            theta_keep=THETA_KEEP, backend=None):
    """Full cleanup pass: vote, decompose straddlers, re-vote, prune.

    Returns ``(cleaned_cloud, SegmentReport)``.
    """
    _check_thresholds(theta_lo, theta_hi)
    views = list(views)
    votes = vote_labels(cloud, views, backend)
    f = votes.min_fraction
    n_straddle = int(np.sum((f >= theta_lo) & (f <= theta_hi))) if theta_hi > theta_lo else 0
    mid = decompose_boundary(cloud, votes, views, theta_lo, theta_hi, backend)
    out = prune_background(mid, vote_labels(mid, views, backend), theta_keep)
    return out, SegmentReport(len(cloud), n_straddle, len(mid), len(out))
