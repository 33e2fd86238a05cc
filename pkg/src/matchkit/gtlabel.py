"""Ground-truth correspondences from a homography or from pose and depth.

A pair ``(i, j)`` is a match when its reprojection error is the unique
minimum of row ``i`` and of column ``j`` and below the match threshold.
Unmatched keypoints whose best error is at least the negative threshold
are confident negatives; everything else is ignored by the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .detect import count_nearby_pairs
from .errors import ValidationError
from .features import FeatureSet, Keypoints
from .geometry import CameraPose, Homography, Intrinsics, reproject_many, warp_points


@dataclass(frozen=True)
class PoseDepth:
    pose: CameraPose  # A -> B
    k_a: Intrinsics
    k_b: Intrinsics
    depth_a: np.ndarray
    depth_b: np.ndarray

    def swapped(self) -> "PoseDepth":
        return PoseDepth(self.pose.inverse(), self.k_b, self.k_a, self.depth_b, self.depth_a)


@dataclass(frozen=True)
class PairSupervision:
    transform: Homography | PoseDepth
    match_threshold: float = 3.0
    negative_threshold: float | None = None  # default: 2 * match_threshold
    one_way: bool = False

    def __post_init__(self):
        if not self.match_threshold > 0:
            raise ValidationError("match_threshold must be positive")
        if self.negative_threshold is None:
            object.__setattr__(self, "negative_threshold", 2.0 * self.match_threshold)
        if self.negative_threshold < self.match_threshold:
            raise ValidationError("negative_threshold must be >= match_threshold")

    def swapped(self) -> "PairSupervision":
        t = self.transform
        t = t.inverse() if isinstance(t, Homography) else t.swapped()
        return PairSupervision(t, self.match_threshold, self.negative_threshold, self.one_way)


@dataclass
class GTLabels:
    matches: np.ndarray  # (K, 2) int
    negatives_a: np.ndarray
    negatives_b: np.ndarray
    ignored_a: np.ndarray
    ignored_b: np.ndarray
    num_a: int
    num_b: int
    diagnostics: dict = field(default_factory=dict)

    def transposed(self) -> "GTLabels":
        m = self.matches[:, ::-1].copy()
        m = m[np.lexsort((m[:, 1], m[:, 0]))] if len(m) else m
        return GTLabels(m, self.negatives_b, self.negatives_a, self.ignored_b, self.ignored_a,
                        self.num_b, self.num_a, dict(self.diagnostics))

    def match_dict(self) -> dict[int, int]:
        return {int(i): int(j) for i, j in self.matches}


def sample_depth(depth: np.ndarray, xy) -> np.ndarray:
    """Depth at sub-pixel positions by bilinear interpolation of inverse depth.

    Inverse depth is affine in pixel coordinates on a plane, so this is exact
    inside planar regions. Any invalid (0) neighbour gives NaN.
    """
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    h, w = depth.shape
    out = np.full(len(xy), np.nan)
    x, y = xy[:, 0], xy[:, 1]
    ok = (x >= 0) & (y >= 0) & (x <= w - 1) & (y <= h - 1)
    if not ok.any():
        return out
    x, y = x[ok], y[ok]
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    d = np.stack([depth[y0, x0], depth[y0, x1], depth[y1, x0], depth[y1, x1]])
    valid = np.all(d > 0, axis=0)
    inv = 1.0 / np.where(d > 0, d, 1.0)
    iv = inv[0] * (1 - fx) * (1 - fy) + inv[1] * fx * (1 - fy) + inv[2] * (1 - fx) * fy + inv[3] * fx * fy
    res = np.where(valid, 1.0 / iv, np.nan)
    out[ok] = res
    return out


def _project_with_depth(xy, depth_src, k_src, k_dst, pose, dst_shape) -> np.ndarray:
    d = sample_depth(depth_src, xy)
    uv = reproject_many(xy, d, k_src, k_dst, pose)
    h, w = dst_shape
    oob = ~((uv[:, 0] >= 0) & (uv[:, 0] <= w - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= h - 1))
    uv[oob] = np.nan
    return uv


def _dist_or_inf(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    bad = ~np.all(np.isfinite(p), axis=1)
    e = cdist(np.where(bad[:, None], 0.0, p), q)
    e[bad] = np.inf
    return e


def reprojection_error_matrix(kps_a: Keypoints, kps_b: Keypoints, sup: PairSupervision) -> np.ndarray:
    a = np.asarray(kps_a.xy if isinstance(kps_a, Keypoints) else kps_a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(kps_b.xy if isinstance(kps_b, Keypoints) else kps_b, dtype=np.float64).reshape(-1, 2)
    t = sup.transform
    if isinstance(t, Homography):
        return cdist(warp_points(t, a), b) if len(a) and len(b) else np.zeros((len(a), len(b)))
    fwd = _dist_or_inf(_project_with_depth(a, t.depth_a, t.k_a, t.k_b, t.pose, t.depth_b.shape), b)
    if sup.one_way:
        return fwd
    bwd = _dist_or_inf(_project_with_depth(b, t.depth_b, t.k_b, t.k_a, t.pose.inverse(), t.depth_a.shape), a)
    return np.maximum(fwd, bwd.T)


def label_correspondences(err, sup: PairSupervision) -> GTLabels:
    err = np.asarray(err, dtype=np.float64)
    m, n = err.shape
    empty = np.empty(0, dtype=np.int64)
    if m == 0 or n == 0:
        return GTLabels(np.empty((0, 2), dtype=np.int64), np.arange(m), np.arange(n), empty, empty, m, n)
    row_min = err.min(1)
    col_min = err.min(0)
    row_arg = err.argmin(1)
    col_arg = err.argmin(0)
    row_unique = (err == row_min[:, None]).sum(1) == 1
    col_unique = (err == col_min[None, :]).sum(0) == 1
    i = np.arange(m)
    j = row_arg
    ok = row_unique & col_unique[j] & (col_arg[j] == i) & (row_min < sup.match_threshold)
    matches = np.c_[i[ok], j[ok]].astype(np.int64)
    matched_a = np.zeros(m, dtype=bool)
    matched_b = np.zeros(n, dtype=bool)
    matched_a[matches[:, 0]] = True
    matched_b[matches[:, 1]] = True
    neg_a = ~matched_a & (row_min >= sup.negative_threshold)
    neg_b = ~matched_b & (col_min >= sup.negative_threshold)
    return GTLabels(
        matches,
        np.flatnonzero(neg_a),
        np.flatnonzero(neg_b),
        np.flatnonzero(~matched_a & ~neg_a),
        np.flatnonzero(~matched_b & ~neg_b),
        m,
        n,
    )


def labels_for_pair(feat_a: FeatureSet, feat_b: FeatureSet, sup: PairSupervision,
                    clutter_radius: float = 3.0) -> GTLabels:
    ka = feat_a.keypoints if isinstance(feat_a, FeatureSet) else feat_a
    kb = feat_b.keypoints if isinstance(feat_b, FeatureSet) else feat_b
    if len(ka) == 0 or len(kb) == 0:
        raise ValidationError("feature sets must be nonempty")
    labels = label_correspondences(reprojection_error_matrix(ka, kb, sup), sup)
    labels.diagnostics = {
        "nearby_pairs_a": count_nearby_pairs(ka, clutter_radius),
        "nearby_pairs_b": count_nearby_pairs(kb, clutter_radius),
    }
    return labels
