"""Descriptor-only matching: mutual nearest neighbour, ratio test, Hamming."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from . import _kernels
from .errors import DimensionMismatch, ValidationError
from .features import MatchSet

METRICS = ("euclidean", "cosine", "hamming")


def _as_words(packed: np.ndarray) -> np.ndarray:
    p = np.ascontiguousarray(packed, dtype=np.uint8)
    if p.shape[-1] % 8:
        p = np.pad(p, [(0, 0)] * (p.ndim - 1) + [(0, 8 - p.shape[-1] % 8)])
    return np.ascontiguousarray(p.view(np.uint64))


def hamming(a, b) -> int:
    a = np.asarray(a, dtype=np.uint8).reshape(1, -1)
    b = np.asarray(b, dtype=np.uint8).reshape(1, -1)
    if a.shape != b.shape:
        raise DimensionMismatch("bit strings differ in length")
    return int(_kernels.hamming_matrix(_as_words(a), _as_words(b))[0, 0])


def distance_matrix(desc_a, desc_b, metric: str = "euclidean") -> np.ndarray:
    if metric not in METRICS:
        raise ValidationError(f"unknown metric {metric!r}")
    a, b = np.asarray(desc_a), np.asarray(desc_b)
    if a.ndim != 2 or b.ndim != 2 or len(a) == 0 or len(b) == 0:
        raise ValidationError("descriptor lists must be nonempty 2-D arrays")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"descriptor dims differ: {a.shape[1]} vs {b.shape[1]}")
    if metric == "hamming":
        if a.dtype != np.uint8 or b.dtype != np.uint8:
            raise ValidationError("hamming distance needs packed binary descriptors")
        return _kernels.hamming_matrix(_as_words(a), _as_words(b)).astype(np.float64)
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    if metric == "cosine":
        na = np.linalg.norm(a, axis=1, keepdims=True)
        nb = np.linalg.norm(b, axis=1, keepdims=True)
        return 1.0 - (a / np.maximum(na, 1e-300)) @ (b / np.maximum(nb, 1e-300)).T
    # blocked to bound the temporary size
    out = np.empty((len(a), len(b)))
    for s in range(0, len(a), 1024):
        out[s:s + 1024] = cdist(a[s:s + 1024], b)
    return out


def _mutual(dist: np.ndarray, keep_rows: np.ndarray | None = None) -> MatchSet:
    nn_ab = dist.argmin(1)  # first index on ties
    nn_ba = dist.argmin(0)
    i = np.arange(dist.shape[0])
    ok = nn_ba[nn_ab] == i
    if keep_rows is not None:
        ok &= keep_rows
    i = i[ok]
    j = nn_ab[ok]
    dmax = dist.max()
    conf = 1.0 - dist[i, j] / dmax if dmax > 0 else np.ones(len(i))
    return MatchSet(np.c_[i, j], conf)


def mutual_nn(desc_a, desc_b, metric: str = "euclidean") -> MatchSet:
    """Pairs that are each other's nearest neighbour; confidence ``1 - d / d_max``."""
    return _mutual(distance_matrix(desc_a, desc_b, metric))


def ratio_test(desc_a, desc_b, metric: str = "euclidean", ratio: float = 0.8) -> MatchSet:
    """Lowe's ratio test followed by the mutual check.

    A query survives when ``d1 <= ratio * d2``; at ``ratio = 1`` this keeps
    every query, so the result equals :func:`mutual_nn`.
    """
    if not 0 < ratio <= 1:
        raise ValidationError("ratio must lie in (0, 1]")
    dist = distance_matrix(desc_a, desc_b, metric)
    if dist.shape[1] < 2:
        raise ValidationError("ratio test needs at least two candidates")
    two = np.partition(dist, 1, axis=1)[:, :2]
    d1, d2 = two[:, 0], two[:, 1]
    keep = d1 <= ratio * d2
    if ratio < 1:
        keep &= d1 < d2  # 0/0 and exact ties are ambiguous
    return _mutual(dist, keep)
