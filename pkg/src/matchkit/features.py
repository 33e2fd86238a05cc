"""Keypoint containers shared by detection, description and matching."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np


class Keypoint(NamedTuple):
    x: float
    y: float
    scale: float = 1.0
    score: float = 0.0
    detector_id: str = "unknown"


@dataclass
class Keypoints:
    """Column storage for a list of keypoints in level-0 pixel coordinates."""

    xy: np.ndarray
    scale: np.ndarray
    score: np.ndarray
    detector_id: np.ndarray

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        n = len(self.xy)
        self.scale = np.broadcast_to(np.asarray(self.scale, dtype=np.float64), (n,)).copy()
        self.score = np.broadcast_to(np.asarray(self.score, dtype=np.float64), (n,)).copy()
        self.detector_id = np.broadcast_to(np.asarray(self.detector_id, dtype=object), (n,)).copy()

    def __len__(self) -> int:
        return len(self.xy)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return Keypoint(float(self.xy[idx, 0]), float(self.xy[idx, 1]), float(self.scale[idx]),
                            float(self.score[idx]), str(self.detector_id[idx]))
        return Keypoints(self.xy[idx], self.scale[idx], self.score[idx], self.detector_id[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def empty(cls) -> "Keypoints":
        return cls(np.empty((0, 2)), np.empty(0), np.empty(0), np.empty(0, dtype=object))

    @classmethod
    def from_list(cls, kps: Iterable) -> "Keypoints":
        kps = [k if isinstance(k, Keypoint) else Keypoint(*k) for k in kps]
        if not kps:
            return cls.empty()
        return cls(
            np.array([[k.x, k.y] for k in kps]),
            np.array([k.scale for k in kps]),
            np.array([k.score for k in kps]),
            np.array([k.detector_id for k in kps], dtype=object),
        )

    def to_list(self) -> list[Keypoint]:
        return list(self)

    @staticmethod
    def concat(parts: list["Keypoints"]) -> "Keypoints":
        parts = [p for p in parts if len(p)]
        if not parts:
            return Keypoints.empty()
        return Keypoints(
            np.concatenate([p.xy for p in parts]),
            np.concatenate([p.scale for p in parts]),
            np.concatenate([p.score for p in parts]),
            np.concatenate([p.detector_id for p in parts]),
        )

    def score_order(self) -> np.ndarray:
        """Indices by descending score, ties by ascending (y, x)."""
        return np.lexsort((self.xy[:, 0], self.xy[:, 1], -self.score))


@dataclass
class FeatureSet:
    """Keypoints plus their descriptors for one image.

    ``descriptors`` is (N, D) float for real sources or (N, 32) uint8 of packed
    bits for binary ones. ``patches`` holds raw P×P crops when the descriptor
    is produced by a trainable patch embedding inside the matcher.
    """

    keypoints: Keypoints
    descriptors: np.ndarray
    source_id: str
    image_size: tuple[int, int]  # (width, height)
    binary: bool = False
    patches: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.keypoints)

    def subset(self, idx) -> "FeatureSet":
        return FeatureSet(
            self.keypoints[idx],
            self.descriptors[idx],
            self.source_id,
            self.image_size,
            self.binary,
            None if self.patches is None else self.patches[idx],
        )

    def permuted(self, perm) -> "FeatureSet":
        return self.subset(np.asarray(perm))


@dataclass
class MatchSet:
    """Hard one-to-one matches ``(i, j)`` with a confidence in [0, 1]."""

    pairs: np.ndarray  # (K, 2) int64
    confidence: np.ndarray  # (K,)

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)

    def __len__(self) -> int:
        return len(self.pairs)

    @classmethod
    def empty(cls) -> "MatchSet":
        return cls(np.empty((0, 2), dtype=np.int64), np.empty(0))

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.pairs}
