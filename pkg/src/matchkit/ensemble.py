"""One matcher over keypoints merged from several detectors."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .describe import DescriptorMap
from .detect import DetectorConfig, as_image, detect
from .errors import ValidationError
from .features import FeatureSet, Keypoints
from .pipeline import DescriptorSource, describe_keypoints


@dataclass(frozen=True)
class EnsembleConfig:
    detectors: tuple[DetectorConfig, ...]
    per_detector_budget: int | tuple[int, ...] = 1024
    cross_nms_radius: float = 3.0
    descriptor_source: DescriptorSource = field(default_factory=DescriptorSource)

    def __post_init__(self):
        object.__setattr__(self, "detectors", tuple(self.detectors))
        if not self.detectors:
            raise ValidationError("ensemble needs at least one detector")
        if min(self.budgets()) < 1:
            raise ValidationError("budgets must be >= 1")
        if self.cross_nms_radius < 0:
            raise ValidationError("cross_nms_radius must be >= 0")

    def budgets(self) -> tuple[int, ...]:
        b = self.per_detector_budget
        if isinstance(b, (int, np.integer)):
            return (int(b),) * len(self.detectors)
        if len(b) != len(self.detectors):
            raise ValidationError("one budget per detector is required")
        return tuple(int(x) for x in b)


def rank_scores(kps: Keypoints) -> np.ndarray:
    """1 for the best keypoint down to 1/n for the worst, by the detector's own order."""
    n = len(kps)
    r = np.empty(n)
    r[kps.score_order()] = 1.0 - np.arange(n) / max(n, 1)
    return r


def merge_keypoints(img, cfg: EnsembleConfig) -> Keypoints:
    """Run every detector to its budget, then suppress across detectors by rank."""
    img = as_image(img)
    parts, ranks, which = [], [], []
    for k, (det, budget) in enumerate(zip(cfg.detectors, cfg.budgets())):
        kps = detect(img, replace(det, max_keypoints=budget))
        parts.append(kps)
        ranks.append(rank_scores(kps))
        which.append(np.full(len(kps), k))
    kps = Keypoints.concat(parts)
    if not len(kps):
        return kps
    rank = np.concatenate(ranks)
    which = np.concatenate(which)
    # ties on rank go to the earlier detector, then raster order
    order = np.lexsort((kps.xy[:, 0], kps.xy[:, 1], which, -rank))
    if cfg.cross_nms_radius > 0:
        keep = _kernels.greedy_nms(np.ascontiguousarray(kps.xy), order.astype(np.int64), float(cfg.cross_nms_radius))
    else:
        keep = order
    return kps[np.asarray(keep)]


def merge_features(img, cfg: EnsembleConfig, dmap: DescriptorMap | None = None) -> FeatureSet:
    """Merged keypoints, all described by the single configured source."""
    return describe_keypoints(img, merge_keypoints(img, cfg), cfg.descriptor_source, dmap)
