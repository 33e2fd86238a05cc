"""Glue from images to labelled feature pairs: detect, describe, label."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .describe import (BRIEF_SUPPORT, DescriptorMap, binary_descriptors, brief_fits, dense_descriptor_map,
                       extract_patches, in_grid, sample_descriptors)
from .detect import DetectorConfig, as_image, detect, top_k
from .errors import ValidationError
from .features import FeatureSet, Keypoints
from .gtlabel import PairSupervision, labels_for_pair
from .matcher import SourceSpec, TrainingPair

SOURCE_KINDS = ("dsift", "brief", "don")


@dataclass(frozen=True)
class DescriptorSource:
    """Where descriptors come from: dense SIFT-like map, BRIEF bits or raw patches."""

    kind: str = "dsift"
    stride: int = 2
    patch_size: int = 15

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValidationError(f"unknown descriptor source {self.kind!r}")

    @property
    def source_id(self) -> str:
        return self.kind

    def spec(self) -> SourceSpec:
        if self.kind == "dsift":
            return SourceSpec(128, "real")
        if self.kind == "brief":
            return SourceSpec(256, "binary")
        return SourceSpec(self.patch_size ** 2, "patch")

    def dense_map(self, img) -> DescriptorMap | None:
        return dense_descriptor_map(img, self.stride, self.source_id) if self.kind == "dsift" else None


def describe_keypoints(img, kps: Keypoints, source: DescriptorSource, dmap: DescriptorMap | None = None) -> FeatureSet:
    """Describe ``kps``; keypoints the source cannot describe are dropped."""
    img = as_image(img)
    h, w = img.shape
    if source.kind == "dsift":
        dmap = dmap if dmap is not None else source.dense_map(img)
        kps = kps[in_grid(dmap, kps.xy)]
        desc = sample_descriptors(dmap, kps.xy).astype(np.float32)
        return FeatureSet(kps, desc, source.source_id, (w, h))
    if source.kind == "brief":
        keep = np.array([brief_fits(img.shape, kps.xy[i], float(kps.scale[i])) for i in range(len(kps))], bool)
        kps = kps[keep]
        return FeatureSet(kps, binary_descriptors(img, kps), source.source_id, (w, h), binary=True)
    r = source.patch_size // 2
    c = np.rint(kps.xy)
    keep = (c[:, 0] >= r) & (c[:, 1] >= r) & (c[:, 0] <= w - 1 - r) & (c[:, 1] <= h - 1 - r)
    kps = kps[keep]
    patches = extract_patches(img, kps.xy, source.patch_size)
    return FeatureSet(kps, patches, source.source_id, (w, h), patches=patches)


def build_features(img, det: DetectorConfig, source: DescriptorSource, dmap: DescriptorMap | None = None,
                   clutter: Callable[[Keypoints], Keypoints] | None = None) -> FeatureSet:
    kps = detect(img, det)
    if clutter is not None:
        kps = top_k(clutter(kps), det.max_keypoints)
    return describe_keypoints(img, kps, source, dmap)


def make_training_pair(pair_id: str, img_a, img_b, sup: PairSupervision, det: DetectorConfig,
                       source: DescriptorSource, dmaps=(None, None), clutter=None) -> TrainingPair:
    fa = build_features(img_a, det, source, dmaps[0], clutter)
    fb = build_features(img_b, det, source, dmaps[1], clutter)
    if len(fa) == 0 or len(fb) == 0:
        raise ValidationError(f"pair {pair_id}: no describable keypoints")
    return TrainingPair(fa, fb, labels_for_pair(fa, fb, sup), pair_id)


__all__ = ["DescriptorSource", "describe_keypoints", "build_features", "make_training_pair", "BRIEF_SUPPORT"]
