"""Random inputs shared by the matcher tests and the acceptance gate."""

import numpy as np

from matchkit.features import FeatureSet, Keypoints
from matchkit.geometry import Homography
from matchkit.gtlabel import PairSupervision, label_correspondences
from matchkit.matcher import SourceSpec, TrainingPair

SIZE = (64, 48)
SOURCES = {"dsift": SourceSpec(128), "brief": SourceSpec(256, "binary"), "don": SourceSpec(49, "patch")}


def random_features(rng, n, source="dsift", size=SIZE):
    kps = Keypoints(rng.uniform(0, 1, (n, 2)) * (np.array(size) - 1), 1.0, rng.uniform(size=n), "rand")
    if source == "brief":
        return FeatureSet(kps, rng.integers(0, 256, (n, 32), dtype=np.uint8), source, size, binary=True)
    if source == "don":
        p = rng.normal(size=(n, 49))
        return FeatureSet(kps, p, source, size, patches=p)
    d = np.abs(rng.normal(size=(n, 128)))
    return FeatureSet(kps, d / np.linalg.norm(d, axis=1, keepdims=True), source, size)


def random_pair(rng, m, n, src_a="dsift", src_b="dsift"):
    fa, fb = random_features(rng, m, src_a), random_features(rng, n, src_b)
    err = rng.uniform(0, 10, (m, n))
    lab = label_correspondences(err, PairSupervision(Homography.identity(), 3.0, 4.0))
    if len(lab.matches) == 0 and len(lab.negatives_a) == 0 and len(lab.negatives_b) == 0:
        err[0, 0] = 0.0
        lab = label_correspondences(err, PairSupervision(Homography.identity(), 3.0, 4.0))
    return TrainingPair(fa, fb, lab, "rand")


def two_view_scene(seed, n=80, noise=0.5, outlier_frac=0.25, f=230.0, size=256):
    """Random points in front of two cameras; the first ``outlier_frac`` of B is replaced by uniform noise.

    Returns (pts_a, pts_b, pose, K).
    """
    from matchkit.geometry import CameraPose, Intrinsics, rotation_from_axis_angle

    rng = np.random.default_rng(seed)
    c = (size - 1) / 2
    K = Intrinsics(f, f, c, c)
    R = rotation_from_axis_angle(rng.normal(size=3), rng.uniform(5, 15))
    t = rng.normal(size=3)
    t /= np.linalg.norm(t)
    X = np.c_[rng.uniform(-1, 1, (n, 2)), np.ones(n)] * rng.uniform(3, 8, (n, 1))
    Xb = X @ R.T + 1.5 * t
    pa = X[:, :2] / X[:, 2:] * f + c + rng.normal(0, noise, (n, 2))
    pb = Xb[:, :2] / Xb[:, 2:] * f + c + rng.normal(0, noise, (n, 2))
    k = int(outlier_frac * n)
    pb[:k] = rng.uniform(0, size, (k, 2))
    return pa, pb, CameraPose(R, t), K
