import numpy as np
import pytest

from matchkit.detect import DetectorConfig, count_nearby_pairs, detect
from matchkit.ensemble import EnsembleConfig, merge_features, merge_keypoints, rank_scores
from matchkit.errors import ValidationError
from matchkit.features import Keypoints
from matchkit.pipeline import DescriptorSource
from matchkit.synthgen import TextureConfig, gen_texture

CORNER = DetectorConfig("corner", single_scale=True, min_side=64)
BLOB = DetectorConfig("blob", single_scale=True, min_side=64)


@pytest.fixture(scope="module")
def img():
    return gen_texture(TextureConfig(width=128, height=128), seed=21)


def test_rank_scores():
    kps = Keypoints(np.zeros((4, 2)) + np.arange(4)[:, None], 1, [0.1, 0.9, 0.5, 0.3], "x")
    assert rank_scores(kps).tolist() == [0.25, 1.0, 0.75, 0.5]


def test_merge_two_detectors(img):
    cfg = EnsembleConfig((CORNER, BLOB), per_detector_budget=80)
    kps = merge_keypoints(img, cfg)
    assert set(kps.detector_id) == {"corner", "blob"}
    assert count_nearby_pairs(kps, 3.0) == 0
    assert len(kps) <= 160
    np.testing.assert_array_equal(kps.xy, merge_keypoints(img, cfg).xy)


def test_duplicate_detector_collapses_to_single(img):
    single = detect(img, CORNER.with_(max_keypoints=60))
    both = merge_keypoints(img, EnsembleConfig((CORNER, CORNER), per_detector_budget=60))
    assert sorted(map(tuple, both.xy)) == sorted(map(tuple, single.xy))


def test_cross_nms_off_keeps_everything(img):
    cfg = EnsembleConfig((CORNER, BLOB), per_detector_budget=(50, 30), cross_nms_radius=0)
    assert len(merge_keypoints(img, cfg)) == 80


def test_merge_features_uses_one_source(img):
    cfg = EnsembleConfig((CORNER, BLOB), per_detector_budget=40, descriptor_source=DescriptorSource("dsift"))
    fs = merge_features(img, cfg)
    assert fs.source_id == "dsift" and fs.descriptors.shape[1] == 128
    assert len(fs) == len(merge_keypoints(img, cfg))


def test_config_validation():
    with pytest.raises(ValidationError):
        EnsembleConfig(())
    with pytest.raises(ValidationError):
        EnsembleConfig((CORNER,), per_detector_budget=0)
    with pytest.raises(ValidationError):
        EnsembleConfig((CORNER, BLOB), per_detector_budget=(10,))
