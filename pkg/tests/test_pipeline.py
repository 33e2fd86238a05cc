import numpy as np
import pytest

from matchkit.detect import DetectorConfig
from matchkit.errors import ValidationError
from matchkit.gtlabel import PairSupervision
from matchkit.pipeline import DescriptorSource, build_features, make_training_pair
from matchkit.synthgen import HomographyGenConfig, gen_homography_pair, inject_clutter

DET = DetectorConfig(single_scale=True, min_side=64, max_keypoints=100)


@pytest.fixture(scope="module")
def pair():
    return gen_homography_pair(HomographyGenConfig(width=128, height=128), seed=7)


@pytest.mark.parametrize("kind,dim", [("dsift", 128), ("brief", 32), ("don", 225)])
def test_sources_describe_detections(pair, kind, dim):
    fs = build_features(pair[0], DET, DescriptorSource(kind))
    assert 0 < len(fs) <= 100
    assert fs.descriptors.shape == (len(fs), dim)
    assert fs.image_size == (128, 128)
    assert DescriptorSource(kind).spec().kind in ("real", "binary", "patch")


def test_clutter_respects_budget(pair):
    clut = lambda k: inject_clutter(k, "duplicate_offset", 1.5, 0)  # noqa: E731
    fs = build_features(pair[0], DET, DescriptorSource(), clutter=clut)
    assert len(fs) <= 100


def test_training_pair_has_matches(pair):
    a, b, H = pair
    tp = make_training_pair("p", a, b, PairSupervision(H), DET, DescriptorSource())
    assert len(tp.labels.matches) > 20
    assert tp.labels.num_a == len(tp.feat_a)


def test_unknown_source():
    with pytest.raises(ValidationError):
        DescriptorSource("orb")
