import numpy as np
import pytest
from hypothesis import given, strategies as st

from matchkit import formats as fm
from matchkit.errors import FormatError
from matchkit.features import Keypoints, MatchSet
from matchkit.geometry import CameraPose, Homography, Intrinsics, rotation_from_axis_angle
from matchkit.gtlabel import GTLabels
from matchkit.describe import PatchEmbedConfig
from matchkit.matcher import init_matcher

from helpers import SOURCES


def test_keypoints_roundtrip(tmp_path):
    kps = Keypoints([[1.25, 2.5], [10.0, 3.125]], [1.0, 1.2], [0.5, 0.25], ["corner", "blob"])
    fm.write_keypoints(tmp_path / "k.txt", kps, 64, 32)
    back, w, h = fm.read_keypoints(tmp_path / "k.txt")
    assert (w, h) == (64, 32)
    assert np.array_equal(back.xy, kps.xy) and list(back.detector_id) == ["corner", "blob"]
    assert not (tmp_path / "k.txt.part").exists()
    (tmp_path / "bad.txt").write_text("# matchkit-keypoints v1 count=3 width=1 height=1\n1 2 3 4 x\n")
    with pytest.raises(FormatError):
        fm.read_keypoints(tmp_path / "bad.txt")
    with pytest.raises(FormatError):
        fm.format_keypoints(Keypoints([[0, 0]], 1, 1, "two words"), 1, 1)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 20), dim=st.integers(1, 40))
def test_mkds_real_roundtrip(seed, n, dim):
    a = np.random.default_rng(seed).normal(size=(n, dim)).astype(np.float32)
    back, binary = fm.decode_mkds(fm.encode_mkds(a))
    assert not binary and np.array_equal(back, a)


def test_mkds_binary_and_corruption():
    a = np.random.default_rng(0).integers(0, 256, (5, 32), dtype=np.uint8)
    data = fm.encode_mkds(a, binary=True)
    back, binary = fm.decode_mkds(data)
    assert binary and np.array_equal(back, a)
    assert data[:4] == b"MKDS"
    with pytest.raises(FormatError):
        fm.decode_mkds(data[:-1])
    with pytest.raises(FormatError):
        fm.decode_mkds(b"XXXX" + data[4:])


def test_pgm_roundtrip(tmp_path):
    img = np.random.default_rng(1).uniform(size=(20, 30))
    fm.write_pgm(tmp_path / "i.pgm", img)
    back = fm.read_pgm(tmp_path / "i.pgm")
    assert back.shape == (20, 30)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    assert np.array_equal(fm.quantize(back), back)


def test_depth_roundtrip(tmp_path):
    d = np.random.default_rng(2).uniform(1, 9, (8, 9)).astype(np.float32)
    fm.write_depth(tmp_path / "d.mkds", d)
    assert np.array_equal(fm.read_depth(tmp_path / "d.mkds"), d)


def test_labels_and_matches_roundtrip(tmp_path):
    lab = GTLabels(np.array([[0, 2], [3, 1]]), np.array([1]), np.array([0]), np.array([2]), np.array([3]), 4, 4)
    fm.write_labels(tmp_path / "l.txt", lab)
    back = fm.read_labels(tmp_path / "l.txt")
    assert np.array_equal(back.matches, lab.matches) and (back.num_a, back.num_b) == (4, 4)
    assert back.ignored_b.tolist() == [3]
    ms = MatchSet([[0, 1], [2, 3]], [0.5, 0.125])
    fm.write_matches(tmp_path / "m.txt", ms)
    back = fm.read_matches(tmp_path / "m.txt")
    assert np.array_equal(back.pairs, ms.pairs) and np.array_equal(back.confidence, ms.confidence)


def test_checkpoint_roundtrip_is_exact(tmp_path):
    p = init_matcher(SOURCES, d=16, num_layers=2, num_heads=2, seed=3, patch_cfg=PatchEmbedConfig(7, 8, 16, 0))
    data = fm.encode_checkpoint(p)
    assert data[:4] == b"MKPW"
    q = fm.decode_checkpoint(data)
    assert (q.d, q.num_layers, q.num_heads, q.rope_scale, q.seed) == (16, 2, 2, 32.0, 3)
    assert q.sources == p.sources
    assert all(np.array_equal(q.blocks[k], p.blocks[k]) for k in p.blocks)
    assert fm.encode_checkpoint(q) == data
    with pytest.raises(FormatError):
        fm.decode_checkpoint(data[:-3])
    with pytest.raises(FormatError):
        fm.decode_checkpoint(data + b"\0")


def test_geometry_sidecars_roundtrip():
    H = Homography(np.array([[1.1, 0.2, 3.0], [0.01, 0.9, -4.0], [1e-4, 2e-4, 1.0]]))
    assert np.array_equal(fm.parse_homography(fm.format_homography(H)).h, H.h)
    pose = CameraPose(rotation_from_axis_angle([1, 2, 3], 12.0), [0.1, -0.2, 0.97])
    K = Intrinsics(230.4, 230.4, 127.5, 127.5)
    p2, ka, kb = fm.parse_pose(fm.format_pose(pose, K, K))
    assert np.array_equal(p2.R, pose.R) and np.array_equal(p2.t, pose.t) and ka == K
    with pytest.raises(FormatError):
        fm.parse_pose("R 1 0 0\n")


def test_manifest_roundtrip(tmp_path):
    items = [fm.ManifestItem("p0", 5, "homography", ("p0_a.pgm", "p0_b.pgm", "p0_H.txt"))]
    fm.write_manifest(tmp_path / "manifest.txt", items)
    assert fm.read_manifest(tmp_path / "manifest.txt") == items
    with pytest.raises(FormatError):
        fm.format_manifest([fm.ManifestItem("a b", 1, "x", ())])


def test_report_roundtrip_and_auc_check(tmp_path):
    rows = [
        {"pair_id": "a", "detector": "corner", "descriptor": "dsift", "matcher": "learned", "num_matches": 40,
         "num_inliers": 30, "rot_deg": 0.5, "trans_deg": 1.0, "max_deg": 1.0},
        {"pair_id": "b", "detector": "corner", "descriptor": "dsift", "matcher": "learned", "num_matches": 3,
         "num_inliers": 0, "rot_deg": float("inf"), "trans_deg": float("inf"), "max_deg": float("inf")},
        {"pair_id": "c", "detector": "corner", "descriptor": "dsift", "matcher": "learned", "num_matches": 50,
         "num_inliers": 20, "rot_deg": 3.0, "trans_deg": 2.0, "max_deg": 3.0},
    ]
    text = fm.format_report(rows)
    assert fm.parse_report(text) == rows
    summ = fm.summary_from_rows(rows, [5.0])
    assert summ["auc@5"] == pytest.approx(0.4, abs=1e-15)
    (tmp_path / "r.csv").write_text(text)
    (tmp_path / "s.csv").write_text(fm.format_summary(summ))
    got_rows, got = fm.load_report(tmp_path / "r.csv", tmp_path / "s.csv")
    assert got["auc@5"] == pytest.approx(0.4)
    (tmp_path / "s.csv").write_text(fm.format_summary({"auc@5": 0.41}))
    with pytest.raises(FormatError):
        fm.load_report(tmp_path / "r.csv", tmp_path / "s.csv")
