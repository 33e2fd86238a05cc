import numpy as np
import pytest

from matchkit import autograd as ag
from matchkit.describe import (
    BRIEF_SUPPORT,
    DENSE_DIM,
    PatchEmbedConfig,
    binary_descriptor,
    binary_descriptors,
    binary_to_real,
    brief_fits,
    dense_descriptor_map,
    extract_patches,
    grid_shape,
    in_grid,
    init_patch_embed,
    patch_embed,
    sample_descriptor,
    sample_descriptors,
)
from matchkit.errors import OutOfBounds, PatchOutOfBounds, ValidationError
from matchkit.features import Keypoint, Keypoints
from matchkit.synthgen import TextureConfig, gen_texture


@pytest.fixture(scope="module")
def img():
    return gen_texture(TextureConfig(width=96, height=80), seed=11)


def test_dense_map_shape_and_unit_norm(img):
    dm = dense_descriptor_map(img, stride=2)
    assert dm.shape == grid_shape(96, 80, 2) == (40, 48)
    assert dm.dim == DENSE_DIM == 128
    n = np.linalg.norm(dm.grid, axis=2)
    assert np.allclose(n[~dm.empty], 1.0, atol=1e-5)


def test_sampling_on_nodes_returns_grid_vectors(img):
    dm = dense_descriptor_map(img, stride=2)
    d = sample_descriptors(dm, [[10.0, 6.0]])[0]
    assert np.allclose(d, dm.grid[3, 5], atol=1e-6)
    mid = sample_descriptor(dm, Keypoint(11.0, 6.0))
    assert np.linalg.norm(mid) == pytest.approx(1.0)
    with pytest.raises(OutOfBounds):
        sample_descriptors(dm, [[95.5, 2.0]])
    assert in_grid(dm, [[94.0, 78.0], [94.5, 0]]).tolist() == [True, False]


def test_flat_image_gives_empty_descriptors():
    dm = dense_descriptor_map(np.full((32, 32), 0.5), stride=4)
    assert dm.empty.all()
    assert np.allclose(sample_descriptors(dm, [[8.0, 8.0]]), 0.0)


def test_dense_descriptor_tracks_shifted_content(img):
    shifted = np.roll(img, (4, 6), axis=(0, 1))
    a = sample_descriptors(dense_descriptor_map(img), [[40.0, 30.0]])[0]
    b = sample_descriptors(dense_descriptor_map(shifted), [[46.0, 34.0], [40.0, 30.0]])
    assert a @ b[0] > 0.99
    assert a @ b[0] > a @ b[1]


def test_brief_bits_and_support(img):
    r = BRIEF_SUPPORT
    kp = Keypoint(float(r), float(r))
    d = binary_descriptor(img, kp)
    assert d.shape == (32,) and d.dtype == np.uint8
    assert brief_fits(img.shape, (r, r)) and not brief_fits(img.shape, (r - 1, r))
    with pytest.raises(PatchOutOfBounds):
        binary_descriptor(img, Keypoint(r - 1.0, 40.0))
    # pixels beyond the support must not matter
    far = img.copy()
    far[2 * r + 2:, :] = 0.0
    far[:, 2 * r + 2:] = 1.0
    assert np.array_equal(binary_descriptor(far, kp), d)


def test_brief_batch_matches_single(img):
    kps = Keypoints([[40.0, 40.0], [48.0, 44.0]], [1.0, 1.2], 1.0, "t")
    batch = binary_descriptors(img, kps)
    for i, k in enumerate(kps):
        assert np.array_equal(batch[i], binary_descriptor(img, k))
    v = binary_to_real(batch)
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0)


def test_patches_normalised_and_bounds(img):
    p = extract_patches(img, [[20.0, 20.0]], 15)
    assert p.shape == (1, 225)
    assert abs(p.mean()) < 1e-9 and p.std() == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(PatchOutOfBounds):
        extract_patches(img, [[6.0, 20.0]], 15)


def test_patch_embed_unit_norm_and_deterministic(img):
    cfg = PatchEmbedConfig(out_dim=32)
    a = patch_embed(img, Keypoint(30.0, 30.0), cfg)
    b = patch_embed(img, Keypoint(30.0, 30.0), cfg, init_patch_embed(cfg))
    assert a.shape == (32,)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert np.array_equal(a, b)
    with pytest.raises(ValidationError):
        PatchEmbedConfig(patch_size=14)


def test_patch_embed_is_photometrically_invariant(img):
    cfg = PatchEmbedConfig(out_dim=16)
    a = patch_embed(img, Keypoint(30.0, 30.0), cfg)
    b = patch_embed(0.5 * img + 0.2, Keypoint(30.0, 30.0), cfg)
    assert np.allclose(a, b, atol=1e-5)
    assert isinstance(ag.Tensor(np.zeros(2)), ag.Tensor)


def test_sampling_is_lipschitz_between_nodes():
    rng = np.random.default_rng(0)
    from matchkit.describe import DescriptorMap

    grid = rng.normal(size=(6, 7, 5)).astype(np.float32)
    dm = DescriptorMap(grid, 2, "r", np.zeros((6, 7), bool))
    lip = max(np.abs(np.diff(grid, axis=0)).max(), np.abs(np.diff(grid, axis=1)).max()) / 2

    def raw(xy):
        u, v = xy[0] / 2, xy[1] / 2
        x0, y0 = min(int(u), 5), min(int(v), 4)
        fx, fy = u - x0, v - y0
        return (grid[y0, x0] * (1 - fx) * (1 - fy) + grid[y0, x0 + 1] * fx * (1 - fy)
                + grid[y0 + 1, x0] * (1 - fx) * fy + grid[y0 + 1, x0 + 1] * fx * fy)

    for _ in range(50):
        p = rng.uniform(0, 9, 2)
        d = rng.normal(size=2) * 0.3
        q = np.clip(p + d, 0, 9)
        step = np.abs(q - p).sum()
        assert np.abs(raw(p) - raw(q)).max() <= lip * step + 1e-6
        assert np.isfinite(sample_descriptors(dm, [p])).all()


def test_patches_ignore_pixels_outside_the_crop(img):
    poisoned = img.copy()
    poisoned[:, 40:] = 1.0
    poisoned[38:, :] = 0.0
    a = extract_patches(img, [[20.0, 20.0]], 15)
    b = extract_patches(poisoned, [[20.0, 20.0]], 15)
    assert np.array_equal(a, b)


def test_dense_map_support_is_local(img):
    poisoned = img.copy()
    poisoned[:, 70:] = 0.0
    a = sample_descriptors(dense_descriptor_map(img), [[40.0, 40.0]])
    b = sample_descriptors(dense_descriptor_map(poisoned), [[40.0, 40.0]])
    assert np.array_equal(a, b)


@pytest.mark.parametrize("det_kind", ["corner", "blob"])
@pytest.mark.parametrize("source", ["dsift", "brief", "don"])
def test_every_detector_source_combination(img, det_kind, source):
    from matchkit.detect import DetectorConfig
    from matchkit.pipeline import DescriptorSource, build_features

    fs = build_features(img, DetectorConfig(det_kind, single_scale=True, min_side=64, max_keypoints=40),
                        DescriptorSource(source))
    assert len(fs) > 0 and fs.source_id == source
    assert set(fs.keypoints.detector_id) == {det_kind}
