import numpy as np
import pytest
from hypothesis import given, strategies as st

from matchkit.errors import (
    BehindCamera,
    DegenerateWarp,
    EmptyInput,
    InvalidDepth,
    ValidationError,
    ZeroTranslation,
)
from matchkit.geometry import (
    CameraPose,
    Homography,
    Intrinsics,
    auc,
    essential_from_pose,
    pose_error,
    random_rotation,
    reproject,
    reproject_many,
    rotation_angle,
    rotation_from_axis_angle,
    translation_angle,
    warp_point,
    warp_points,
)

import oracles

K = Intrinsics(200.0, 200.0, 64.0, 64.0)
seeds = st.integers(0, 2**32 - 1)


def test_auc_known_value():
    assert auc([1.0, 3.0, np.inf], [5.0]) == [0.4]


def test_auc_extremes():
    assert auc([0.0, 0.0], [1.0, 2.0]) == [1.0, 1.0]
    assert auc([np.inf], [3.0]) == [0.0]
    with pytest.raises(EmptyInput):
        auc([], [5.0])
    with pytest.raises(ValidationError):
        auc([1.0], [5.0, 2.0])


@given(seed=seeds, n=st.integers(1, 30))
def test_auc_matches_numeric_integration(seed, n):
    rng = np.random.default_rng(seed)
    e = rng.uniform(0, 12, n)
    e[rng.uniform(size=n) < 0.2] = np.inf
    got = auc(e, [5.0, 10.0])
    assert got[0] == pytest.approx(oracles.auc(e, 5.0), abs=1e-4)
    assert got[1] == pytest.approx(oracles.auc(e, 10.0), abs=1e-4)


@given(seed=seeds, n=st.integers(1, 30))
def test_auc_monotone_in_threshold_and_errors(seed, n):
    rng = np.random.default_rng(seed)
    e = rng.exponential(5.0, n)
    a = auc(e, [1.0, 5.0, 10.0, 20.0])
    assert all(0.0 <= v <= 1.0 for v in a)
    worse = e + rng.uniform(0, 3, n)
    b = auc(worse, [1.0, 5.0, 10.0, 20.0])
    assert all(y <= x + 1e-12 for x, y in zip(a, b))


@given(seed=seeds)
def test_pose_error_identities(seed):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    t = rng.normal(size=3)
    p = CameraPose(R, t)
    e = pose_error(p, p)
    assert e.rot_deg < 1e-5 and e.trans_deg < 1e-5
    # translation scale is unobservable
    assert pose_error(CameraPose(R, 3.7 * t), p).trans_deg < 1e-5
    # and so is its sign
    assert pose_error(CameraPose(R, -t), p).trans_deg < 1e-5
    assert e.max_deg == max(e.rot_deg, e.trans_deg)


@given(seed=seeds, angle=st.floats(0.0, 179.0))
def test_rotation_angle_recovers_axis_angle(seed, angle):
    axis = np.random.default_rng(seed).normal(size=3)
    assert rotation_angle(rotation_from_axis_angle(axis, angle)) == pytest.approx(angle, abs=1e-5)


def test_translation_angle_zero_vector():
    with pytest.raises(ZeroTranslation):
        translation_angle(np.zeros(3), np.ones(3))


def test_homography_roundtrip_and_degenerate():
    H = Homography(np.array([[1.1, 0.05, 3.0], [-0.02, 0.95, -2.0], [1e-4, 2e-4, 1.0]]))
    p = np.array([[10.0, 20.0], [100.0, 5.0]])
    back = warp_points(H.inverse(), warp_points(H, p))
    assert np.allclose(back, p, atol=1e-9)
    assert np.allclose(warp_point(H, p[0]), warp_points(H, p)[0])
    assert np.allclose(H.compose(H.inverse()).h, np.eye(3), atol=1e-12)
    G = Homography(np.array([[1.0, 0, 0], [0, 1, 0], [1.0, 0, 0.5]]))
    with pytest.raises(DegenerateWarp):
        warp_point(G, (-0.5, 0.0))
    with pytest.raises(ValidationError):
        Homography(np.zeros((3, 3)))


def test_reproject_identity_and_errors():
    p = (30.0, 40.0)
    assert np.allclose(reproject(p, 5.0, K, K, CameraPose.identity()), p)
    with pytest.raises(InvalidDepth):
        reproject(p, 0.0, K, K, CameraPose.identity())
    with pytest.raises(BehindCamera):
        reproject(p, 1.0, K, K, CameraPose(np.eye(3), [0, 0, -5.0]))


@given(seed=seeds)
def test_reproject_many_agrees_with_scalar(seed):
    rng = np.random.default_rng(seed)
    pose = CameraPose(rotation_from_axis_angle(rng.normal(size=3), 8.0), rng.normal(size=3) * 0.3)
    pts = rng.uniform(0, 128, (6, 2))
    d = rng.uniform(3, 9, 6)
    many = reproject_many(pts, d, K, K, pose)
    for i in range(6):
        assert np.allclose(many[i], reproject(pts[i], d[i], K, K, pose))
    d[0] = -1
    assert np.all(np.isnan(reproject_many(pts, d, K, K, pose)[0]))


@given(seed=seeds)
def test_essential_satisfies_epipolar_constraint(seed):
    rng = np.random.default_rng(seed)
    pose = CameraPose(random_rotation(rng), rng.normal(size=3))
    E = essential_from_pose(pose)
    X = rng.uniform(-1, 1, (10, 3)) + [0, 0, 5]
    Xb = X @ pose.R.T + pose.t
    xa, xb = X / X[:, 2:], Xb / Xb[:, 2:]
    assert np.allclose(np.einsum("ij,jk,ik->i", xb, E, xa), 0, atol=1e-9)
    s = np.linalg.svd(E, compute_uv=False)
    assert np.allclose(s, [1, 1, 0], atol=1e-9)
    with pytest.raises(ZeroTranslation):
        essential_from_pose(CameraPose(np.eye(3), np.zeros(3)))


def test_camera_pose_validation():
    with pytest.raises(ValidationError):
        CameraPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValidationError):
        Intrinsics(0.0, 1.0, 0.0, 0.0)
    p = CameraPose(rotation_from_axis_angle([0, 0, 1], 30), [1.0, 2.0, 3.0])
    q = p.inverse()
    assert np.allclose(q.R @ p.R, np.eye(3)) and np.allclose(q.R @ p.t + q.t, 0)


@given(seed=seeds)
def test_composition_matches_sequential_warps(seed):
    rng = np.random.default_rng(seed)
    mk = lambda: Homography(np.eye(3) + rng.normal(0, [[0.05, 0.05, 3], [0.05, 0.05, 3], [1e-4, 1e-4, 0]]))  # noqa: E731
    h1, h2 = mk(), mk()
    p = rng.uniform(0, 128, 2)
    assert np.allclose(warp_point(h1.compose(h2), p), warp_point(h1, warp_point(h2, p)), atol=1e-6)


@given(seed=seeds)
def test_rotation_angle_conjugation_invariant(seed):
    rng = np.random.default_rng(seed)
    R, Q = random_rotation(rng), random_rotation(rng)
    assert abs(rotation_angle(Q @ R @ Q.T) - rotation_angle(R)) < 1e-6


@given(seed=seeds, n=st.integers(1, 20))
def test_auc_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    e = rng.exponential(6.0, n)
    assert auc(e, [5.0, 10.0]) == auc(rng.permutation(e), [5.0, 10.0])
