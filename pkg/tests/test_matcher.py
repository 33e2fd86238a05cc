import numpy as np
import pytest
from hypothesis import given, strategies as st

from matchkit import autograd as ag
from matchkit.describe import PatchEmbedConfig
from matchkit.errors import DimensionMismatch, EmptySupervision, UnknownSource, ValidationError
from matchkit.gtlabel import GTLabels
from matchkit.matcher import (
    MatchScore,
    SourceSpec,
    TrainConfig,
    TrainingPair,
    assignment_from_scores,
    evaluate,
    extract_matches,
    finetune_multi_detector,
    forward,
    gradient_check,
    init_matcher,
    loss,
    rotary_encode,
    rotary_frequencies,
    score_matches,
    split_heldout,
    train,
)
from matchkit.features import MatchSet

import oracles
from helpers import SOURCES, random_features, random_pair

seeds = st.integers(0, 2**32 - 1)


@pytest.fixture(scope="module")
def small():
    return init_matcher(SOURCES, d=16, num_layers=1, num_heads=2, seed=0,
                        patch_cfg=PatchEmbedConfig(7, 8, 16, 0))


@given(seed=seeds, m=st.integers(1, 9), n=st.integers(1, 9))
def test_assignment_marginals_bounded(seed, m, n):
    rng = np.random.default_rng(seed)
    res = assignment_from_scores(rng.normal(0, 5, (m, n)), rng.normal(0, 3, m), rng.normal(0, 3, n))
    assert np.all(res.p.sum(1) <= 1 + 1e-9) and np.all(res.p.sum(0) <= 1 + 1e-9)
    assert np.all(res.p <= np.minimum(res.sigma_a[:, None], res.sigma_b[None, :]) + 1e-12)


@given(seed=seeds, m=st.integers(1, 12), n=st.integers(1, 12), tau=st.sampled_from([0.05, 0.1, 0.3]))
def test_extract_matches_equals_oracle(seed, m, n, tau):
    rng = np.random.default_rng(seed)
    p = rng.integers(0, 5, (m, n)) / 8.0  # ties are frequent
    assert extract_matches(p, tau).as_set() == oracles.extract_matches(p.tolist(), tau)


def test_extract_matches_validation():
    with pytest.raises(ValidationError):
        extract_matches(np.ones((2, 2)), 1.0)
    assert len(extract_matches(np.zeros((0, 3)), 0.1)) == 0


@given(seed=seeds, shift=st.tuples(st.floats(-1, 1), st.floats(-1, 1)))
def test_rotary_scores_depend_on_offset_only(seed, shift):
    rng = np.random.default_rng(seed)
    q, k = rng.normal(size=16), rng.normal(size=16)
    pa, pb = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
    s = np.asarray(shift)
    base = rotary_encode(q[None], pa[None], 4.0) @ rotary_encode(k[None], pb[None], 4.0).T
    moved = rotary_encode(q[None], (pa + s)[None], 4.0) @ rotary_encode(k[None], (pb + s)[None], 4.0).T
    assert abs(base - moved).max() < 1e-9


def test_rotary_preserves_norm_and_tensor_path():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(5, 8))
    pos = rng.uniform(-1, 1, (5, 2))
    r = rotary_encode(v, pos, 32.0)
    assert np.allclose(np.linalg.norm(r, axis=1), np.linalg.norm(v, axis=1))
    assert np.allclose(rotary_encode(ag.Tensor(v), pos, 32.0).data, r)
    assert np.allclose(rotary_encode(v, np.zeros((5, 2))), v)
    f = rotary_frequencies(8, 32.0)
    assert f[0] == 32.0 and np.all(np.diff(f) < 0)
    with pytest.raises(ValidationError):
        rotary_frequencies(6)


def test_forward_shapes_and_bounds(small):
    rng = np.random.default_rng(1)
    for sa, sb in [("dsift", "don"), ("brief", "dsift"), ("don", "don")]:
        res = forward(random_features(rng, 5, sa), random_features(rng, 7, sb), small)
        assert res.p.shape == (5, 7)
        assert np.all(res.p.sum(1) <= 1 + 1e-6) and np.all(res.p.sum(0) <= 1 + 1e-6)


def test_forward_is_permutation_equivariant(small):
    rng = np.random.default_rng(2)
    fa, fb = random_features(rng, 6), random_features(rng, 5)
    pa, pb = rng.permutation(6), rng.permutation(5)
    r1 = forward(fa, fb, small)
    r2 = forward(fa.permuted(pa), fb.permuted(pb), small)
    assert np.allclose(r2.p, r1.p[np.ix_(pa, pb)], atol=1e-12)


def test_unknown_source_and_dimension_errors(small):
    rng = np.random.default_rng(3)
    fa = random_features(rng, 3)
    fa.source_id = "orb"
    with pytest.raises(UnknownSource):
        forward(fa, random_features(rng, 3), small)
    fb = random_features(rng, 3)
    fb.descriptors = fb.descriptors[:, :64]
    with pytest.raises(DimensionMismatch):
        forward(random_features(rng, 3), fb, small)
    with pytest.raises(ValidationError):
        init_matcher({"dsift": 128}, d=12, num_heads=2)
    with pytest.raises(ValidationError):
        SourceSpec(8, "complex")


def test_loss_rules(small):
    rng = np.random.default_rng(4)
    pr = random_pair(rng, 4, 4)
    res = forward(pr.feat_a, pr.feat_b, small)
    lab = GTLabels(np.array([[0, 1]]), np.array([2]), np.array([], int), np.array([1, 3]), np.array([0, 2, 3]), 4, 4)
    want = -res.log_p[0, 1] - 0.5 * np.log(1 - res.sigma_a[2])
    assert loss(res, lab) == pytest.approx(want, rel=1e-9)
    empty = GTLabels(np.empty((0, 2), int), np.array([], int), np.array([], int), np.arange(4), np.arange(4), 4, 4)
    with pytest.raises(EmptySupervision):
        loss(res, empty)


def test_gradient_check_small_model(small):
    rng = np.random.default_rng(5)
    details = {}
    err = gradient_check(small, random_pair(rng, 5, 6, "brief", "don"), details=details)
    assert err < 1e-4
    assert "patch.w0" in details["per_block"] and "proj.brief.w" in details["per_block"]


def test_score_matches_counts_every_prediction():
    lab = GTLabels(np.array([[0, 0], [1, 2]]), np.array([], int), np.array([], int), np.array([], int),
                   np.array([], int), 3, 3)
    s = score_matches(MatchSet([[0, 0], [2, 1]], [0.9, 0.8]), lab)
    assert (s.tp, s.num_pred, s.num_gt) == (1, 2, 2)
    assert s.f1 == pytest.approx(0.5) and s.precision == 0.5 and s.recall == 0.5
    assert MatchScore(0, 0, 0).f1 == 0.0


def test_lr_schedule_and_split():
    cfg = TrainConfig(lr_initial=1e-3, lr_final=1e-5, decay_epochs=2)
    assert [cfg.lr_at(e) for e in range(4)] == pytest.approx([1e-3, 1e-4, 1e-5, 1e-5])
    tr, va = split_heldout(20, 0.1, 0)
    assert len(va) == 2 and sorted(np.r_[tr, va]) == list(range(20))
    assert np.array_equal(split_heldout(20, 0.1, 0)[1], va)
    with pytest.raises(ValidationError):
        TrainConfig(lr_initial=0)


def _toy_corpus(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        fa = random_features(rng, 6)
        perm = rng.permutation(6)
        fb = fa.permuted(perm)
        matches = np.c_[perm, np.arange(6)]
        matches = matches[np.argsort(matches[:, 0])]
        lab = GTLabels(matches, np.array([], int), np.array([], int), np.array([], int), np.array([], int), 6, 6)
        out.append(TrainingPair(fa, fb, lab, f"toy{i}"))
    return out


def test_training_lowers_loss_and_is_deterministic():
    corpus = _toy_corpus(8, 0)
    p0 = init_matcher({"dsift": 128}, d=16, num_layers=1, num_heads=2, seed=1)
    cfg = TrainConfig(epochs=6, lr_initial=1e-2, lr_final=1e-3, decay_epochs=6, batch_size=2, val_fraction=0.25)
    a = train(corpus, cfg, p0)
    b = train(corpus, cfg, p0)
    assert all(np.array_equal(a.blocks[k], b.blocks[k]) for k in a.blocks)
    assert a.history[-1]["train_loss"] < a.history[0]["train_loss"]
    assert evaluate(a, corpus)["loss"] < evaluate(p0, corpus)["loss"]
    assert p0.history == []


def test_frozen_blocks_stay_fixed():
    corpus = _toy_corpus(4, 1)
    p0 = init_matcher({"dsift": 128}, d=16, num_layers=1, num_heads=2, seed=1)
    cfg = TrainConfig(epochs=1, lr_initial=1e-2, lr_final=1e-2, frozen_prefixes=("proj.", "l0.self"), val_fraction=0)
    p = train(corpus, cfg, p0)
    assert np.array_equal(p.blocks["proj.dsift.w"], p0.blocks["proj.dsift.w"])
    assert not np.array_equal(p.blocks["final.w"], p0.blocks["final.w"])


def test_single_detector_finetune_reproduces_train():
    corpus = _toy_corpus(6, 2)
    p0 = init_matcher({"dsift": 128}, d=16, num_layers=1, num_heads=2, seed=1)
    cfg = TrainConfig(epochs=2, lr_initial=1e-2, lr_final=1e-3, val_fraction=0)
    a = train(corpus, cfg, p0, val=[])
    b = finetune_multi_detector(p0, ["only"], lambda i, det: corpus[i], len(corpus), cfg)
    assert all(np.array_equal(a.blocks[k], b.blocks[k]) for k in a.blocks)
