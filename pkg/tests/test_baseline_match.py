import numpy as np
import pytest
from hypothesis import given, strategies as st

from matchkit.baseline_match import distance_matrix, hamming, mutual_nn, ratio_test
from matchkit.errors import DimensionMismatch, ValidationError

import oracles


def _desc(rng, m, n, dim=3, hi=4):
    return rng.integers(0, hi, (m, dim)).astype(float), rng.integers(0, hi, (n, dim)).astype(float)


@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 25), n=st.integers(1, 25))
def test_mutual_nn_equals_oracle(seed, m, n):
    a, b = _desc(np.random.default_rng(seed), m, n)
    assert mutual_nn(a, b).as_set() == oracles.mutual_nn(a.tolist(), b.tolist())


@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 25), n=st.integers(2, 25),
       ratio=st.sampled_from([0.5, 0.8, 0.95, 1.0]))
def test_ratio_test_equals_oracle(seed, m, n, ratio):
    a, b = _desc(np.random.default_rng(seed), m, n)
    assert ratio_test(a, b, ratio=ratio).as_set() == oracles.ratio_test(a.tolist(), b.tolist(), ratio)


@given(seed=st.integers(0, 2**32 - 1))
def test_ratio_one_equals_mutual(seed):
    a, b = _desc(np.random.default_rng(seed), 12, 9)
    assert ratio_test(a, b, ratio=1.0).as_set() == mutual_nn(a, b).as_set()


@given(seed=st.integers(0, 2**32 - 1), ratio=st.floats(0.3, 0.99))
def test_ratio_is_subset_of_mutual_and_one_to_one(seed, ratio):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(15, 4)), rng.normal(size=(11, 4))
    r = ratio_test(a, b, ratio=ratio)
    assert r.as_set() <= mutual_nn(a, b).as_set()
    assert len(set(r.pairs[:, 0])) == len(r) == len(set(r.pairs[:, 1]))
    assert np.all((r.confidence >= 0) & (r.confidence <= 1))


def test_identical_sets_match_identity():
    a = np.random.default_rng(0).normal(size=(10, 8))
    assert mutual_nn(a, a).as_set() == {(i, i) for i in range(10)}


def test_hamming_and_metric_errors():
    a = np.zeros(32, np.uint8)
    b = np.zeros(32, np.uint8)
    b[0] = 0b1011
    assert hamming(a, b) == 3
    with pytest.raises(DimensionMismatch):
        hamming(a, b[:16])
    with pytest.raises(ValidationError):
        distance_matrix(np.ones((2, 3)), np.ones((2, 3)), "hamming")
    with pytest.raises(ValidationError):
        distance_matrix(np.ones((0, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionMismatch):
        distance_matrix(np.ones((2, 3)), np.ones((2, 4)))
    with pytest.raises(ValidationError):
        ratio_test(np.ones((2, 3)), np.ones((1, 3)))


def test_binary_mutual_nn():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 256, (6, 32), dtype=np.uint8)
    b = a[::-1].copy()
    assert mutual_nn(a, b, "hamming").as_set() == {(i, 5 - i) for i in range(6)}


def test_cosine_distance_range():
    rng = np.random.default_rng(2)
    d = distance_matrix(rng.normal(size=(4, 5)), rng.normal(size=(3, 5)), "cosine")
    assert np.all((d >= -1e-12) & (d <= 2 + 1e-12))


@given(seed=st.integers(0, 2**32 - 1))
def test_hamming_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.integers(0, 256, (3, 32), dtype=np.uint8)
    assert hamming(a, b) == hamming(b, a) == oracles.hamming(a, b)
    assert hamming(a, a) == 0
    assert hamming(a, c) <= hamming(a, b) + hamming(b, c)
