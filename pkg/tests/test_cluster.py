import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hetgfl.cluster import ClusteringError, kmeans
from hetgfl.metrics import adjusted_rand_index


def blobs(seed, k=2, per=30, d=3, sep=10.0, sigma=0.1):
    rng = np.random.default_rng(seed)
    centres = np.arange(k)[:, None] * sep * np.ones((1, d))
    X = np.concatenate([c + sigma * rng.standard_normal((per, d)) for c in centres])
    return X, np.repeat(np.arange(k), per)


def test_k1_closed_form():
    X = np.random.default_rng(0).normal(size=(40, 3))
    r = kmeans(X, 1, seed=0)
    assert np.allclose(r.centroids[0], X.mean(0))
    assert r.inertia == pytest.approx(X.var(axis=0).sum() * 40)


def test_two_blobs_recovered():
    X, y = blobs(0)
    r = kmeans(X, 2, seed=3)
    assert adjusted_rand_index(y, r.assignments) == 1.0


def test_n_equals_k():
    X = np.random.default_rng(1).normal(size=(5, 2))
    r = kmeans(X, 5, seed=0)
    assert r.inertia == pytest.approx(0.0, abs=1e-20)
    assert sorted(r.assignments.tolist()) == list(range(5))


def test_errors():
    with pytest.raises(ClusteringError):
        kmeans(np.zeros((2, 2)), 3)
    with pytest.raises(ClusteringError):
        kmeans(np.array([[np.nan, 0.0], [1.0, 1.0]]), 1)
    with pytest.raises(ClusteringError):
        kmeans(np.zeros(4), 1)


def test_duplicate_points_survive_empty_cluster_repair():
    X = np.array([[0.0, 0.0]] * 6 + [[1.0, 1.0]])
    r = kmeans(X, 3, seed=0, n_init=1)
    assert r.inertia == 0.0
    assert np.all(r.assignments < 3) and np.isfinite(r.centroids).all()


def test_deterministic():
    X, _ = blobs(2, k=3)
    a, b = kmeans(X, 3, seed=7), kmeans(X, 3, seed=7)
    assert np.array_equal(a.assignments, b.assignments) and a.inertia == b.inertia


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_inertia_non_increasing_and_assignments_valid(seed, k):
    X = np.random.default_rng(seed).normal(size=(30, 2))
    r = kmeans(X, k, seed=seed, n_init=1)
    h = np.array(r.inertia_history)
    assert np.all(np.diff(h) <= 1e-9 * max(1.0, h[0]))
    assert r.assignments.min() >= 0 and r.assignments.max() < k
    assert r.inertia >= 0


@given(st.integers(0, 10_000))
def test_row_permutation_invariance(seed):
    X, _ = blobs(seed, k=3, per=15)
    perm = np.random.default_rng(seed).permutation(X.shape[0])
    a = kmeans(X, 3, seed=1)
    b = kmeans(X[perm], 3, seed=1)
    assert adjusted_rand_index(a.assignments[perm], b.assignments) == pytest.approx(1.0)
