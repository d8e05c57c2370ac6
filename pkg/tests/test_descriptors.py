"""Normalization, distances, quantiles, harmonization, PCA."""

import math

import numpy as np
import pytest

from scim import descriptors

from conftest import make_bundle


def test_l2_normalize_rows():
    x = np.array([[3.0, 4.0], [0.0, 0.0], [0.0, -2.0]])
    out = descriptors.l2_normalize(x)
    np.testing.assert_allclose(out, [[0.6, 0.8], [0.0, 0.0], [0.0, -1.0]])


def test_pairwise_distances_symmetric_exact():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 7))
    d = descriptors.pairwise_distances(x)
    assert np.array_equal(d, d.T)          # exactly symmetric, not just close
    assert np.all(np.diag(d) == 0)
    i, j = 3, 17
    assert d[i, j] == pytest.approx(np.linalg.norm(x[i] - x[j]), rel=1e-12)


def test_pairwise_distances_with_indices():
    x = np.arange(12, dtype=float).reshape(4, 3)
    d = descriptors.pairwise_distances(x, indices=[0, 3])
    assert d.shape == (2, 2)
    assert d[0, 1] == pytest.approx(np.linalg.norm(x[0] - x[3]))


def test_cross_distances():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 1.0]])
    np.testing.assert_allclose(descriptors.cross_distances(a, b),
                               [[1.0], [math.sqrt(2)]])


def test_nearest_rank_quantile():
    # [DERIVED] nearest-rank: rank = ceil(q * n), 1-based. n=10, q=0.9 ->
    # rank 9 -> 9th smallest.
    values = np.arange(10, 0, -1, dtype=float)   # 10..1
    assert descriptors.nearest_rank_quantile(values, 0.9) == 9.0
    assert descriptors.nearest_rank_quantile(values, 0.05) == 1.0  # rank ceil(0.5)=1
    assert descriptors.nearest_rank_quantile(np.array([4.0]), 0.9) == 4.0
    with pytest.raises(ValueError):
        descriptors.nearest_rank_quantile(np.array([]), 0.9)


def test_harmonization_rank_exactness():
    # criterion: after scaling by alpha, exactly ceil(0.9 P) distances are <= 1
    rng = np.random.default_rng(7)
    n = 12
    cells = np.array([(i, j) for i in range(n) for j in range(n) if i != j])
    for _ in range(100):
        p = int(rng.integers(5, len(cells) + 1))
        d = rng.uniform(0.01, 10.0, size=p)
        pairs = cells[rng.choice(len(cells), size=p, replace=False)]
        dist = np.zeros((n, n))
        dist[pairs[:, 0], pairs[:, 1]] = d
        alpha, degenerate = descriptors.harmonization_factor(dist, pairs)
        assert not degenerate
        scaled = np.sort(alpha * d)
        rank = math.ceil(0.9 * p)
        assert np.sum(scaled <= 1.0 + 1e-12) == rank
        assert scaled[rank - 1] == pytest.approx(1.0, abs=1e-12)


def test_harmonization_degenerate_zero_quantile():
    dist = np.zeros((4, 4))
    pairs = np.array([[0, 1], [1, 2], [2, 3]])
    alpha, degenerate = descriptors.harmonization_factor(dist, pairs)
    assert alpha == 1.0 and degenerate


def test_harmonize_all_modalities():
    rng = np.random.default_rng(1)
    n = 20
    pairs = np.column_stack([rng.integers(0, n, 50), rng.integers(0, n, 50)])
    dists = {"a": rng.uniform(0, 2, (n, n)), "b": np.zeros((n, n))}
    factors = descriptors.harmonize(dists, pairs)
    assert set(factors.alpha) == {"a", "b"}
    assert factors.degenerate == {"b"}
    assert factors.alpha["b"] == 1.0


def test_sample_reference_pairs_same_class_confident():
    rng = np.random.default_rng(2)
    n = 200
    pred = rng.integers(0, 3, size=n)
    cert = rng.uniform(size=n)
    b = make_bundle(xyz=np.zeros((n, 3)), pred=pred, cert=cert)
    pairs = descriptors.sample_reference_pairs(b, 0.5, n_pairs=500, seed=0)
    assert pairs.shape == (500, 2)
    assert (pairs[:, 0] != pairs[:, 1]).all()
    assert (cert[pairs] > 0.5).all()
    assert (pred[pairs[:, 0]] == pred[pairs[:, 1]]).all()


def test_sample_reference_pairs_deterministic():
    b = make_bundle(xyz=np.zeros((50, 3)), pred=[0] * 50,
                    cert=np.linspace(0, 1, 50))
    p1 = descriptors.sample_reference_pairs(b, 0.3, n_pairs=100, seed=4)
    p2 = descriptors.sample_reference_pairs(b, 0.3, n_pairs=100, seed=4)
    np.testing.assert_array_equal(p1, p2)


def test_sample_reference_pairs_empty_raises():
    b = make_bundle(xyz=np.zeros((3, 3)), pred=[0, 1, 1], cert=[0.1, 0.1, 0.9])
    with pytest.raises(ValueError):
        descriptors.sample_reference_pairs(b, 0.8, n_pairs=10, seed=0)


def test_pca_recovers_dominant_axis():
    rng = np.random.default_rng(3)
    t = rng.normal(size=400)
    axis = np.array([1.0, 2.0, -1.0, 0.5])
    axis /= np.linalg.norm(axis)
    x = np.outer(t, axis) + rng.normal(scale=0.01, size=(400, 4))
    reduced = descriptors.pca_reduce(x, 1)
    corr = np.corrcoef(reduced[:, 0], x @ axis)[0, 1]
    assert abs(corr) > 0.999
    spectrum = descriptors.pca_spectrum(x)
    assert spectrum[0] > 100 * spectrum[1]


def test_pca_deterministic_sign():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(50, 6))
    a = descriptors.pca_reduce(x, 3)
    b = descriptors.pca_reduce(x.copy(), 3)
    np.testing.assert_array_equal(a, b)
    # the dominant loading of every component is positive by convention
    centered = x - x.mean(axis=0)
    comps, _, _, _ = np.linalg.lstsq(centered, a, rcond=None)
    for k in range(3):
        col = comps[:, k]
        assert col[np.argmax(np.abs(col))] > 0


def test_pca_preserves_distances_at_full_rank():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(30, 4))
    reduced = descriptors.pca_reduce(x, 4)
    d0 = descriptors.pairwise_distances(x)
    d1 = descriptors.pairwise_distances(reduced)
    np.testing.assert_allclose(d0, d1, atol=1e-9)


def test_pca_out_dim_validation():
    x = np.zeros((5, 3))
    with pytest.raises(ValueError):
        descriptors.pca_reduce(x, 0)
    with pytest.raises(ValueError):
        descriptors.pca_reduce(x, 4)
