"""Clustering backends against independent oracles."""

import numpy as np
import pytest

from scim import clustering

from conftest import (all_tree_weights_pruefer, dbscan_oracle,
                      dyadic_distance_matrix, mst_weight_bruteforce,
                      single_linkage_heights_naive, spanning_trees_by_subsets)


def blob_distances(centers, sizes, scale=0.05, seed=0):
    rng = np.random.default_rng(seed)
    pts = np.concatenate([c + rng.normal(scale=scale, size=(s, len(c)))
                          for c, s in zip(np.atleast_2d(centers), sizes)])
    from scim.descriptors import pairwise_distances
    return pairwise_distances(pts)


# ---------------------------------------------------------------------------
# MST / single linkage / HDBSCAN

def test_pruefer_oracle_agrees_with_subset_enumeration():
    # cross-check the two independent spanning-tree oracles on n = 4..6
    rng = np.random.default_rng(0)
    for n in (4, 5, 6):
        w = dyadic_distance_matrix(rng, n)
        totals = all_tree_weights_pruefer(w)
        subset_totals = sorted(sum(w[a, b] for a, b in tree)
                               for tree in spanning_trees_by_subsets(n))
        assert len(totals) == n ** (n - 2) == len(subset_totals)
        np.testing.assert_array_equal(np.sort(totals), subset_totals)


def test_mst_weight_matches_bruteforce():
    # acceptance-criterion oracle: 200 random instances, n <= 8, exact
    rng = np.random.default_rng(1)
    for trial in range(200):
        n = int(rng.integers(2, 9))
        w = dyadic_distance_matrix(rng, n)
        edges = clustering.mst_prim(w)
        assert edges.shape == (n - 1, 3)
        assert float(edges[:, 2].sum()) == mst_weight_bruteforce(w), f"trial {trial}"


def test_mst_edges_sorted_and_spanning():
    rng = np.random.default_rng(2)
    w = dyadic_distance_matrix(rng, 30)
    edges = clustering.mst_prim(w)
    assert (np.diff(edges[:, 2]) >= 0).all()
    parent = list(range(30))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for a, b, _ in edges:
        ra, rb = find(int(a)), find(int(b))
        assert ra != rb
        parent[ra] = rb


def test_single_linkage_heights_match_naive():
    rng = np.random.default_rng(3)
    for n in (5, 16, 33, 64):
        pts = rng.normal(size=(n, 3))
        from scim.descriptors import pairwise_distances
        dist = pairwise_distances(pts)
        linkage = clustering.single_linkage(clustering.mst_prim(dist), n)
        expected = single_linkage_heights_naive(dist)
        np.testing.assert_allclose(np.sort(linkage[:, 2]), np.sort(expected),
                                   atol=1e-9)


def test_single_linkage_scipy_convention():
    dist = np.array([[0.0, 1.0, 9.0], [1.0, 0.0, 5.0], [9.0, 5.0, 0.0]])
    z = clustering.single_linkage(clustering.mst_prim(dist), 3)
    # first merge joins points 0 and 1 at height 1, forming cluster 3 of size 2
    assert z[0].tolist() == [0.0, 1.0, 1.0, 2.0]
    assert z[1, 2] == 5.0 and z[1, 3] == 3.0
    assert {int(z[1, 0]), int(z[1, 1])} == {2, 3}


def test_core_distances():
    dist = np.array([[0.0, 1.0, 2.0, 4.0],
                     [1.0, 0.0, 1.5, 3.0],
                     [2.0, 1.5, 0.0, 2.5],
                     [4.0, 3.0, 2.5, 0.0]])
    # [DERIVED] with min_samples=2 each point's core distance is its 2nd
    # nearest other point: rows sorted -> [2, 1.5, 2, 3]
    np.testing.assert_allclose(clustering.core_distances(dist, 2), [2.0, 1.5, 2.0, 3.0])
    assert np.isinf(clustering.core_distances(dist, 4)).all()


def test_mutual_reachability():
    dist = np.array([[0.0, 1.0], [1.0, 0.0]])
    core = np.array([3.0, 0.5])
    mr = clustering.mutual_reachability(dist, core)
    assert mr[0, 1] == 3.0 and mr[1, 0] == 3.0
    assert mr[0, 0] == 0.0


def test_hdbscan_two_blobs():
    # acceptance-criterion case: two well-separated blobs -> exactly two
    # clusters and zero noise
    dist = blob_distances(np.array([[0.0, 0.0], [10.0, 0.0]]), [25, 25], seed=4)
    labels = clustering.hdbscan_labels(dist, min_cluster_size=5, min_samples=5)
    assert set(labels.tolist()) == {0, 1}
    assert (labels[:25] == labels[0]).all()
    assert (labels[25:] == labels[25]).all()


def test_hdbscan_three_blobs_with_sprinkled_noise():
    rng = np.random.default_rng(5)
    centers = np.array([[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]])
    dist = blob_distances(centers, [20, 20, 20], seed=6)
    labels = clustering.hdbscan_labels(dist, min_cluster_size=5, min_samples=3)
    assert len(set(labels.tolist()) - {-1}) == 3


def test_hdbscan_degenerate_sizes():
    dist = np.zeros((3, 3))
    assert (clustering.hdbscan_labels(dist, 5, 2) == clustering.NOISE).all()
    assert clustering.hdbscan_labels(np.zeros((0, 0)), 5, 2).size == 0


def test_hdbscan_label_canonical_order():
    dist = blob_distances(np.array([[0.0, 0.0], [10.0, 0.0]]), [25, 25], seed=7)
    labels = clustering.hdbscan_labels(dist, 5, 5)
    assert labels[0] == 0  # first vertex defines cluster 0


# ---------------------------------------------------------------------------
# DBSCAN

def test_dbscan_matches_transitive_closure_oracle():
    # acceptance criterion: identical partitions on 100 random instances
    rng = np.random.default_rng(8)
    from scim.descriptors import pairwise_distances
    for trial in range(100):
        n = int(rng.integers(5, 51))
        pts = rng.uniform(0, 4, size=(n, 2))
        dist = pairwise_distances(pts)
        eps = float(rng.uniform(0.3, 1.2))
        min_samples = int(rng.integers(2, 6))
        got = clustering.dbscan_labels(dist, eps, min_samples)
        want = dbscan_oracle(dist, eps, min_samples)
        got_parts = {frozenset(np.flatnonzero(got == c).tolist())
                     for c in set(got.tolist()) - {-1}}
        want_parts = {frozenset(np.flatnonzero(want == c).tolist())
                      for c in set(want.tolist()) - {-1}}
        assert got_parts == want_parts, f"trial {trial}"
        np.testing.assert_array_equal(got == -1, want == -1, err_msg=f"trial {trial}")


def test_dbscan_border_point_rule():
    # point 2 is a border in range of cores 0..1; it joins their cluster
    dist = np.array([[0.0, 0.5, 0.9, 9.0],
                     [0.5, 0.0, 0.9, 9.0],
                     [0.9, 0.9, 0.0, 9.0],
                     [9.0, 9.0, 9.0, 0.0]])
    labels = clustering.dbscan_labels(dist, eps=1.0, min_samples=3)
    assert labels.tolist() == [0, 0, 0, -1]


def test_dbscan_neighborhood_includes_self():
    # two points at eps: each neighborhood has size 2 -> cores at min_samples=2
    dist = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert clustering.dbscan_labels(dist, 1.0, 2).tolist() == [0, 0]
    assert clustering.dbscan_labels(dist, 0.5, 2).tolist() == [-1, -1]


# ---------------------------------------------------------------------------
# MCL

def test_mcl_separates_two_groups():
    dist = blob_distances(np.array([[0.0, 0.0], [12.0, 0.0]]), [15, 15], seed=9)
    labels, converged = clustering.mcl_labels(dist, inflation=2.0,
                                              prune_threshold=1e-3)
    assert converged
    assert len(set(labels.tolist())) == 2
    assert (labels[:15] == labels[0]).all() and (labels[15:] == labels[15]).all()


def test_mcl_high_inflation_fragments_more():
    rng = np.random.default_rng(10)
    from scim.descriptors import pairwise_distances
    dist = pairwise_distances(rng.uniform(0, 3, size=(40, 2)))
    low, _ = clustering.mcl_labels(dist, inflation=1.4, prune_threshold=1e-3)
    high, _ = clustering.mcl_labels(dist, inflation=4.5, prune_threshold=1e-3)
    assert len(set(high.tolist())) >= len(set(low.tolist()))


def test_mcl_column_stochastic_invariant():
    # internal fixed point: every vertex ends in exactly one cluster
    dist = blob_distances(np.array([[0.0, 0.0], [6.0, 0.0]]), [10, 10], seed=11)
    labels, _ = clustering.mcl_labels(dist, 2.0, 1e-3)
    assert (labels >= 0).all()


def test_mcl_trivial_sizes():
    labels, conv = clustering.mcl_labels(np.zeros((1, 1)), 2.0, 1e-3)
    assert labels.tolist() == [0] and conv
    labels, conv = clustering.mcl_labels(np.zeros((0, 0)), 2.0, 1e-3)
    assert labels.size == 0


# ---------------------------------------------------------------------------
# shared plumbing

def test_cluster_backend_dispatch():
    dist = blob_distances(np.array([[0.0, 0.0], [12.0, 0.0]]), [15, 15], seed=9)
    for backend, params in [("hdbscan", {"min_cluster_size": 5, "min_samples": 3}),
                            ("dbscan", {"eps": 0.5, "min_samples": 3}),
                            ("mcl", {"inflation": 2.0, "prune_threshold": 1e-3})]:
        sol = clustering.cluster_backend(dist, backend, params)
        assert sol.backend == backend
        assert sol.n_clusters == 2
    with pytest.raises(ValueError):
        clustering.cluster_backend(dist, "kmeans", {})


def test_nn_extend():
    sol = clustering.ClusterSolution(labels=np.array([0, 1, -1]), n_clusters=2,
                                     backend="hdbscan", params={})
    sampled = np.array([1, 3, 5])
    cross = np.array([
        [0.1, 0.9, 0.9],   # vertex 0 -> sampled 1 -> cluster 0
        [0.0, 0.5, 0.5],   # sampled vertex keeps its own label
        [0.9, 0.1, 0.9],   # vertex 2 -> sampled 3 -> cluster 1
        [0.5, 0.0, 0.5],
        [0.5, 0.5, 0.5],   # tie -> lowest sampled index -> cluster 0
        [0.9, 0.9, 0.0],
        [0.9, 0.8, 0.7],   # vertex 6 -> sampled 5 -> NOISE propagates
    ])
    out = clustering.nn_extend(sol, sampled, cross, 7)
    assert out.labels.tolist() == [0, 0, 1, 1, 0, -1, -1]
    with pytest.raises(ValueError):
        clustering.nn_extend(sol, np.array([0, 1]), cross, 7)


def test_estimators_sklearn_shape():
    dist = blob_distances(np.array([[0.0, 0.0], [10.0, 0.0]]), [12, 12], seed=13)
    for est in (clustering.HDBSCAN(min_cluster_size=5, min_samples=3),
                clustering.DBSCAN(eps=0.5, min_samples=3),
                clustering.MarkovClustering(inflation=2.0)):
        got = est.fit(dist).labels_
        assert len(got) == 24
        assert est.get_params()  # sklearn BaseEstimator plumbing works
    assert clustering.MarkovClustering().fit(dist).converged_
