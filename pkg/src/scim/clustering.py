"""Clustering backends over precomputed distance matrices.

All backends are deterministic given their inputs, break ties by lowest
index, and expose both a functional interface returning a
:class:`ClusterSolution` and an sklearn-style estimator (``fit`` on a
square distance matrix, ``labels_`` afterwards).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

NOISE = -1


@dataclass
class ClusterSolution:
    """Per-vertex cluster assignment with NOISE = -1.

    Cluster ids are contiguous ``0..n_clusters-1``, ordered by first
    occurrence in the assignment array.
    """

    labels: np.ndarray
    n_clusters: int
    backend: str
    params: dict = field(default_factory=dict)
    converged: bool = True

    def cluster_members(self, cid: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cid)


def _canonicalize(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel clusters to contiguous ids in order of first occurrence."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.full_like(labels, NOISE)
    mapping: dict[int, int] = {}
    for i, lab in enumerate(labels):
        if lab == NOISE:
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out, len(mapping)


def _check_distance_matrix(dist) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ValueError(f"expected a square distance matrix, got shape {dist.shape}")
    return dist


# ---------------------------------------------------------------------------
# HDBSCAN

def core_distances(dist: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance of each point to its ``min_samples``-th nearest other point."""
    n = len(dist)
    if n <= min_samples:
        return np.full(n, np.inf)
    part = np.sort(dist, axis=1)  # column 0 is the self-distance 0
    return part[:, min_samples]


def mutual_reachability(dist: np.ndarray, core: np.ndarray) -> np.ndarray:
    """max(core_i, core_j, d_ij) with zero diagonal."""
    mr = np.maximum(dist, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(mr, 0.0)
    return mr


def mst_prim(weights: np.ndarray) -> np.ndarray:
    """Minimum spanning tree of a dense weighted graph (Prim, O(n^2)).

    Returns (n-1, 3) rows [a, b, w] sorted by ascending weight.
    """
    n = len(weights)
    if n <= 1:
        return np.empty((0, 3))
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    best_from = np.zeros(n, dtype=np.int64)
    in_tree[0] = True
    best = weights[0].copy()
    best[0] = np.inf
    edges = np.empty((n - 1, 3))
    for k in range(n - 1):
        j = int(np.argmin(best))
        edges[k] = (best_from[j], j, best[j])
        in_tree[j] = True
        best[j] = np.inf
        update = weights[j] < best
        update &= ~in_tree
        best_from[update] = j
        best[update] = weights[j][update]
    order = np.argsort(edges[:, 2], kind="stable")
    return edges[order]


def single_linkage(mst_edges: np.ndarray, n: int) -> np.ndarray:
    """Single-linkage hierarchy from ascending MST edges.

    Returns an (n-1, 4) linkage array [left, right, height, size] with new
    clusters numbered n, n+1, ... as in scipy's convention.
    """
    parent = np.arange(2 * n - 1, dtype=np.int64)
    size = np.ones(2 * n - 1, dtype=np.int64)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    merges = np.empty((len(mst_edges), 4))
    nxt = n
    for k, (a, b, w) in enumerate(mst_edges):
        ra, rb = find(int(a)), find(int(b))
        merges[k] = (ra, rb, w, size[ra] + size[rb])
        parent[ra] = parent[rb] = nxt
        size[nxt] = size[ra] + size[rb]
        nxt += 1
    return merges


@dataclass
class CondensedTree:
    """Hierarchy condensed by minimum cluster size.

    ``records`` rows are (parent_cluster, child, lambda, size); ``child`` is
    either another condensed cluster id or a point index (size 1 and the
    child id is < n). Cluster ids start at ``n``.
    """

    n_points: int
    records: list[tuple[int, int, float, int]]


def condense_tree(linkage: np.ndarray, n: int, min_cluster_size: int) -> CondensedTree:
    if n == 0:
        return CondensedTree(0, [])
    children: dict[int, tuple[int, int, float]] = {}
    for k in range(len(linkage)):
        children[n + k] = (int(linkage[k, 0]), int(linkage[k, 1]), float(linkage[k, 2]))
    counts = np.ones(2 * n - 1, dtype=np.int64)
    for k in range(len(linkage)):
        counts[n + k] = int(linkage[k, 3])

    root = 2 * n - 2 if n > 1 else 0
    records: list[tuple[int, int, float, int]] = []
    relabel = {root: n}
    next_label = n + 1
    stack = [root]

    def leaves_under(node) -> list[int]:
        out, todo = [], [node]
        while todo:
            x = todo.pop()
            if x < n:
                out.append(x)
            else:
                l, r, _ = children[x]
                todo.extend((l, r))
        return out

    while stack:
        node = stack.pop()
        if node < n:
            continue
        left, right, height = children[node]
        lam = 1.0 / max(height, 1e-12)
        cl, cr = counts[left], counts[right]
        cond = relabel[node]
        if cl >= min_cluster_size and cr >= min_cluster_size:
            for child in (left, right):
                relabel[child] = next_label
                records.append((cond, next_label, lam, int(counts[child])))
                next_label += 1
                stack.append(child)
        elif cl >= min_cluster_size or cr >= min_cluster_size:
            big, small = (left, right) if cl >= min_cluster_size else (right, left)
            for p in leaves_under(small):
                records.append((cond, p, lam, 1))
            relabel[big] = cond
            stack.append(big)
        else:
            for p in leaves_under(node):
                records.append((cond, p, lam, 1))
    return CondensedTree(n, records)


def eom_select(tree: CondensedTree) -> tuple[set[int], dict[int, float]]:
    """Excess-of-mass cluster selection over the condensed tree."""
    births: dict[int, float] = {}
    stability: dict[int, float] = {}
    children: dict[int, list[int]] = {}
    n = tree.n_points
    root = n
    births[root] = 0.0
    stability.setdefault(root, 0.0)
    for parent, child, lam, size in tree.records:
        stability.setdefault(parent, 0.0)
        if child >= n:  # condensed child cluster
            births[child] = lam
            stability.setdefault(child, 0.0)
            children.setdefault(parent, []).append(child)
        stability[parent] += (lam - births[parent]) * size

    selected: set[int] = set()
    subtree: dict[int, float] = {}
    for cluster in sorted(stability, reverse=True):  # children before parents
        kids = children.get(cluster, [])
        child_sum = sum(subtree[k] for k in kids)
        if kids and child_sum > stability[cluster]:
            subtree[cluster] = child_sum
        else:
            subtree[cluster] = stability[cluster]
            selected.add(cluster)
            # unselect any selected descendant
            todo = list(kids)
            while todo:
                k = todo.pop()
                selected.discard(k)
                todo.extend(children.get(k, []))
    return selected, stability


def _extract_labels(tree: CondensedTree, selected: set[int]) -> np.ndarray:
    n = tree.n_points
    labels = np.full(n, NOISE, dtype=np.int64)
    point_records: dict[int, list[int]] = {}
    child_clusters: dict[int, list[int]] = {}
    for parent, child, _lam, _size in tree.records:
        if child < n:
            point_records.setdefault(parent, []).append(child)
        else:
            child_clusters.setdefault(parent, []).append(child)
    for cid, cluster in enumerate(sorted(selected)):
        todo = [cluster]
        while todo:
            c = todo.pop()
            for p in point_records.get(c, []):
                labels[p] = cid
            todo.extend(child_clusters.get(c, []))
    return labels


def hdbscan_labels(dist: np.ndarray, min_cluster_size: int, min_samples: int) -> np.ndarray:
    """Full HDBSCAN pipeline on a precomputed distance matrix."""
    dist = _check_distance_matrix(dist)
    n = len(dist)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if n < min_cluster_size or n <= min_samples:
        return np.full(n, NOISE, dtype=np.int64)
    core = core_distances(dist, min_samples)
    mr = mutual_reachability(dist, core)
    linkage = single_linkage(mst_prim(mr), n)
    tree = condense_tree(linkage, n, min_cluster_size)
    selected, _ = eom_select(tree)
    labels, _ = _canonicalize(_extract_labels(tree, selected))
    return labels


# ---------------------------------------------------------------------------
# DBSCAN

def dbscan_labels(dist: np.ndarray, eps: float, min_samples: int) -> np.ndarray:
    """Classic density-reachability clustering; border points join the
    lowest-index core point that reaches them."""
    dist = _check_distance_matrix(dist)
    n = len(dist)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    within = dist <= eps
    core = within.sum(axis=1) >= min_samples  # neighborhood includes self
    cid = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        todo = [i]
        labels[i] = cid
        while todo:
            j = todo.pop()
            for k in np.flatnonzero(within[j] & core):
                if labels[k] == NOISE:
                    labels[k] = cid
                    todo.append(int(k))
        cid += 1
    for j in range(n):
        if labels[j] != NOISE or core[j]:
            continue
        reach = np.flatnonzero(within[j] & core)
        if len(reach):
            labels[j] = labels[reach[0]]
    labels, _ = _canonicalize(labels)
    return labels


# ---------------------------------------------------------------------------
# MCL

def mcl_labels(dist: np.ndarray, inflation: float, prune_threshold: float,
               max_iters: int = 100, bandwidth: float | None = None,
               tol: float = 1e-6) -> tuple[np.ndarray, bool]:
    """Markov clustering on a Gaussian similarity of the distance matrix.

    Similarities use ``exp(-d^2 / (2 b^2))`` with unit self-loops; b defaults
    to the median off-diagonal distance. Returns (labels, converged).
    """
    dist = _check_distance_matrix(dist)
    n = len(dist)
    if n == 0:
        return np.empty(0, dtype=np.int64), True
    if n == 1:
        return np.zeros(1, dtype=np.int64), True
    if bandwidth is None:
        off = dist[~np.eye(n, dtype=bool)]
        med = float(np.median(off))
        bandwidth = med if med > 0 else 1.0
    sim = np.exp(-dist ** 2 / (2.0 * bandwidth ** 2))
    np.fill_diagonal(sim, 1.0)
    m = sim / sim.sum(axis=0, keepdims=True)

    converged = False
    for _ in range(max_iters):
        prev = m
        m = m @ m                       # expansion
        m = np.power(m, inflation)      # inflation
        keep = m >= prune_threshold
        keep[np.argmax(m, axis=0), np.arange(n)] = True  # never empty a column
        m = np.where(keep, m, 0.0)
        m /= m.sum(axis=0, keepdims=True)
        if float(np.abs(m - prev).max()) < tol:
            converged = True
            break

    parent = np.arange(n)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    attractors = np.flatnonzero(m.max(axis=1) > 1e-9)
    for i in attractors:
        for j in np.flatnonzero(m[i] > 1e-9):
            parent[find(j)] = find(i)
    # safety: attach any untouched column to its dominant attractor row
    for j in range(n):
        if find(j) == j and m[j, j] <= 1e-9:
            parent[find(j)] = find(int(np.argmax(m[:, j])))
    labels = np.array([find(i) for i in range(n)])
    labels, _ = _canonicalize(labels)
    return labels, converged


# ---------------------------------------------------------------------------
# solution helpers, estimators, nearest-neighbor extension

def make_solution(labels: np.ndarray, backend: str, params: dict,
                  converged: bool = True) -> ClusterSolution:
    labels, n_clusters = _canonicalize(labels)
    return ClusterSolution(labels=labels, n_clusters=n_clusters,
                           backend=backend, params=dict(params), converged=converged)


def hdbscan(dist: np.ndarray, min_cluster_size: int = 5,
            min_samples: int = 5) -> ClusterSolution:
    labels = hdbscan_labels(dist, min_cluster_size, min_samples)
    return make_solution(labels, "hdbscan",
                         {"min_cluster_size": min_cluster_size, "min_samples": min_samples})


def dbscan(dist: np.ndarray, eps: float = 3.5, min_samples: int = 10) -> ClusterSolution:
    labels = dbscan_labels(dist, eps, min_samples)
    return make_solution(labels, "dbscan", {"eps": eps, "min_samples": min_samples})


def mcl(dist: np.ndarray, inflation: float = 2.0, prune_threshold: float = 1e-3,
        max_iters: int = 100, bandwidth: float | None = None) -> ClusterSolution:
    labels, converged = mcl_labels(dist, inflation, prune_threshold, max_iters, bandwidth)
    return make_solution(labels, "mcl",
                         {"inflation": inflation, "prune_threshold": prune_threshold,
                          "max_iters": max_iters}, converged=converged)


def cluster_backend(dist: np.ndarray, backend: str, params: dict) -> ClusterSolution:
    """Dispatch to a backend by name with keyword params."""
    if backend == "hdbscan":
        return hdbscan(dist, int(params["min_cluster_size"]), int(params["min_samples"]))
    if backend == "dbscan":
        return dbscan(dist, float(params["eps"]), int(params["min_samples"]))
    if backend == "mcl":
        return mcl(dist, float(params["inflation"]), float(params["prune_threshold"]),
                   int(params.get("max_iters", 100)))
    raise ValueError(f"unknown clustering backend {backend!r}")


def nn_extend(solution: ClusterSolution, sampled_indices: np.ndarray,
              cross_dist: np.ndarray, n_total: int) -> ClusterSolution:
    """Extend a sampled clustering to all vertices by nearest sampled vertex.

    ``cross_dist`` is (n_total, n_sampled) in the same fused metric the
    solution was computed in. Sampled vertices keep their assignment
    (including NOISE); ties go to the lower sampled index.
    """
    sampled_indices = np.asarray(sampled_indices, dtype=np.int64)
    if len(solution.labels) != len(sampled_indices):
        raise ValueError("solution does not cover the sampled vertices")
    nearest = np.argmin(cross_dist, axis=1)  # first minimum = lowest index
    labels = solution.labels[nearest]
    labels[sampled_indices] = solution.labels
    return ClusterSolution(labels=labels, n_clusters=solution.n_clusters,
                           backend=solution.backend, params=dict(solution.params),
                           converged=solution.converged)


class HDBSCAN(BaseEstimator, ClusterMixin):
    """Density-based hierarchical clustering on a precomputed distance matrix."""

    def __init__(self, min_cluster_size=5, min_samples=5):
        self.min_cluster_size = min_cluster_size
        self.min_samples = min_samples

    def fit(self, X, y=None):
        self.labels_ = hdbscan_labels(X, self.min_cluster_size, self.min_samples)
        return self


class DBSCAN(BaseEstimator, ClusterMixin):
    """Density-reachability clustering on a precomputed distance matrix."""

    def __init__(self, eps=3.5, min_samples=10):
        self.eps = eps
        self.min_samples = min_samples

    def fit(self, X, y=None):
        self.labels_ = dbscan_labels(X, self.eps, self.min_samples)
        return self


class MarkovClustering(BaseEstimator, ClusterMixin):
    """Markov clustering (expansion/inflation) on a precomputed distance matrix."""

    def __init__(self, inflation=2.0, prune_threshold=1e-3, max_iters=100,
                 bandwidth=None):
        self.inflation = inflation
        self.prune_threshold = prune_threshold
        self.max_iters = max_iters
        self.bandwidth = bandwidth

    def fit(self, X, y=None):
        self.labels_, self.converged_ = mcl_labels(
            X, self.inflation, self.prune_threshold, self.max_iters, self.bandwidth)
        return self
