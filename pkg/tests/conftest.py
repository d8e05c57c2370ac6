"""Shared fixtures and independent oracle implementations.

The oracles deliberately reimplement algorithms from first principles
(enumeration, transitive closure, entropy formulas) so the tests do not
share code paths with the package under test.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from scim.scenemodel import SceneBundle, SceneManifest
from scim.synthgen import SynthConfig, generate


# ---------------------------------------------------------------------------
# acceptance reporting

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


# ---------------------------------------------------------------------------
# fixtures

@pytest.fixture(scope="session")
def small_bundle() -> SceneBundle:
    """A compact, well-separated scene used by many integration tests."""
    config = SynthConfig(n_known_classes=4, n_novel_classes=1, frames=6,
                         points_per_frame=120, class_center_separation=5.0,
                         descriptor_noise_sigma=0.5, prediction_error_rate=0.1,
                         seed=3)
    return generate(config)


def make_manifest(n_frames=1, classes=("a", "b"), outliers=(),
                  modalities=None, voxel_size=0.5) -> SceneManifest:
    return SceneManifest(
        scene_id="test",
        voxel_size=voxel_size,
        classes=list(classes),
        outlier_classes=list(outliers),
        modalities=dict(modalities or {"segm": 2}),
        frames=[f"{i:06d}" for i in range(n_frames)],
    )


def make_bundle(xyz, pred, cert, label=None, manifest=None, frame_index=None,
                descriptors=None) -> SceneBundle:
    """Hand-built single-frame bundle for micro-scene tests."""
    xyz = np.asarray(xyz, dtype=np.float32)
    n = len(xyz)
    pred = np.asarray(pred, dtype=np.uint16)
    if manifest is None:
        n_classes = int(pred.max(initial=0)) + 1
        manifest = make_manifest(classes=[f"k{i}" for i in range(n_classes)])
    if frame_index is None:
        frame_index = np.zeros(n, dtype=np.int32)
    if label is None:
        label = np.full(n, -1, dtype=np.int32)
    if descriptors is None:
        descriptors = {mod: np.zeros((n, d), dtype=np.float32)
                       for mod, d in manifest.modalities.items()}
    return SceneBundle(
        manifest=manifest,
        frame_index=np.asarray(frame_index, dtype=np.int32),
        pixels=np.zeros((n, 2), dtype=np.uint16),
        xyz=xyz,
        pred=pred,
        cert=np.asarray(cert, dtype=np.float32),
        label=np.asarray(label, dtype=np.int32),
        descriptors=descriptors,
    )


def dyadic_distance_matrix(rng: np.random.Generator, n: int) -> np.ndarray:
    """Symmetric distances that are multiples of 1/64, so small sums are
    exactly representable and order-independent in float64."""
    w = rng.integers(1, 65, size=(n, n)).astype(np.float64) / 64.0
    w = np.minimum(w, w.T)
    np.fill_diagonal(w, 0.0)
    return w


# ---------------------------------------------------------------------------
# spanning-tree oracles

def spanning_trees_by_subsets(n: int):
    """All spanning trees of K_n by edge-subset enumeration (n small)."""
    edges = list(itertools.combinations(range(n), 2))
    for subset in itertools.combinations(edges, n - 1):
        parent = list(range(n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        acyclic = True
        for a, b in subset:
            ra, rb = find(a), find(b)
            if ra == rb:
                acyclic = False
                break
            parent[ra] = rb
        if acyclic:
            yield subset


def all_tree_weights_pruefer(weights: np.ndarray) -> np.ndarray:
    """Total weight of every labeled spanning tree of K_n via vectorized
    Pruefer decoding; n >= 2."""
    n = len(weights)
    if n == 2:
        return np.array([weights[0, 1]])
    seqs = np.array(list(itertools.product(range(n), repeat=n - 2)), dtype=np.int64)
    t = len(seqs)
    degree = np.ones((t, n), dtype=np.int64)
    np.add.at(degree, (np.repeat(np.arange(t), n - 2), seqs.ravel()), 1)
    remaining = np.zeros((t, n), dtype=np.int64)
    np.add.at(remaining, (np.repeat(np.arange(t), n - 2), seqs.ravel()), 1)
    totals = np.zeros(t)
    rows = np.arange(t)
    for k in range(n - 2):
        j = seqs[:, k]
        eligible = (degree == 1) & (remaining == 0)
        leaf = np.argmax(eligible, axis=1)  # smallest eligible node
        totals += weights[leaf, j]
        degree[rows, leaf] -= 1
        degree[rows, j] -= 1
        remaining[rows, j] -= 1
    # the last edge joins the two remaining degree-1 nodes
    last = np.argsort(degree, axis=1, kind="stable")[:, -2:]
    a = np.minimum(last[:, 0], last[:, 1])
    b = np.maximum(last[:, 0], last[:, 1])
    totals += weights[a, b]
    return totals


def mst_weight_bruteforce(weights: np.ndarray) -> float:
    return float(all_tree_weights_pruefer(weights).min())


def single_linkage_heights_naive(dist: np.ndarray) -> np.ndarray:
    """Merge heights of naive O(n^3) single-linkage agglomeration."""
    n = len(dist)
    clusters = [[i] for i in range(n)]
    heights = []
    while len(clusters) > 1:
        best = (np.inf, 0, 1)
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                d = min(dist[i, j] for i in clusters[a] for j in clusters[b])
                if d < best[0]:
                    best = (d, a, b)
        d, a, b = best
        heights.append(d)
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    return np.array(heights)


# ---------------------------------------------------------------------------
# clustering / matching oracles

def dbscan_oracle(dist: np.ndarray, eps: float, min_samples: int):
    """Transitive-closure DBSCAN: boolean matrix closure over core points,
    border points attached to the lowest-index core in range."""
    n = len(dist)
    within = dist <= eps
    core = within.sum(axis=1) >= min_samples
    reach = within & core[None, :] & core[:, None]
    np.fill_diagonal(reach, True)
    closure = reach.copy()
    for _ in range(n):
        nxt = closure | ((closure.astype(np.int64) @ closure.astype(np.int64)) > 0)
        if np.array_equal(nxt, closure):
            break
        closure = nxt
    labels = np.full(n, -1, dtype=np.int64)
    cid = 0
    for i in range(n):
        if core[i] and labels[i] == -1:
            labels[closure[i] & core] = cid
            cid += 1
    for j in range(n):
        if core[j] or labels[j] != -1:
            continue
        cores_near = np.flatnonzero(within[j] & core)
        if len(cores_near):
            labels[j] = labels[cores_near[0]]
    return labels


def hungarian_oracle(counts: np.ndarray, bound: dict[int, int]):
    """Exhaustive constrained matching over all injective partial maps.

    ``bound`` maps cluster column -> label row it is supervised to. Returns
    the best mapping {row: col} by (total, lexicographic key); the key fixes
    rows in ascending order preferring small columns, unmatched last.
    """
    n_l, n_c = counts.shape
    best_total = -1
    best_key = None
    best_map: dict[int, int] = {}

    def recurse(row, used, total, key, mapping):
        nonlocal best_total, best_key, best_map
        if row == n_l:
            # maximize total, then minimize key (columns small, unmatched last)
            if (total > best_total
                    or (total == best_total and key < best_key)):
                best_total, best_key, best_map = total, list(key), dict(mapping)
            return
        for col in list(range(n_c)) + [n_c]:  # n_c encodes "unmatched"
            if col < n_c:
                if col in used:
                    continue
                if col in bound and bound[col] != row:
                    continue
                mapping[row] = col
                recurse(row + 1, used | {col}, total + int(counts[row, col]),
                        key + [col], mapping)
                del mapping[row]
            else:
                recurse(row + 1, used, total, key + [n_c], mapping)

    recurse(0, frozenset(), 0, [], {})
    return best_map, best_total


def v_score_oracle(labels: np.ndarray, clusters: np.ndarray) -> float:
    """v-measure from the textbook entropy formulas."""
    keep = (labels >= 0) & (clusters >= 0)
    labels, clusters = labels[keep], clusters[keep]
    n = len(labels)

    def h(groups):
        total = sum(groups)
        ent = 0.0
        for g in groups:
            if g > 0:
                p = g / total
                ent -= p * np.log(p)
        return ent

    lab_ids = np.unique(labels)
    clu_ids = np.unique(clusters)
    h_l = h([(labels == l).sum() for l in lab_ids])
    h_c = h([(clusters == c).sum() for c in clu_ids])
    h_l_given_c = 0.0
    h_c_given_l = 0.0
    for c in clu_ids:
        mask = clusters == c
        w = mask.sum() / n
        sub = labels[mask]
        h_l_given_c += w * h([(sub == l).sum() for l in lab_ids])
    for l in lab_ids:
        mask = labels == l
        w = mask.sum() / n
        sub = clusters[mask]
        h_c_given_l += w * h([(sub == c).sum() for c in clu_ids])
    hom = 1.0 if h_l == 0 else 1.0 - h_l_given_c / h_l
    com = 1.0 if h_c == 0 else 1.0 - h_c_given_l / h_c
    if hom + com == 0:
        return 0.0
    return 2 * hom * com / (hom + com)
