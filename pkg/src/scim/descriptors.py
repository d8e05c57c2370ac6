"""Descriptor normalization, pairwise distances, PCA, scale harmonization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

from scim.scenemodel import SceneBundle, confident_subset


def l2_normalize(desc: np.ndarray) -> np.ndarray:
    """Scale every row to unit Euclidean norm; zero rows stay zero."""
    desc = np.asarray(desc, dtype=np.float64)
    norms = np.linalg.norm(desc, axis=1, keepdims=True)
    safe = np.where(norms == 0, 1.0, norms)
    return desc / safe


def pairwise_distances(desc: np.ndarray, indices=None) -> np.ndarray:
    """Exact symmetric Euclidean distance matrix over the selected rows."""
    desc = np.asarray(desc, dtype=np.float64)
    if indices is not None:
        desc = desc[np.asarray(indices)]
    if len(desc) == 0:
        return np.zeros((0, 0))
    return squareform(pdist(desc, metric="euclidean"))


def cross_distances(queries: np.ndarray, refs: np.ndarray) -> np.ndarray:
    from scipy.spatial.distance import cdist
    return cdist(np.asarray(queries, dtype=np.float64),
                 np.asarray(refs, dtype=np.float64))


def nearest_rank_quantile(values: np.ndarray, q: float) -> float:
    """Nearest-rank quantile: element at 1-based rank ceil(q * len)."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    if len(values) == 0:
        raise ValueError("empty value set")
    rank = max(1, math.ceil(q * len(values)))
    return float(values[rank - 1])


@dataclass
class HarmonizationFactors:
    """Per-modality scale factors making cross-modality distances commensurate.

    ``alpha[m]`` is 1/q where q is the 0.9 nearest-rank quantile of
    reference-pair distances in modality m; modalities whose quantile was
    zero carry ``alpha = 1`` and appear in ``degenerate``.
    """

    alpha: dict[str, float]
    degenerate: set[str] = field(default_factory=set)


def harmonization_factor(dist: np.ndarray, pairs: np.ndarray,
                         quantile: float = 0.9) -> tuple[float, bool]:
    """Scale factor for one modality from reference-pair distances."""
    pairs = np.asarray(pairs)
    if len(pairs) == 0:
        raise ValueError("reference_pairs must be nonempty")
    d = dist[pairs[:, 0], pairs[:, 1]]
    q = nearest_rank_quantile(d, quantile)
    if q == 0.0:
        return 1.0, True
    return 1.0 / q, False


def harmonize(dists: dict[str, np.ndarray], reference_pairs: np.ndarray,
              quantile: float = 0.9) -> HarmonizationFactors:
    """Compute harmonization factors for every modality."""
    factors = HarmonizationFactors(alpha={})
    for mod, dist in dists.items():
        a, degenerate = harmonization_factor(dist, reference_pairs, quantile)
        factors.alpha[mod] = a
        if degenerate:
            factors.degenerate.add(mod)
    return factors


def sample_reference_pairs(bundle: SceneBundle, delta_conf: float,
                           n_pairs: int = 10_000, seed: int = 0) -> np.ndarray:
    """Uniform random pairs of confident vertices sharing a predicted class.

    Pairs are drawn uniformly over all same-class confident pairs (classes
    weighted by their pair counts), with replacement across draws.
    """
    rng = np.random.default_rng(seed)
    conf = confident_subset(bundle, delta_conf)
    groups = []
    for cls in np.unique(bundle.pred[conf]):
        members = conf[bundle.pred[conf] == cls]
        if len(members) >= 2:
            groups.append(members)
    if not groups:
        raise ValueError("no confident same-class pair available; lower delta_conf")
    weights = np.array([len(g) * (len(g) - 1) / 2 for g in groups], dtype=np.float64)
    weights /= weights.sum()
    choice = rng.choice(len(groups), size=n_pairs, p=weights)
    pairs = np.empty((n_pairs, 2), dtype=np.int64)
    for k, gi in enumerate(choice):
        i, j = rng.choice(len(groups[gi]), size=2, replace=False)
        pairs[k] = groups[gi][i], groups[gi][j]
    return pairs


def pca_reduce(desc: np.ndarray, out_dim: int) -> np.ndarray:
    """Project rows onto the top principal components of the centered matrix.

    Components are ordered by descending eigenvalue of the d x d covariance;
    each component's largest-magnitude loading is made positive.
    """
    desc = np.asarray(desc, dtype=np.float64)
    n, d = desc.shape
    if not (1 <= out_dim <= min(n, d)):
        raise ValueError(f"out_dim {out_dim} not in [1, min(rows, cols)={min(n, d)}]")
    centered = desc - desc.mean(axis=0)
    cov = centered.T @ centered / max(n - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:out_dim]
    components = eigvecs[:, order]
    flips = np.sign(components[np.argmax(np.abs(components), axis=0),
                               np.arange(out_dim)])
    flips[flips == 0] = 1.0
    return centered @ (components * flips)


def pca_spectrum(desc: np.ndarray) -> np.ndarray:
    """Covariance eigenvalues in descending order (for diagnostics/tests)."""
    desc = np.asarray(desc, dtype=np.float64)
    centered = desc - desc.mean(axis=0)
    cov = centered.T @ centered / max(len(desc) - 1, 1)
    return np.sort(np.linalg.eigvalsh(cov))[::-1]
