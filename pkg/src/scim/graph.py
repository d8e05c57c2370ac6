"""Subsampled clustering-graph construction and the Potts energy diagnostic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scim.descriptors import HarmonizationFactors, pairwise_distances, pca_reduce
from scim.scenemodel import SceneBundle

NOISE = -1


@dataclass(frozen=True)
class SubsampleSpec:
    """Take up to ``points_per_frame`` random vertices from every
    ``frame_stride``-th frame."""

    frame_stride: int = 5
    points_per_frame: int = 100
    seed: int = 0


@dataclass
class EdgeWeights:
    """Per-modality convex weights (non-negative, summing to 1)."""

    weights: dict[str, float]

    def __post_init__(self):
        total = sum(self.weights.values())
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("descriptor weights must be non-negative")
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"descriptor weights sum to {total}, expected 1")


@dataclass
class ClusteringGraph:
    """A sampled vertex set and its fused distance matrix.

    ``modality_dists`` keeps the alpha-scaled per-modality matrices so the
    fusion can be redone cheaply for new weights (the optimizer does this on
    every evaluation).
    """

    sampled_indices: np.ndarray
    fused: np.ndarray
    modality_dists: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.sampled_indices)


def subsample(bundle: SceneBundle, spec: SubsampleSpec) -> np.ndarray:
    """Deterministic random subsample of the scene; sorted ascending."""
    rng = np.random.default_rng(spec.seed)
    picked = []
    n_frames = len(bundle.manifest.frames)
    for fi in range(0, n_frames, spec.frame_stride):
        members = bundle.frame_vertex_indices(fi)
        if len(members) <= spec.points_per_frame:
            picked.append(members)
        else:
            sel = rng.choice(len(members), size=spec.points_per_frame, replace=False)
            picked.append(members[sel])
    if not picked:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(picked)).astype(np.int64)


def scaled_modality_dists(bundle: SceneBundle, indices: np.ndarray,
                          alphas: HarmonizationFactors,
                          modalities=None) -> dict[str, np.ndarray]:
    """Alpha-scaled Euclidean distance matrices per modality on the sample."""
    if modalities is None:
        modalities = list(bundle.descriptors)
    dists = {}
    for mod in modalities:
        if mod not in bundle.descriptors:
            raise KeyError(f"modality {mod!r} missing from bundle")
        dists[mod] = alphas.alpha[mod] * pairwise_distances(bundle.descriptors[mod], indices)
    return dists


def fuse(modality_dists: dict[str, np.ndarray], weights: EdgeWeights) -> np.ndarray:
    """Weighted sum of scaled per-modality distances."""
    fused = None
    for mod, w in weights.weights.items():
        if mod not in modality_dists:
            raise KeyError(f"modality {mod!r} missing from distance set")
        term = w * modality_dists[mod]
        fused = term if fused is None else fused + term
    if fused is None:
        raise ValueError("no modalities to fuse")
    return fused


def build_fused(bundle: SceneBundle, indices: np.ndarray, weights: EdgeWeights,
                alphas: HarmonizationFactors) -> ClusteringGraph:
    """Multi-descriptor graph with fused edge weights over the sample."""
    dists = scaled_modality_dists(bundle, indices, alphas, list(weights.weights))
    return ClusteringGraph(sampled_indices=np.asarray(indices, dtype=np.int64),
                           fused=fuse(dists, weights), modality_dists=dists)


def entropy_proxy(bundle: SceneBundle) -> np.ndarray:
    """Per-vertex uncertainty gate in [0, 1]: 1 - min-max normalized cert."""
    cert = bundle.cert.astype(np.float64)
    if len(cert) == 0:
        return cert
    lo, hi = float(cert.min()), float(cert.max())
    if hi == lo:
        return np.zeros_like(cert)
    return 1.0 - (cert - lo) / (hi - lo)


def build_nakajima(bundle: SceneBundle, indices: np.ndarray,
                   entropy: np.ndarray | None = None) -> ClusteringGraph:
    """Entropy-gated two-term edge function over segmentation and geometric
    descriptors: confident vertices weigh the segmentation term, uncertain
    vertices the geometric term."""
    for mod in ("segm", "geom"):
        if mod not in bundle.descriptors:
            raise KeyError(f"modality {mod!r} missing from bundle")
    if entropy is None:
        entropy = entropy_proxy(bundle)
    entropy = np.asarray(entropy, dtype=np.float64)
    if entropy.min(initial=0) < 0 or entropy.max(initial=0) > 1:
        raise ValueError("entropy proxy must lie in [0, 1]")
    idx = np.asarray(indices, dtype=np.int64)
    h = entropy[idx][:, None]
    segm_term = pairwise_distances((1.0 - h) * bundle.descriptors["segm"][idx])
    geom_term = pairwise_distances(h * bundle.descriptors["geom"][idx])
    return ClusteringGraph(sampled_indices=idx, fused=segm_term + geom_term)


def build_uhlemeyer(bundle: SceneBundle, outlier_indices: np.ndarray,
                    pca_dim: int) -> ClusteringGraph:
    """Graph over outlier vertices only, linked by PCA-reduced visual
    descriptors of an image-classification backbone."""
    if "imgn" not in bundle.descriptors:
        raise KeyError("modality 'imgn' missing from bundle")
    idx = np.asarray(outlier_indices, dtype=np.int64)
    if len(idx) == 0:
        raise ValueError("empty outlier set: every vertex is confident")
    rows = bundle.descriptors["imgn"][idx]
    pca_dim = min(pca_dim, min(rows.shape))
    reduced = pca_reduce(rows, pca_dim)
    return ClusteringGraph(sampled_indices=idx, fused=pairwise_distances(reduced))


def clustering_energy(graph: ClusteringGraph, assignment: np.ndarray) -> float:
    """Potts energy: sum of edge weights over unordered pairs assigned to
    different clusters. NOISE vertices count as singleton clusters."""
    labels = np.asarray(assignment, dtype=np.int64).copy()
    if len(labels) != graph.n:
        raise ValueError("assignment does not cover the sampled vertices")
    noise = labels == NOISE
    if noise.any():
        base = labels.max(initial=0) + 1
        labels[noise] = base + np.arange(int(noise.sum()))
    disagree = labels[:, None] != labels[None, :]
    return float(np.sum(np.triu(graph.fused * disagree, k=1)))
