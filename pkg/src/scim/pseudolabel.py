"""Merge map renderings with cluster assignments into per-frame pseudo-labels."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scim import tensorio
from scim.clustering import NOISE, ClusterSolution
from scim.scenemodel import ClassCatalog, SceneBundle
from scim.voxelmap import UNKNOWN_CLASS

PROV_MAP = 0
PROV_CLUSTER = 1
PROV_IGNORED = 2


@dataclass
class PseudoLabelConfig:
    """Thresholds for pseudo-label generation.

    ``delta`` trusts the map wherever the voxel's mean certainty reaches it;
    if None it is taken as the ``delta_percentile``-th percentile of the
    per-voxel mean certainties. Clusters merge into a predicted class only
    above ``merge_iou`` (strict).
    """

    delta: float | None = None
    delta_percentile: float = 60.0
    merge_iou: float = 0.5
    ignore_id: int = 255

    def __post_init__(self):
        if not 0.0 < self.merge_iou <= 1.0:
            raise ValueError(f"merge_iou must be in (0, 1], got {self.merge_iou}")


@dataclass
class MergeResult:
    """Outcome of cluster-to-class merging.

    ``cluster_class`` maps every cluster id to a known class id (merged) or
    a freshly allocated novel id; ``catalog`` carries the novel id names.
    """

    cluster_class: dict[int, int]
    catalog: ClassCatalog


def resolve_delta(config: PseudoLabelConfig, voxel_mean_certs: np.ndarray) -> float:
    if config.delta is not None:
        return config.delta
    if len(voxel_mean_certs) == 0:
        return 0.0
    return float(np.percentile(voxel_mean_certs, config.delta_percentile))


def merge_clusters(solution: ClusterSolution, map_classes: np.ndarray,
                   config: PseudoLabelConfig, n_known: int) -> MergeResult:
    """Bind clusters to map classes by IoU, allocate novel ids for the rest.

    A class binds at most the single highest-IoU cluster exceeding the merge
    threshold (ties to the lower cluster id); unbound clusters get novel ids
    in order of descending size.
    """
    map_classes = np.asarray(map_classes, dtype=np.int64)
    catalog = ClassCatalog([str(c) for c in range(n_known)])
    cluster_ids = [c for c in range(solution.n_clusters)]
    sizes = {c: int(np.sum(solution.labels == c)) for c in cluster_ids}

    candidates: dict[int, list[tuple[float, int]]] = {}  # class -> [(iou, cluster)]
    for cid in cluster_ids:
        mask = solution.labels == cid
        for cls in np.unique(map_classes[mask]):
            cls = int(cls)
            if cls < 0 or cls >= n_known:
                continue
            class_mask = map_classes == cls
            inter = int(np.sum(mask & class_mask))
            union = int(np.sum(mask | class_mask))
            iou = inter / union if union else 0.0
            if iou > config.merge_iou:
                candidates.setdefault(cls, []).append((iou, cid))

    cluster_class: dict[int, int] = {}
    for cls in sorted(candidates):
        # highest IoU wins; ties break to the lower cluster id
        best_iou, best_cid = max(candidates[cls], key=lambda t: (t[0], -t[1]))
        if best_cid not in cluster_class:
            cluster_class[best_cid] = cls

    unmerged = [c for c in cluster_ids if c not in cluster_class]
    unmerged.sort(key=lambda c: (-sizes[c], c))
    for cid in unmerged:
        cluster_class[cid] = catalog.allocate_novel()
    return MergeResult(cluster_class=cluster_class, catalog=catalog)


@dataclass
class PseudoLabelFrame:
    frame_id: str
    labels: np.ndarray      # per-observation class id or ignore_id
    provenance: np.ndarray  # PROV_MAP / PROV_CLUSTER / PROV_IGNORED


def make_pseudolabels(bundle: SceneBundle, map_classes: np.ndarray,
                      map_certs: np.ndarray, solution: ClusterSolution,
                      merged: MergeResult, config: PseudoLabelConfig,
                      delta: float) -> list[PseudoLabelFrame]:
    """Per-frame pseudo-labels: map class where the map is certain, merged
    cluster class where it is not, ignore otherwise."""
    map_classes = np.asarray(map_classes, dtype=np.int64)
    map_certs = np.asarray(map_certs, dtype=np.float64)
    n = bundle.n_vertices
    labels = np.full(n, config.ignore_id, dtype=np.int64)
    provenance = np.full(n, PROV_IGNORED, dtype=np.uint8)

    trust_map = (map_certs >= delta) & (map_classes != UNKNOWN_CLASS)
    labels[trust_map] = map_classes[trust_map]
    provenance[trust_map] = PROV_MAP

    fallback = ~trust_map
    cluster_ok = fallback & (solution.labels != NOISE)
    for cid, cls in merged.cluster_class.items():
        sel = cluster_ok & (solution.labels == cid)
        labels[sel] = cls
        provenance[sel] = PROV_CLUSTER

    frames = []
    for fi, frame_id in enumerate(bundle.manifest.frames):
        idx = bundle.frame_vertex_indices(fi)
        frames.append(PseudoLabelFrame(frame_id=frame_id,
                                       labels=labels[idx],
                                       provenance=provenance[idx]))
    return frames


def write_pseudolabels(frames: list[PseudoLabelFrame], merged: MergeResult,
                       config: PseudoLabelConfig, delta: float, out_dir) -> None:
    """Emit per-frame label/provenance tensors plus the novel-id catalog."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for frame in frames:
        fdir = out_dir / "frames" / frame.frame_id
        fdir.mkdir(parents=True, exist_ok=True)
        tensorio.write_array(fdir / "pseudolabel.tns", frame.labels.astype(np.uint16))
        tensorio.write_array(fdir / "provenance.tns", frame.provenance.astype(np.uint8))
    meta = {
        "ignore_id": config.ignore_id,
        "delta": delta,
        "merge_iou": config.merge_iou,
        "novel_classes": {str(i): name for i, name in merged.catalog.novel_names.items()},
        "n_known": merged.catalog.n_known,
    }
    (out_dir / "labels.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_pseudolabels(bundle: SceneBundle, label_dir) -> tuple[np.ndarray, dict]:
    """Load emitted pseudo-labels back into the bundle's flat index space."""
    label_dir = Path(label_dir)
    meta = json.loads((label_dir / "labels.json").read_text())
    labels = np.empty(bundle.n_vertices, dtype=np.int64)
    for fi, frame_id in enumerate(bundle.manifest.frames):
        idx = bundle.frame_vertex_indices(fi)
        arr = tensorio.read_array(label_dir / "frames" / frame_id / "pseudolabel.tns")
        labels[idx] = arr.astype(np.int64)
    return labels, meta
