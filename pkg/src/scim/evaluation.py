"""Open-world clustering and segmentation metrics.

Matching treats clusters bound to a supervised class specially: such a
cluster may only keep its own label or be dropped entirely, while
unsupervised clusters may match any label. The matcher pads the utility
matrix with zeros to a square and maximizes total matched count, breaking
ties lexicographically by (label, cluster).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

NOISE = -1
UNLABELED = -1


@dataclass
class ContingencyTable:
    """Label x cluster co-occurrence counts over jointly valid vertices."""

    counts: np.ndarray          # (L, C) int64
    label_ids: list[int]
    cluster_ids: list[int]
    bound_label: dict[int, int] = field(default_factory=dict)  # cluster id -> label id

    @property
    def supervised_mask(self) -> np.ndarray:
        return np.array([c in self.bound_label for c in self.cluster_ids])


@dataclass
class MatchResult:
    matching: dict[int, int]        # label id -> cluster id
    unmatched_labels: list[int]
    dropped_clusters: list[int]
    total_matched: int


def contingency(labels: np.ndarray, clusters: np.ndarray,
                bound_label: dict[int, int] | None = None) -> ContingencyTable:
    """Count label/cluster co-occurrences, skipping unlabeled and NOISE."""
    labels = np.asarray(labels, dtype=np.int64)
    clusters = np.asarray(clusters, dtype=np.int64)
    if len(labels) != len(clusters):
        raise ValueError(f"length mismatch: {len(labels)} labels vs {len(clusters)} clusters")
    keep = (labels != UNLABELED) & (clusters != NOISE)
    labels, clusters = labels[keep], clusters[keep]
    label_ids = sorted(int(v) for v in np.unique(labels))
    cluster_ids = sorted(int(v) for v in np.unique(clusters))
    counts = np.zeros((len(label_ids), len(cluster_ids)), dtype=np.int64)
    lpos = {v: i for i, v in enumerate(label_ids)}
    cpos = {v: i for i, v in enumerate(cluster_ids)}
    for lab, clu in zip(labels, clusters):
        counts[lpos[int(lab)], cpos[int(clu)]] += 1
    return ContingencyTable(counts=counts, label_ids=label_ids, cluster_ids=cluster_ids,
                            bound_label=dict(bound_label or {}))


def _utility_matrix(table: ContingencyTable) -> np.ndarray:
    """(L, C) count utilities with forbidden supervised cells far negative."""
    n_l, n_c = table.counts.shape
    forbidden = -(int(table.counts.sum()) + 1.0)
    util = table.counts.astype(np.float64).copy()
    for ci, cid in enumerate(table.cluster_ids):
        bound = table.bound_label.get(cid)
        if bound is None:
            continue
        for li, lid in enumerate(table.label_ids):
            if lid != bound:
                util[li, ci] = forbidden
    return util


def _optimal_value(util: np.ndarray) -> float:
    """Best total over partial matchings (labels may stay unmatched)."""
    if util.size == 0:
        return 0.0
    padded = np.hstack([util, np.zeros((util.shape[0], util.shape[0]))])
    rows, cols = linear_sum_assignment(padded, maximize=True)
    return float(padded[rows, cols].sum())


def constrained_hungarian(table: ContingencyTable) -> MatchResult:
    """Maximum-count label/cluster matching under supervision constraints.

    Zero padding lets any label stay unmatched and any cluster be dropped.
    Among all optimal matchings, returns the lexicographically smallest one:
    labels are fixed in ascending order, each preferring the smallest
    cluster id that still allows an optimal completion (unmatched last).
    """
    n_l, n_c = table.counts.shape
    if n_l == 0 or n_c == 0:
        return MatchResult({}, list(table.label_ids),
                           sorted(table.bound_label), 0)
    util = _utility_matrix(table)
    best_total = _optimal_value(util)

    assigned: dict[int, int] = {}   # label pos -> cluster pos
    used_cols: set[int] = set()
    fixed_value = 0.0
    for li in range(n_l):
        remaining_rows = list(range(li + 1, n_l))
        choice = None
        for ci in list(range(n_c)) + [None]:  # real clusters ascending, then unmatched
            if ci is not None and (ci in used_cols or util[li, ci] < 0):
                continue
            value = util[li, ci] if ci is not None else 0.0
            free_cols = [c for c in range(n_c) if c not in used_cols and c != ci]
            sub = util[np.ix_(remaining_rows, free_cols)] \
                if remaining_rows and free_cols else np.zeros((0, 0))
            rest = _optimal_value(sub)
            if fixed_value + value + rest >= best_total - 1e-9:
                choice = ci
                fixed_value += value
                break
        if choice is not None:
            assigned[li] = choice
            used_cols.add(choice)

    matching = {table.label_ids[li]: table.cluster_ids[ci]
                for li, ci in assigned.items()}
    unmatched = [lid for lid in table.label_ids if lid not in matching]
    matched_clusters = set(matching.values())
    dropped = sorted(c for c in table.bound_label if c in table.cluster_ids
                     and c not in matched_clusters)
    total = sum(int(table.counts[table.label_ids.index(l), table.cluster_ids.index(c)])
                for l, c in matching.items())
    return MatchResult(matching=matching, unmatched_labels=unmatched,
                       dropped_clusters=dropped, total_matched=total)


def iou_per_class(labels: np.ndarray, predictions: np.ndarray, class_id: int) -> float:
    """Intersection over union of the two class masks; NaN if both empty."""
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if len(labels) != len(predictions):
        raise ValueError("length mismatch")
    lab = labels == class_id
    pred = predictions == class_id
    union = int(np.sum(lab | pred))
    if union == 0:
        return math.nan
    return float(np.sum(lab & pred)) / union


def _entropy(counts: np.ndarray) -> float:
    counts = counts[counts > 0].astype(np.float64)
    total = counts.sum()
    p = counts / total
    return float(-(p * np.log(p)).sum())


def v_score(labels: np.ndarray, clusters: np.ndarray) -> float:
    """Harmonic mean of homogeneity and completeness (natural-log entropies)."""
    table = contingency(labels, clusters)
    if table.counts.sum() == 0:
        raise ValueError("no jointly labeled and assigned vertex")
    counts = table.counts.astype(np.float64)
    total = counts.sum()
    h_label = _entropy(counts.sum(axis=1))
    h_cluster = _entropy(counts.sum(axis=0))
    # conditional entropies from the joint table
    h_label_given_cluster = 0.0
    h_cluster_given_label = 0.0
    for j in range(counts.shape[1]):
        col = counts[:, j]
        h_label_given_cluster += col.sum() / total * _entropy(col)
    for i in range(counts.shape[0]):
        row = counts[i]
        h_cluster_given_label += row.sum() / total * _entropy(row)
    homogeneity = 1.0 if h_label == 0 else 1.0 - h_label_given_cluster / h_label
    completeness = 1.0 if h_cluster == 0 else 1.0 - h_cluster_given_label / h_cluster
    if homogeneity + completeness == 0:
        return 0.0
    return 2.0 * homogeneity * completeness / (homogeneity + completeness)


def evaluate_openworld(labels: np.ndarray, predictions: np.ndarray,
                       n_known: int, outlier_classes: list[int],
                       ignore_id: int | None = None,
                       notes: list[str] | None = None) -> dict:
    """Full open-world protocol: matching, relabeling, per-class IoU, v-score.

    Predictions with ids below ``n_known`` act as supervised clusters bound
    to their own label; ids >= ``n_known`` are unsupervised (novel) clusters.
    ``ignore_id`` marks pixels without a prediction.
    """
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64).copy()
    if ignore_id is not None:
        predictions[predictions == ignore_id] = NOISE

    bound = {int(c): int(c) for c in np.unique(predictions)
             if 0 <= c < n_known}
    table = contingency(labels, predictions, bound_label=bound)
    match = constrained_hungarian(table)

    # relabel predictions through the matching; unmatched clusters vanish
    cluster_to_label = {c: l for l, c in match.matching.items()}
    relabeled = np.full_like(predictions, NOISE)
    for cid, lid in cluster_to_label.items():
        relabeled[predictions == cid] = lid

    labeled = labels != UNLABELED
    present = sorted(int(c) for c in np.unique(labels[labeled]))
    outliers = set(int(c) for c in outlier_classes)

    per_class = {}
    known_ious = []
    for cls in present:
        iou = iou_per_class(labels[labeled], relabeled[labeled], cls)
        per_class[cls] = iou
        if cls not in outliers and not math.isnan(iou):
            known_ious.append(iou)
    miou = float(np.mean(known_ious)) if known_ious else math.nan
    out_iou = {cls: (per_class[cls] if cls in per_class else math.nan)
               for cls in sorted(outliers)}

    vs = v_score(labels, predictions) if table.counts.sum() else math.nan
    return {
        "per_class_iou": per_class,
        "miou": miou,
        "out_iou": out_iou,
        "v_score": vs,
        "matching": dict(match.matching),
        "unmatched_labels": list(match.unmatched_labels),
        "dropped_clusters": list(match.dropped_clusters),
        "contingency": {"labels": table.label_ids, "clusters": table.cluster_ids,
                        "counts": table.counts.tolist()},
        "notes": list(notes or []),
    }
