"""Sparse voxel grid fusing class predictions and certainties per voxel."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scim import tensorio
from scim.scenemodel import SceneBundle

#: rendered class for vertices whose voxel was never observed
UNKNOWN_CLASS = -1


@dataclass
class VoxelMap:
    """Fused per-voxel class votes and certainty sums.

    Voxels are stored in canonical (lexicographic key) order, so maps built
    from permuted observation streams are byte-identical.
    """

    voxel_size: float
    n_classes: int
    keys: np.ndarray       # (M, 3) int64 voxel indices
    votes: np.ndarray      # (M, n_classes) int64 class vote counts
    cert_sum: np.ndarray   # (M,) float64
    obs_count: np.ndarray  # (M,) int64
    n_skipped: int = 0

    def __post_init__(self):
        self._index = {tuple(k): i for i, k in enumerate(self.keys.tolist())}

    @property
    def n_voxels(self) -> int:
        return len(self.keys)

    def mean_cert(self) -> np.ndarray:
        return self.cert_sum / np.maximum(self.obs_count, 1)

    def fused_class(self) -> np.ndarray:
        """Majority class per voxel; ties break to the lowest class id."""
        return np.argmax(self.votes, axis=1).astype(np.int64)

    def lookup(self, key: tuple[int, int, int]) -> int:
        return self._index.get(key, -1)


def voxel_keys(xyz: np.ndarray, voxel_size: float) -> np.ndarray:
    return np.floor(np.asarray(xyz, dtype=np.float64) / voxel_size).astype(np.int64)


def build_map(bundle: SceneBundle, voxel_size: float | None = None) -> VoxelMap:
    """Fuse every observation's prediction and certainty into its voxel.

    Observations with non-finite positions are skipped and counted in
    ``n_skipped``. Certainty sums are accumulated in a deterministic order
    (sorted per voxel) so the result is invariant to observation order.
    """
    if voxel_size is None:
        voxel_size = bundle.manifest.voxel_size
    if voxel_size <= 0:
        raise ValueError(f"voxel_size must be positive, got {voxel_size}")
    n_classes = bundle.manifest.n_classes
    finite = np.all(np.isfinite(bundle.xyz), axis=1)
    n_skipped = int((~finite).sum())
    xyz = bundle.xyz[finite]
    pred = bundle.pred[finite].astype(np.int64)
    cert = bundle.cert[finite].astype(np.float64)

    if len(xyz) == 0:
        return VoxelMap(voxel_size, n_classes,
                        np.empty((0, 3), np.int64), np.empty((0, n_classes), np.int64),
                        np.empty(0), np.empty(0, np.int64), n_skipped)

    keys = voxel_keys(xyz, voxel_size)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    m = len(uniq)

    votes = np.zeros((m, n_classes), dtype=np.int64)
    np.add.at(votes, (inverse, pred), 1)
    obs_count = np.bincount(inverse, minlength=m).astype(np.int64)

    # sum certainties per voxel in value order for bitwise reproducibility
    order = np.lexsort((cert, inverse))
    starts = np.flatnonzero(np.r_[True, np.diff(inverse[order]) != 0])
    cert_sum = np.add.reduceat(cert[order], starts)

    return VoxelMap(voxel_size, n_classes, uniq, votes, cert_sum, obs_count, n_skipped)


def render(vmap: VoxelMap, bundle: SceneBundle) -> tuple[np.ndarray, np.ndarray]:
    """Look up each observation's voxel in the map.

    Returns per-vertex ``(fused_class, mean_cert)``; vertices whose voxel is
    absent from the map get ``(UNKNOWN_CLASS, 0.0)``.
    """
    n = bundle.n_vertices
    classes = np.full(n, UNKNOWN_CLASS, dtype=np.int64)
    certs = np.zeros(n, dtype=np.float64)
    if n == 0 or vmap.n_voxels == 0:
        return classes, certs
    fused = vmap.fused_class()
    mean_cert = vmap.mean_cert()
    keys = voxel_keys(bundle.xyz, vmap.voxel_size)
    finite = np.all(np.isfinite(bundle.xyz), axis=1)
    for i in np.flatnonzero(finite):
        row = vmap.lookup((int(keys[i, 0]), int(keys[i, 1]), int(keys[i, 2])))
        if row >= 0:
            classes[i] = fused[row]
            certs[i] = mean_cert[row]
    return classes, certs


def dump_map(vmap: VoxelMap, out_dir) -> None:
    """Write the map as tensor files (keys, votes, mean certainty)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tensorio.write_array(out_dir / "voxel_keys.tns", vmap.keys.astype(np.int32))
    tensorio.write_array(out_dir / "voxel_votes.tns", vmap.votes.astype(np.int32))
    tensorio.write_array(out_dir / "voxel_cert.tns", vmap.mean_cert().astype(np.float32))
