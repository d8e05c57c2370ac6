"""Deterministic synthetic scene-bundle generator with ground truth.

Scenes place one axis-aligned box per class inside a unit cube, draw
observations uniformly inside the boxes, and attach per-modality
descriptors sampled around well-separated class centers. Known-class
predictions are flipped at a configurable error rate; novel-class points
receive known-class predictions with low certainty, emulating
out-of-distribution behavior of a pretrained model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scim import tensorio
from scim.errors import ConfigError
from scim.scenemodel import SceneBundle, SceneManifest


@dataclass
class CertModel:
    confident_mean: float = 0.85
    uncertain_mean: float = 0.3
    sigma: float = 0.05


@dataclass
class SynthConfig:
    n_known_classes: int = 5
    n_novel_classes: int = 2
    frames: int = 10
    points_per_frame: int = 200
    modalities: dict[str, int] = field(default_factory=lambda: {"segm": 16, "geom": 8, "imgn": 24})
    class_center_separation: float = 5.0
    descriptor_noise_sigma: float = 0.5
    prediction_error_rate: float = 0.1
    cert_model: CertModel = field(default_factory=CertModel)
    boxes: list[list[list[float]]] | None = None  # per class [[min xyz], [max xyz]]
    box_margin: float = 0.1
    voxel_size: float = 0.05
    scene_id: str = "synthetic"
    # probability that a novel point is predicted as its nearest known class
    # (remaining mass spreads uniformly over the known classes)
    novel_pred_concentration: float = 0.5
    seed: int = 0

    @property
    def n_classes(self) -> int:
        return self.n_known_classes + self.n_novel_classes

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "cert_model"}
        d["cert_model"] = dict(self.cert_model.__dict__)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        allowed = set(cls().__dict__)
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        if "cert_model" in d:
            d["cert_model"] = CertModel(**d["cert_model"])
        if "modalities" in d:
            d["modalities"] = {str(k): int(v) for k, v in d["modalities"].items()}
        return cls(**d)


def _grid_boxes(n_classes: int, margin: float) -> np.ndarray:
    """Non-overlapping boxes on a regular 3-D grid in the unit cube."""
    g = max(1, math.ceil(n_classes ** (1 / 3)))
    while g ** 3 < n_classes:
        g += 1
    cell = 1.0 / g
    pad = margin * cell
    boxes = []
    for k in range(n_classes):
        i, j, l = k % g, (k // g) % g, k // (g * g)
        lo = np.array([i, j, l]) * cell + pad
        hi = np.array([i + 1, j + 1, l + 1]) * cell - pad
        boxes.append([lo, hi])
    return np.array(boxes)


def _check_boxes(boxes: np.ndarray):
    for a in range(len(boxes)):
        for b in range(a + 1, len(boxes)):
            lo = np.maximum(boxes[a, 0], boxes[b, 0])
            hi = np.minimum(boxes[a, 1], boxes[b, 1])
            if np.all(lo < hi):
                raise ConfigError(f"class boxes {a} and {b} overlap")


def _class_centers(rng: np.random.Generator, n_classes: int, dim: int,
                   separation: float, max_tries: int = 1000) -> np.ndarray:
    """Gaussian-placed class centers with enforced pairwise separation."""
    scale = max(separation, 1.0)
    centers = np.empty((n_classes, dim))
    for c in range(n_classes):
        for attempt in range(max_tries):
            cand = rng.normal(0.0, scale, size=dim)
            if all(np.linalg.norm(cand - centers[p]) >= separation for p in range(c)):
                centers[c] = cand
                break
        else:
            raise ConfigError(
                f"could not place {n_classes} centers with separation {separation} in dim {dim}")
    return centers


def generate(config: SynthConfig, out_dir=None) -> SceneBundle:
    """Generate a synthetic bundle; optionally write it as a scene directory."""
    rng = np.random.default_rng(config.seed)
    n_classes = config.n_classes
    n_known = config.n_known_classes
    if config.boxes is not None:
        boxes = np.array(config.boxes, dtype=np.float64)
    else:
        boxes = _grid_boxes(n_classes, config.box_margin)
    if len(boxes) != n_classes:
        raise ConfigError(f"expected {n_classes} boxes, got {len(boxes)}")
    _check_boxes(boxes)

    centers = {mod: _class_centers(rng, n_classes, dim, config.class_center_separation)
               for mod, dim in config.modalities.items()}

    n_total = config.frames * config.points_per_frame
    true_class = rng.integers(0, n_classes, size=n_total)
    frame_index = np.repeat(np.arange(config.frames), config.points_per_frame).astype(np.int32)
    u = rng.uniform(size=(n_total, 3))
    xyz = (boxes[true_class, 0] + u * (boxes[true_class, 1] - boxes[true_class, 0]))

    descriptors = {}
    for mod, dim in config.modalities.items():
        noise = rng.normal(0.0, config.descriptor_noise_sigma, size=(n_total, dim))
        descriptors[mod] = (centers[mod][true_class] + noise).astype(np.float32)

    pred = np.empty(n_total, dtype=np.int64)
    correct = np.zeros(n_total, dtype=bool)
    known_mask = true_class < n_known
    # known classes: correct prediction, flipped at the configured error rate
    flip = rng.uniform(size=n_total) < config.prediction_error_rate
    for i in np.flatnonzero(known_mask):
        if flip[i] and n_known > 1:
            others = [c for c in range(n_known) if c != true_class[i]]
            pred[i] = others[rng.integers(0, len(others))]
        else:
            pred[i] = true_class[i]
            correct[i] = True
    # novel classes: known-class predictions, biased to the nearest known
    # center but spread for high entropy, always uncertain
    segm_mod = next(iter(config.modalities))
    nearest_known = {}
    for c in range(n_known, n_classes):
        d = np.linalg.norm(centers[segm_mod][:n_known] - centers[segm_mod][c], axis=1)
        nearest_known[c] = int(np.argmin(d))
    for i in np.flatnonzero(~known_mask):
        if rng.uniform() < config.novel_pred_concentration:
            pred[i] = nearest_known[int(true_class[i])]
        else:
            pred[i] = rng.integers(0, n_known)

    cm = config.cert_model
    cert = np.where(correct,
                    rng.normal(cm.confident_mean, cm.sigma, size=n_total),
                    rng.normal(cm.uncertain_mean, cm.sigma, size=n_total))
    cert = np.clip(cert, 0.0, 1.0).astype(np.float32)

    pixels = np.empty((n_total, 2), dtype=np.uint16)
    pixels[:, 0] = rng.integers(0, 640, size=n_total)
    pixels[:, 1] = rng.integers(0, 480, size=n_total)

    known_names = [f"known_{c}" for c in range(n_known)]
    novel_names = [f"novel_{c}" for c in range(config.n_novel_classes)]
    manifest = SceneManifest(
        scene_id=config.scene_id,
        voxel_size=config.voxel_size,
        classes=known_names + novel_names,
        outlier_classes=novel_names,
        modalities=dict(config.modalities),
        frames=[f"{fi:06d}" for fi in range(config.frames)],
    )
    manifest.validate()
    bundle = SceneBundle(
        manifest=manifest,
        frame_index=frame_index,
        pixels=pixels,
        xyz=xyz.astype(np.float32),
        pred=pred.astype(np.uint16),
        cert=cert,
        label=true_class.astype(np.int32),
        descriptors=descriptors,
    )
    if out_dir is not None:
        tensorio.save_scene(bundle, Path(out_dir))
    return bundle


def load_config(path) -> SynthConfig:
    return SynthConfig.from_dict(json.loads(Path(path).read_text()))
