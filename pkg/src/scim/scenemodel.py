"""In-memory model of a scene: observation vertices, descriptors, class catalog.

Observations from all frames are flattened into one scene-wide index space
(with a frame back-pointer per vertex) so that clustering, matching, and
pseudo-labeling all talk about the same indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scim.errors import SceneValidationError

#: label value marking an observation without ground-truth annotation
UNLABELED = -1


@dataclass(frozen=True)
class SceneManifest:
    """Static description of a scene bundle.

    ``modalities`` maps descriptor names to their dimensionality.
    ``outlier_classes`` are the class names held out for evaluation only.
    """

    scene_id: str
    voxel_size: float
    classes: list[str]
    outlier_classes: list[str]
    modalities: dict[str, int]
    frames: list[str]

    def validate(self):
        if self.voxel_size <= 0:
            raise SceneValidationError(f"voxel_size must be positive, got {self.voxel_size}")
        unknown = set(self.outlier_classes) - set(self.classes)
        if unknown:
            raise SceneValidationError(f"outlier_classes not in classes: {sorted(unknown)}")
        for name, dim in self.modalities.items():
            if dim < 1:
                raise SceneValidationError(f"modality {name!r} has dim {dim} < 1")
        if len(set(self.frames)) != len(self.frames):
            raise SceneValidationError("frame ids are not unique")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "voxel_size": self.voxel_size,
            "classes": list(self.classes),
            "outlier_classes": list(self.outlier_classes),
            "modalities": dict(self.modalities),
            "frames": list(self.frames),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneManifest":
        required = {"scene_id", "voxel_size", "classes", "outlier_classes", "modalities", "frames"}
        missing = required - set(d)
        if missing:
            raise SceneValidationError(f"manifest missing keys: {sorted(missing)}")
        m = cls(
            scene_id=str(d["scene_id"]),
            voxel_size=float(d["voxel_size"]),
            classes=list(d["classes"]),
            outlier_classes=list(d["outlier_classes"]),
            modalities={str(k): int(v) for k, v in dict(d["modalities"]).items()},
            frames=[str(f) for f in d["frames"]],
        )
        m.validate()
        return m


@dataclass(frozen=True)
class ObservationVertex:
    """One observed pixel, viewed out of the flat bundle arrays."""

    frame_index: int
    pixel: tuple[int, int]
    position: np.ndarray
    time: float
    pred: int
    cert: float
    label: int


@dataclass
class SceneBundle:
    """A whole trajectory of observations plus per-modality descriptors.

    All per-vertex arrays share the same length N; ``descriptors[name]`` is
    an (N, D_name) float32 matrix. Bundles are treated as immutable after
    construction.
    """

    manifest: SceneManifest
    frame_index: np.ndarray  # (N,) int32
    pixels: np.ndarray       # (N, 2) uint16
    xyz: np.ndarray          # (N, 3) float32
    pred: np.ndarray         # (N,) uint16
    cert: np.ndarray         # (N,) float32
    label: np.ndarray        # (N,) int32, UNLABELED where unannotated
    descriptors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.frame_index)
        for name, arr in [("pixels", self.pixels), ("xyz", self.xyz),
                          ("pred", self.pred), ("cert", self.cert), ("label", self.label)]:
            if len(arr) != n:
                raise SceneValidationError(f"{name} has {len(arr)} rows, expected {n}")
        for mod, mat in self.descriptors.items():
            if len(mat) != n:
                raise SceneValidationError(f"descriptor {mod!r} has {len(mat)} rows, expected {n}")
            want = self.manifest.modalities.get(mod)
            if want is not None and mat.shape[1] != want:
                raise SceneValidationError(
                    f"descriptor {mod!r} has dim {mat.shape[1]}, manifest says {want}")
        if n and self.pred.size and int(self.pred.max()) >= self.manifest.n_classes:
            raise SceneValidationError("pred contains ids outside the class catalog")

    @property
    def n_vertices(self) -> int:
        return len(self.frame_index)

    def vertex(self, i: int) -> ObservationVertex:
        return ObservationVertex(
            frame_index=int(self.frame_index[i]),
            pixel=(int(self.pixels[i, 0]), int(self.pixels[i, 1])),
            position=self.xyz[i],
            time=float(self.frame_index[i]),
            pred=int(self.pred[i]),
            cert=float(self.cert[i]),
            label=int(self.label[i]),
        )

    def frame_vertex_indices(self, frame_idx: int) -> np.ndarray:
        return np.flatnonzero(self.frame_index == frame_idx)


def vertex_count(bundle: SceneBundle) -> int:
    """Total number of observations across all frames."""
    return bundle.n_vertices


def confident_subset(bundle: SceneBundle, delta_conf: float) -> np.ndarray:
    """Indices of vertices whose certainty is strictly above ``delta_conf``."""
    return np.flatnonzero(bundle.cert > delta_conf)


class ClassCatalog:
    """Known class names plus dynamically allocated novel class ids.

    Novel ids continue after the known ids (K, K+1, ...) and carry display
    names "c1", "c2", ... in allocation order.
    """

    def __init__(self, known_classes: list[str]):
        self.known_classes = list(known_classes)
        self.novel_names: dict[int, str] = {}

    @property
    def n_known(self) -> int:
        return len(self.known_classes)

    def allocate_novel(self) -> int:
        new_id = self.n_known + len(self.novel_names)
        self.novel_names[new_id] = f"c{len(self.novel_names) + 1}"
        return new_id

    def name_of(self, class_id: int) -> str:
        if 0 <= class_id < self.n_known:
            return self.known_classes[class_id]
        if class_id in self.novel_names:
            return self.novel_names[class_id]
        raise KeyError(f"unknown class id {class_id}")

    def is_novel(self, class_id: int) -> bool:
        return class_id in self.novel_names
