"""Binary tensor files and scene-bundle directory I/O.

Tensor wire format (all little-endian):

    bytes 0..7    magic "SCIMTNSR"
    byte  8       format version (1)
    byte  9       dtype code (0=f32, 1=u16, 2=i32, 3=u8)
    byte  10      ndim
    bytes 11..15  zero padding
    next          ndim x uint64 dims
    rest          row-major payload

A scene bundle directory holds ``manifest.json`` plus one subdirectory per
frame under ``frames/`` with tensors ``pixels``, ``xyz``, ``pred``, ``cert``,
optional ``label`` and one ``desc_<modality>`` per descriptor.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scim.errors import (
    BadMagicError,
    SceneValidationError,
    TensorFormatError,
    TruncatedFileError,
    UnknownDtypeError,
)
from scim.scenemodel import UNLABELED, SceneBundle, SceneManifest

MAGIC = b"SCIMTNSR"
VERSION = 1
HEADER_SIZE = 16
TENSOR_EXT = ".tns"

_DTYPE_CODES = {"f32": 0, "u16": 1, "i32": 2, "u8": 3}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
_NUMPY_DTYPES = {
    "f32": np.dtype("<f4"),
    "u16": np.dtype("<u2"),
    "i32": np.dtype("<i4"),
    "u8": np.dtype("<u1"),
}
_DTYPE_FROM_NUMPY = {
    np.dtype(np.float32): "f32",
    np.dtype(np.uint16): "u16",
    np.dtype(np.int32): "i32",
    np.dtype(np.uint8): "u8",
}


@dataclass(frozen=True)
class TensorFile:
    """A typed n-dimensional array as stored on disk."""

    dtype: str
    dims: tuple[int, ...]
    data: np.ndarray  # shape == dims, native little-endian dtype

    def __post_init__(self):
        if self.dtype not in _DTYPE_CODES:
            raise TensorFormatError(f"unsupported dtype {self.dtype!r}")
        if tuple(self.data.shape) != tuple(self.dims):
            raise TensorFormatError(
                f"payload shape {self.data.shape} does not match dims {self.dims}")


def from_array(arr: np.ndarray) -> TensorFile:
    dtype = _DTYPE_FROM_NUMPY.get(arr.dtype)
    if dtype is None:
        raise TensorFormatError(f"no wire dtype for numpy dtype {arr.dtype}")
    return TensorFile(dtype=dtype, dims=tuple(arr.shape), data=arr)


def write_tensor(path, tensor: TensorFile) -> None:
    """Serialize ``tensor`` to ``path`` in the binary wire format."""
    path = Path(path)
    data = np.ascontiguousarray(tensor.data, dtype=_NUMPY_DTYPES[tensor.dtype])
    header = MAGIC + struct.pack(
        "<BBB5x", VERSION, _DTYPE_CODES[tensor.dtype], len(tensor.dims))
    dims = struct.pack(f"<{len(tensor.dims)}Q", *tensor.dims)
    path.write_bytes(header + dims + data.tobytes())


def write_array(path, arr: np.ndarray) -> None:
    write_tensor(path, from_array(arr))


def read_tensor(path) -> TensorFile:
    """Read a tensor file; inverse of :func:`write_tensor`."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE or raw[:8] != MAGIC:
        raise BadMagicError(f"{path}: not a tensor file (bad magic)")
    version, dtype_code, ndim = struct.unpack_from("<BBB", raw, 8)
    if version != VERSION:
        raise UnknownDtypeError(f"{path}: unsupported format version {version}")
    if dtype_code not in _CODE_DTYPES:
        raise UnknownDtypeError(f"{path}: unknown dtype code {dtype_code}")
    dtype = _CODE_DTYPES[dtype_code]
    dims_end = HEADER_SIZE + 8 * ndim
    if len(raw) < dims_end:
        raise TruncatedFileError(f"{path}: truncated before dims")
    dims = struct.unpack_from(f"<{ndim}Q", raw, HEADER_SIZE)
    n_elem = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    np_dtype = _NUMPY_DTYPES[dtype]
    payload_size = n_elem * np_dtype.itemsize
    if len(raw) < dims_end + payload_size:
        raise TruncatedFileError(f"{path}: truncated payload")
    data = np.frombuffer(raw, dtype=np_dtype, count=n_elem, offset=dims_end)
    return TensorFile(dtype=dtype, dims=tuple(int(d) for d in dims),
                      data=data.reshape(dims))


def read_array(path) -> np.ndarray:
    return read_tensor(path).data


def _frame_dir(scene_dir: Path, frame_id: str) -> Path:
    return scene_dir / "frames" / frame_id


def save_scene(bundle: SceneBundle, scene_dir) -> None:
    """Write a bundle as a scene directory (manifest + per-frame tensors)."""
    scene_dir = Path(scene_dir)
    scene_dir.mkdir(parents=True, exist_ok=True)
    manifest = bundle.manifest
    (scene_dir / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    for fi, frame_id in enumerate(manifest.frames):
        idx = bundle.frame_vertex_indices(fi)
        fdir = _frame_dir(scene_dir, frame_id)
        fdir.mkdir(parents=True, exist_ok=True)
        write_array(fdir / f"pixels{TENSOR_EXT}", bundle.pixels[idx].astype(np.uint16))
        write_array(fdir / f"xyz{TENSOR_EXT}", bundle.xyz[idx].astype(np.float32))
        write_array(fdir / f"pred{TENSOR_EXT}", bundle.pred[idx].astype(np.uint16))
        write_array(fdir / f"cert{TENSOR_EXT}", bundle.cert[idx].astype(np.float32))
        labels = bundle.label[idx]
        if np.any(labels != UNLABELED):
            write_array(fdir / f"label{TENSOR_EXT}", labels.astype(np.int32))
        for mod in manifest.modalities:
            write_array(fdir / f"desc_{mod}{TENSOR_EXT}",
                        bundle.descriptors[mod][idx].astype(np.float32))


def load_scene(scene_dir) -> SceneBundle:
    """Load and validate a scene bundle directory."""
    scene_dir = Path(scene_dir)
    manifest_path = scene_dir / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"missing {manifest_path}")
    manifest = SceneManifest.from_dict(json.loads(manifest_path.read_text()))

    frame_index, pixels, xyz, pred, cert, label = [], [], [], [], [], []
    desc: dict[str, list[np.ndarray]] = {mod: [] for mod in manifest.modalities}
    for fi, frame_id in enumerate(manifest.frames):
        fdir = _frame_dir(scene_dir, frame_id)
        arrays = {}
        for name in ("pixels", "xyz", "pred", "cert"):
            p = fdir / f"{name}{TENSOR_EXT}"
            if not p.is_file():
                raise FileNotFoundError(f"frame {frame_id}: missing {name} tensor")
            arrays[name] = read_array(p)
        n = len(arrays["pixels"])
        for name, arr in arrays.items():
            if len(arr) != n:
                raise SceneValidationError(
                    f"frame {frame_id}: {name} has {len(arr)} rows, pixels has {n}")
        if arrays["pred"].size and int(arrays["pred"].max()) >= manifest.n_classes:
            raise SceneValidationError(f"frame {frame_id}: pred id out of range")
        label_path = fdir / f"label{TENSOR_EXT}"
        if label_path.is_file():
            lab = read_array(label_path)
            if len(lab) != n:
                raise SceneValidationError(f"frame {frame_id}: label row count mismatch")
        else:
            lab = np.full(n, UNLABELED, dtype=np.int32)
        for mod, dim in manifest.modalities.items():
            p = fdir / f"desc_{mod}{TENSOR_EXT}"
            if not p.is_file():
                raise FileNotFoundError(f"frame {frame_id}: missing descriptor {mod!r}")
            mat = read_array(p)
            if len(mat) != n:
                raise SceneValidationError(f"frame {frame_id}: descriptor {mod!r} row mismatch")
            if mat.ndim != 2 or mat.shape[1] != dim:
                raise SceneValidationError(
                    f"frame {frame_id}: descriptor {mod!r} has shape {mat.shape}, "
                    f"manifest says dim {dim}")
            desc[mod].append(mat)
        frame_index.append(np.full(n, fi, dtype=np.int32))
        pixels.append(arrays["pixels"])
        xyz.append(arrays["xyz"])
        pred.append(arrays["pred"])
        cert.append(arrays["cert"])
        label.append(lab)

    def cat(parts, dtype):
        if not parts:
            return np.empty((0,), dtype=dtype)
        return np.concatenate(parts).astype(dtype, copy=False)

    return SceneBundle(
        manifest=manifest,
        frame_index=cat(frame_index, np.int32),
        pixels=np.concatenate(pixels) if pixels else np.empty((0, 2), np.uint16),
        xyz=np.concatenate(xyz) if xyz else np.empty((0, 3), np.float32),
        pred=cat(pred, np.uint16),
        cert=cat(cert, np.float32),
        label=cat(label, np.int32),
        descriptors={mod: (np.concatenate(parts) if parts
                           else np.empty((0, manifest.modalities[mod]), np.float32))
                     for mod, parts in desc.items()},
    )
