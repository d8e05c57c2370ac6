"""Multi-descriptor graph clustering of scene observations with black-box
parameter optimization and self-supervised pseudo-label generation."""

from scim.errors import (
    BadMagicError,
    SceneValidationError,
    ScimError,
    TensorFormatError,
    TruncatedFileError,
    UnknownDtypeError,
)
from scim.scenemodel import ClassCatalog, ObservationVertex, SceneBundle, SceneManifest

__version__ = "0.1.0"

__all__ = [
    "BadMagicError",
    "ClassCatalog",
    "ObservationVertex",
    "SceneBundle",
    "SceneManifest",
    "SceneValidationError",
    "ScimError",
    "TensorFormatError",
    "TruncatedFileError",
    "UnknownDtypeError",
]
