"""Exception hierarchy shared across the package."""


class ScimError(Exception):
    """Base class for all validation / domain errors raised by this package."""


class TensorFormatError(ScimError):
    """Malformed tensor file."""


class BadMagicError(TensorFormatError):
    """File does not start with the tensor format magic bytes."""


class UnknownDtypeError(TensorFormatError):
    """Unsupported version or dtype code in the tensor header."""


class TruncatedFileError(TensorFormatError):
    """Tensor file ends before the declared payload is complete."""


class SceneValidationError(ScimError):
    """Scene bundle directory or manifest violates the format contract."""


class ConfigError(ScimError):
    """Invalid configuration document (unknown keys, bad values)."""
