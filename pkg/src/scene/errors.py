"""Exception hierarchy shared by every scene module."""


class SceneError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(SceneError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class NonFiniteError(SceneError, FloatingPointError):
    """An operation produced or received NaN/Inf values."""


class TapeError(SceneError):
    """Misuse of the gradient tape (e.g. loss not recorded on it)."""


class FormatError(SceneError, ValueError):
    """A binary or text file does not match its declared layout."""


class IntegrityError(FormatError):
    """A checksum did not verify."""


class ConfigError(SceneError, ValueError):
    """Invalid configuration key or value."""


class EncoderError(SceneError, RuntimeError):
    """The external encoder is missing or failed."""
