"""Exception types raised by the package."""


class ReachcastError(Exception):
    """Base class for all package-specific errors."""


class ParseError(ReachcastError):
    """Malformed input text (edge lists, cascade files, config files)."""


class ParameterError(ReachcastError):
    """Argument outside its documented domain."""


class DimensionError(ReachcastError):
    """Mismatched node counts or feature dimensions."""


class ConsistencyError(ReachcastError):
    """Inputs that are individually valid but mutually inconsistent."""


class FormatError(ReachcastError):
    """Unreadable or version-incompatible serialized artifact."""


class ModelTypeError(FormatError):
    """Model file holds a different model family than requested."""


class TrainingError(ReachcastError):
    """Training could not start or diverged."""
