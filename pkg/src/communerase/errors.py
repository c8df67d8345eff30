"""Exception types shared across the package."""


class IngestionError(ValueError):
    """Raised when a dataset file cannot be parsed into a valid graph."""


class ParameterError(ValueError):
    """Raised when an argument is outside its documented range."""


class ConsistencyError(RuntimeError):
    """Raised when internal bookkeeping disagrees with itself."""


class SerializationError(ValueError):
    """Raised when a saved artifact cannot be decoded."""


class UnsupportedVersionError(SerializationError):
    """Raised when a saved artifact declares an unknown format version."""
