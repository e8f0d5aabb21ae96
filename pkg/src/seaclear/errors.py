"""Exception types shared across the library."""


class SeaclearError(Exception):
    """Base class for all errors raised by this library."""


class DimensionError(SeaclearError):
    """Array shapes or axes are incompatible."""


class ParameterError(SeaclearError):
    """A scalar parameter is outside its allowed range."""


class DomainError(SeaclearError):
    """An input value is outside the mathematical domain of an operation."""


class SingularTransformError(DomainError):
    """A projective transform came too close to its horizon."""


class EvaluationError(SeaclearError):
    """A computation produced a non-finite value."""


class FileFormatError(SeaclearError):
    """A file is missing, truncated, or malformed."""
