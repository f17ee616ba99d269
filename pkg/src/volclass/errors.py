"""Exception hierarchy shared across the package."""


class VolclassError(Exception):
    """Base class for all package errors."""


class ShapeError(VolclassError):
    """Tensor extents incompatible with the requested operation.

    Carries the offending shapes so callers can report both sides.
    """

    def __init__(self, message, *, expected=None, actual=None):
        if expected is not None or actual is not None:
            message = f"{message} (expected={expected}, actual={actual})"
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class ConfigError(VolclassError):
    """Invalid configuration value or combination."""


class StateError(VolclassError):
    """Operation called in the wrong order, e.g. backward before forward."""


class ConsistencyError(VolclassError):
    """Internal invariant violated; indicates a bug, not bad user input."""


class DivergenceError(VolclassError):
    """Training produced a non-finite loss."""

    def __init__(self, message, *, step=None):
        super().__init__(message)
        self.step = step


class ConvergenceError(VolclassError):
    """Iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, *, residual=None):
        super().__init__(message)
        self.residual = residual


class TrainingDataError(VolclassError):
    """Training set violates a fitting precondition (e.g. single class)."""


class MetricError(VolclassError):
    """Metric undefined for the given inputs (e.g. AUC with one class)."""


class NiftiError(VolclassError):
    """Malformed or unsupported NIfTI-1 file."""


class ManifestError(VolclassError):
    """Malformed dataset manifest or inconsistent subject data."""


class ModelFormatError(VolclassError):
    """Corrupt, truncated, or unsupported model container.

    ``reason`` distinguishes the failure modes programmatically:
    "magic", "version", "truncated", "checksum", or "content".
    """

    def __init__(self, message, *, reason="content"):
        super().__init__(message)
        self.reason = reason
