"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
anything else -> 3.
"""


class NoTeacherError(Exception):
    """Base class for all package errors."""


class ConfigError(NoTeacherError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(NoTeacherError, ValueError):
    """Input data cannot satisfy a request (coverage, counts, malformed files)."""


class ShapeError(NoTeacherError, ValueError):
    """Operands of a differentiable operation have incompatible shapes."""


class DomainError(NoTeacherError, ValueError):
    """A differentiable operation was evaluated outside its domain."""


class CheckpointError(NoTeacherError):
    """A checkpoint file is unreadable, corrupted, or from another version."""


class UndefinedMetricError(NoTeacherError, ValueError):
    """A metric is undefined for the given labels (e.g. a single class)."""
