"""Semi-supervised multi-label and uni-label classification with two cooperating networks.

Submodules: ``autodiff`` (reverse-mode tape), ``graphical`` (loss weights and
class-prior ratios), ``losses``, ``models``, ``data``, ``trainer``,
``metrics`` and ``cli``.
"""
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DomainError,
    NoTeacherError,
    ShapeError,
    UndefinedMetricError,
)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DomainError",
    "NoTeacherError",
    "ShapeError",
    "UndefinedMetricError",
]
