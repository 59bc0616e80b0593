"""Hot kernels with a compiled backend and a NumPy fallback.

The compiled extension is preferred.  Set ``NOTEACHER_PURE_PYTHON=1`` to
force the fallback (the test suite runs both).  ``BACKEND`` names the one
in use.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("NOTEACHER_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"
    else:
        BACKEND = "cython"

IMPLEMENTATIONS = {"python": _kernels_py}
if BACKEND == "cython":
    IMPLEMENTATIONS["cython"] = _impl


def segment_max(x, offsets, impl=None):
    """Column-wise max over contiguous row segments.

    ``offsets`` has length ``n_segments + 1`` with ``offsets[0] == 0`` and
    ``offsets[-1] == len(x)``; every segment must be non-empty.  Returns the
    pooled ``(n_segments, d)`` array and the global row index of each maximum,
    lowest index on ties.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if x.ndim != 2:
        raise ValueError(f"segment_max expects a 2-D array, got shape {x.shape}")
    if offsets[0] != 0 or offsets[-1] != x.shape[0] or np.any(np.diff(offsets) < 1):
        raise ValueError("offsets must start at 0, end at len(x) and describe non-empty segments")
    return (impl or _impl).segment_max(x, offsets)


def positive_midrank_sum(sorted_scores, sorted_labels, impl=None):
    """Sum of 1-based mid-ranks of the positives in ascending-sorted scores."""
    s = np.ascontiguousarray(sorted_scores, dtype=np.float64)
    y = np.ascontiguousarray(sorted_labels, dtype=np.float64)
    return (impl or _impl).positive_midrank_sum(s, y)


def average_precision_sorted(sorted_scores, sorted_labels, impl=None):
    """Step-interpolated average precision over descending-sorted scores.

    Tied scores form a single threshold.
    """
    s = np.ascontiguousarray(sorted_scores, dtype=np.float64)
    y = np.ascontiguousarray(sorted_labels, dtype=np.float64)
    return (impl or _impl).average_precision_sorted(s, y)
