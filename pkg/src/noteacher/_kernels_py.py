"""NumPy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``NOTEACHER_PURE_PYTHON`` is set.  Semantics must match ``_kernels.pyx``
exactly (bitwise for ``segment_max``, to rounding for the rank sums).
"""
import numpy as np


def segment_max(x, offsets):
    n_bags = len(offsets) - 1
    d = x.shape[1]
    out = np.empty((n_bags, d), dtype=np.float64)
    arg = np.empty((n_bags, d), dtype=np.int64)
    cols = np.arange(d)
    for b in range(n_bags):
        start, stop = offsets[b], offsets[b + 1]
        seg = x[start:stop]
        # argmax returns the first maximum: ties go to the lowest slice index
        local = seg.argmax(axis=0)
        arg[b] = local + start
        out[b] = seg[local, cols]
    return out, arg


def _tie_groups(sorted_scores):
    n = len(sorted_scores)
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    breaks = np.flatnonzero(sorted_scores[1:] != sorted_scores[:-1]) + 1
    starts = np.concatenate(([0], breaks))
    stops = np.concatenate((breaks, [n]))
    return starts, stops


def positive_midrank_sum(sorted_scores, sorted_labels):
    starts, stops = _tie_groups(sorted_scores)
    if len(starts) == 0:
        return 0.0
    pos = np.add.reduceat(sorted_labels, starts)
    # 1-based mid rank of a tie group [start, stop)
    midrank = (starts + 1 + stops) / 2.0
    return float(np.sum(pos * midrank))


def average_precision_sorted(sorted_scores, sorted_labels):
    starts, stops = _tie_groups(sorted_scores)
    n_pos = float(np.sum(sorted_labels))
    if len(starts) == 0 or n_pos == 0:
        return 0.0
    pos = np.add.reduceat(sorted_labels, starts)
    tp = np.cumsum(pos)
    precision = tp / stops
    return float(np.sum((pos / n_pos) * precision))
