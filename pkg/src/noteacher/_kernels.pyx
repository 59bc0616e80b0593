# cython: language_level=3
"""Compiled kernels: segmented max-pooling over bags and tie-aware rank sums.

Mirrors ``_kernels_py``; see that module for the contract.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def segment_max(const double[:, ::1] x, const cnp.int64_t[::1] offsets):
    cdef Py_ssize_t n_bags = offsets.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.empty((n_bags, d), dtype=np.float64)
    arg_arr = np.empty((n_bags, d), dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef cnp.int64_t[:, ::1] arg = arg_arr
    cdef Py_ssize_t b, i, j, start, stop
    cdef double v
    with nogil:
        for b in range(n_bags):
            start = offsets[b]
            stop = offsets[b + 1]
            for j in range(d):
                out[b, j] = x[start, j]
                arg[b, j] = start
            for i in range(start + 1, stop):
                for j in range(d):
                    v = x[i, j]
                    # strict comparison keeps the lowest index on ties
                    if v > out[b, j]:
                        out[b, j] = v
                        arg[b, j] = i
    return out_arr, arg_arr


def positive_midrank_sum(const double[::1] sorted_scores, const double[::1] sorted_labels):
    cdef Py_ssize_t n = sorted_scores.shape[0]
    cdef Py_ssize_t start = 0, stop, i
    cdef double pos, total = 0.0
    with nogil:
        while start < n:
            stop = start + 1
            while stop < n and sorted_scores[stop] == sorted_scores[start]:
                stop += 1
            pos = 0.0
            for i in range(start, stop):
                pos += sorted_labels[i]
            total += pos * ((start + 1 + stop) / 2.0)
            start = stop
    return total


def average_precision_sorted(const double[::1] sorted_scores, const double[::1] sorted_labels):
    cdef Py_ssize_t n = sorted_scores.shape[0]
    cdef Py_ssize_t start = 0, stop, i
    cdef double n_pos = 0.0, pos, tp = 0.0, ap = 0.0
    for i in range(n):
        n_pos += sorted_labels[i]
    if n_pos == 0.0:
        return 0.0
    with nogil:
        while start < n:
            stop = start + 1
            while stop < n and sorted_scores[stop] == sorted_scores[start]:
                stop += 1
            pos = 0.0
            for i in range(start, stop):
                pos += sorted_labels[i]
            tp += pos
            ap += (pos / n_pos) * (tp / stop)
            start = stop
    return ap
