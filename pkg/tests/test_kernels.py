import numpy as np
import pytest

from noteacher import kernels


def test_backend_named():
    assert kernels.BACKEND in kernels.IMPLEMENTATIONS


def test_segment_max_against_loop(kernel_impl, rng):
    for _ in range(30):
        lengths = rng.integers(1, 6, size=int(rng.integers(1, 8)))
        offsets = np.concatenate(([0], np.cumsum(lengths)))
        x = np.round(rng.standard_normal((int(offsets[-1]), 4)), 1)  # rounding makes ties common
        pooled, arg = kernels.segment_max(x, offsets, impl=kernel_impl)
        for s in range(len(lengths)):
            seg = x[offsets[s]:offsets[s + 1]]
            np.testing.assert_array_equal(pooled[s], seg.max(axis=0))
            np.testing.assert_array_equal(arg[s], offsets[s] + seg.argmax(axis=0))


def test_segment_max_rejects_bad_offsets(kernel_impl):
    with pytest.raises(ValueError):
        kernels.segment_max(np.ones((3, 2)), np.array([0, 2, 2, 3]), impl=kernel_impl)
    with pytest.raises(ValueError):
        kernels.segment_max(np.ones((3, 2)), np.array([0, 2]), impl=kernel_impl)


def test_midrank_sum_against_scipy(kernel_impl, rng):
    from scipy.stats import rankdata

    for _ in range(30):
        s = np.sort(np.round(rng.random(40), 1))
        y = (rng.random(40) < 0.4).astype(float)
        expected = rankdata(s)[y == 1].sum()
        assert kernels.positive_midrank_sum(s, y, impl=kernel_impl) == pytest.approx(expected, abs=1e-9)


def test_backends_agree(rng):
    if len(kernels.IMPLEMENTATIONS) < 2:
        pytest.skip("compiled backend not built")
    py, cy = kernels.IMPLEMENTATIONS["python"], kernels.IMPLEMENTATIONS["cython"]
    for _ in range(20):
        s = np.sort(np.round(rng.random(100), 2))
        y = (rng.random(100) < 0.3).astype(float)
        assert kernels.positive_midrank_sum(s, y, impl=py) == kernels.positive_midrank_sum(s, y, impl=cy)
        d = s[::-1].copy()
        a = kernels.average_precision_sorted(d, y, impl=py)
        b = kernels.average_precision_sorted(d, y, impl=cy)
        assert abs(a - b) <= 1e-14
