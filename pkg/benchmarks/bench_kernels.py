"""Time the compiled kernels against their pure-Python fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 20000]
"""
import argparse
import timeit

import numpy as np

from noteacher import kernels


def _cases(size, rng):
    depth = rng.integers(4, 33, size=max(1, size // 16))
    offsets = np.concatenate(([0], np.cumsum(depth))).astype(np.int64)
    slices = rng.standard_normal((int(offsets[-1]), 64))
    scores = np.sort(np.round(rng.random(size), 3))  # rounding forces tie groups
    labels = (rng.random(size) < 0.3).astype(np.float64)
    desc = scores[::-1].copy()
    return {
        "segment_max": lambda impl: kernels.segment_max(slices, offsets, impl=impl),
        "positive_midrank_sum": lambda impl: kernels.positive_midrank_sum(scores, labels, impl=impl),
        "average_precision_sorted": lambda impl: kernels.average_precision_sorted(desc, labels, impl=impl),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    impls = kernels.IMPLEMENTATIONS
    if "cython" not in impls:
        print("compiled extension not built; only the Python fallback is available")
    cases = _cases(args.size, np.random.default_rng(0))
    print(f"{'kernel':<26}" + "".join(f"{name:>14}" for name in impls) + f"{'speedup':>10}")
    for label, fn in cases.items():
        times = {}
        for name, impl in impls.items():
            times[name] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
        speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
        cells = "".join(f"{times[n] * 1e3:>12.3f}ms" for n in impls)
        print(f"{label:<26}{cells}{speedup:>9.1f}x")


if __name__ == "__main__":
    main()
