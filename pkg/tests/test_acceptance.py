"""Acceptance criteria 1-13, one PASS/FAIL line each.

Under pytest the lines appear in an "acceptance criteria" summary section;
``python3 tests/test_acceptance.py`` prints them directly.
"""
import math
import os
import sys
import tempfile
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from conftest import ACCEPTANCE_LINES  # noqa: E402
from test_data import mismatch_count_failures, per_scan_draws, sampling_invariant_failures  # noqa: E402
from test_graphical import as_tuple, exact_not_weights, marginalization_errors  # noqa: E402
from test_losses import (  # noqa: E402
    GRAD_CASES,
    gradient_suite_worst,
    labeled_equivalence_error,
    likelihood_consistency_error,
)
from test_metrics import metric_oracle_errors  # noqa: E402
from test_models import ema_closed_form_error  # noqa: E402
from test_trainer import history_text, quick_config, resume_mismatches, small_splits  # noqa: E402

from noteacher import data as D  # noqa: E402
from noteacher import experiments as E  # noqa: E402
from noteacher import kernels  # noqa: E402
from noteacher import metrics as M  # noqa: E402
from noteacher import trainer as T  # noqa: E402
from noteacher.graphical import GraphHyperParams, compute_gamma, compute_not_weights  # noqa: E402
from noteacher.models import MlpSpec, forward_bag, init_params  # noqa: E402

EVAL_SEEDS = range(5)


def report(n, ok, detail, seconds):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail} | {seconds:.2f}s"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def test_criterion_01_weight_closed_forms():
    rng = np.random.default_rng(1)
    with Timer() as t:
        worst = 0.0
        for _ in range(1000):
            s = 10.0 ** rng.uniform(-3, 3, size=3)
            got = as_tuple(compute_not_weights(GraphHyperParams(*s)))
            for g, e in zip(got, exact_not_weights(*s)):
                worst = max(worst, float(abs(Fraction(g) - e) / e))
        quarter = as_tuple(compute_not_weights(GraphHyperParams(0.25, 0.25, 0.25)))
    ok = worst <= 1e-12 and quarter == (2 / 3, 2 / 3, 2 / 3, 1.0) and t.seconds < 1.0
    report(1, ok, f"max rel err {worst:.2e} (<= 1e-12), quarter variances -> {quarter}, runtime < 1 s", t.seconds)


def test_criterion_02_marginalization_oracle():
    with Timer() as t:
        worst = max(marginalization_errors(50, np.random.default_rng(2)))
    report(2, worst <= 1e-6 and t.seconds < 30, f"50 configs, max rel err {worst:.2e} (<= 1e-6), runtime < 30 s",
           t.seconds)


def test_criterion_03_gradient_suite():
    rng = np.random.default_rng(3)
    with Timer() as t:
        worst = {name: gradient_suite_worst(name, rng) for name in sorted(GRAD_CASES)}
    top = max(worst.values())
    detail = f"{len(worst)} losses x 20 batches, worst rel err {top:.2e} ({max(worst, key=worst.get)}) (<= 1e-4)"
    report(3, top <= 1e-4 and t.seconds < 60, detail + ", runtime < 60 s", t.seconds)


def test_criterion_04_notga_not_labeled_equivalence():
    with Timer() as t:
        err = labeled_equivalence_error(np.random.default_rng(4), n_batches=50)
    report(4, err <= 1e-12, f"50 labeled-only batches, max value/gradient diff {err:.2e} (<= 1e-12)", t.seconds)


def test_criterion_05_likelihood_consistency():
    with Timer() as t:
        err = likelihood_consistency_error(np.random.default_rng(5), n_batches=100)
    report(5, err <= 1e-10, f"100 batches, max |nll - squared loss| {err:.2e} (<= 1e-10)", t.seconds)


def test_criterion_06_sampling_invariants():
    with Timer() as t:
        failures = sampling_invariant_failures(100)
    detail = f"100 seeds, 1000-sample pool with a 1% label, {len(failures)} violations, runtime < 10 s"
    report(6, not failures and t.seconds < 10, detail, t.seconds)


def test_criterion_07_mismatch_construction():
    with Timer() as t:
        failures = mismatch_count_failures()
        pool = D.gen_synthetic(7, 8000, 4, mode="unilabel", geometry={"n_features": 10})
        gamma = D.build_mismatch(pool, D.DM_3311, 7).distribution.gamma
        gerr = float(np.max(np.abs(gamma - [0.25, 0.25, 0.75, 0.75])))
        table_gamma = compute_gamma(D.DM_3311.counts["labeled"], D.DM_3311.counts["unlabeled"]).gamma
    ok = not failures and gerr <= 1e-12 and np.array_equal(table_gamma, [0.25, 0.25, 0.75, 0.75])
    report(7, ok, f"DM-7511/DM-3311 counts exact ({len(failures)} mismatches), gamma err {gerr:.1e} (<= 1e-12)",
           t.seconds)


def test_criterion_08_metric_oracles():
    with Timer() as t:
        parts, ok = [], True
        for name, impl in sorted(kernels.IMPLEMENTATIONS.items()):
            saved = kernels._impl
            kernels._impl = impl
            try:
                roc, ap = metric_oracle_errors(np.random.default_rng(8))
                ties = M.auroc([0.4] * 5, [1, 0, 1, 0, 0])
                hand = M.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
            finally:
                kernels._impl = saved
            ok &= roc <= 1e-12 and ap <= 1e-12 and ties == 0.5 and hand == 0.75
            parts.append(f"{name}: auroc {roc:.1e}, auprc {ap:.1e}, ties {ties}, 4-point {hand}")
    report(8, ok, "100 instances n <= 200; " + "; ".join(parts), t.seconds)


def test_criterion_09_ema_closed_form():
    rng = np.random.default_rng(9)
    with Timer() as t:
        worst = max(ema_closed_form_error(d, n, rng) for d in (0.91, 0.95, 0.99) for n in (1, 10, 1000))
    report(9, worst <= 1e-12, f"decay in (0.91, 0.95, 0.99), n in (1, 10, 1000), max err {worst:.1e} (<= 1e-12)",
           t.seconds)


def _mean_std(v):
    return f"{np.mean(v):.4f} +/- {np.std(v):.4f}"


@pytest.mark.slow
def test_criterion_10_toy_ssl_replication():
    with Timer() as t:
        res = E.budget_experiment(EVAL_SEEDS)
    mean = {m: float(np.mean(v)) for m, v in res.items()}
    wins = sum(n > s for n, s in zip(res["NoT"], res["SUP"]))
    ok = mean["NoT"] >= mean["SUP"] and mean["NoT"] >= mean["MT"] - 0.01 and t.seconds < 600
    detail = (
        f"test AUROC over 5 seeds: NoT {_mean_std(res['NoT'])}, SUP {_mean_std(res['SUP'])}, "
        f"MT {_mean_std(res['MT'])}; NoT >= SUP and NoT >= MT - 0.01; NoT beats SUP on {wins}/5 seeds"
    )
    report(10, ok, detail, t.seconds)


@pytest.mark.slow
def test_criterion_11_toy_mismatch_replication():
    with Timer() as t:
        res = E.mismatch_experiment(EVAL_SEEDS)
    ga, nt = res["NoT-GA"], res["NoT"]
    ok = (np.mean(ga["auprc"]) >= np.mean(nt["auprc"]) and np.mean(ga["recall_low"]) > np.mean(nt["recall_low"])
          and t.seconds < 600)
    wins = sum(a > b for a, b in zip(ga["recall_low"], nt["recall_low"]))
    detail = (
        f"AUPRC NoT-GA {_mean_std(ga['auprc'])} vs NoT {_mean_std(nt['auprc'])}; "
        f"low-gamma recall NoT-GA {_mean_std(ga['recall_low'])} vs NoT {_mean_std(nt['recall_low'])}; "
        f"NoT-GA recall higher on {wins}/5 seeds"
    )
    report(11, ok, detail, t.seconds)


def test_criterion_12_determinism_and_resume():
    with Timer() as t, tempfile.TemporaryDirectory() as tmp:
        problems = []
        for method in T.METHODS:
            problems += [f"{method}: {p}" for p in resume_mismatches(method, Path(tmp))]
            mode = "unilabel" if method == "NoT-GA" else "multilabel"
            splits = small_splits(mode=mode, K=3 if mode == "unilabel" else 2)
            cfg = quick_config(method)
            if history_text(T.train(cfg, splits)) != history_text(T.train(cfg, splits)):
                problems.append(f"{method}: rerun history differs")
        problems += [f"bags: {p}" for p in resume_mismatches("NoT", Path(tmp), structure="scan-bag")]
    detail = f"{len(T.METHODS)} methods plus bags, rerun and save/resume bit-identical ({len(problems)} diffs)"
    report(12, not problems, detail + (": " + ", ".join(problems) if problems else ""), t.seconds)


def test_criterion_13_bag_invariances():
    rng = np.random.default_rng(13)
    with Timer() as t:
        spec = MlpSpec(6, (12,), 3)
        params = init_params(spec, rng)
        broken = 0
        for _ in range(50):
            scan = rng.standard_normal((int(rng.integers(1, 10)), 6))
            base = forward_bag(spec, params, scan).data
            perm = forward_bag(spec, params, scan[rng.permutation(len(scan))]).data
            dup = forward_bag(spec, params, np.vstack([scan, scan[rng.integers(0, len(scan), 3)]])).data
            broken += not (np.array_equal(base, perm) and np.array_equal(base, dup))
        calls, spread = per_scan_draws()
    ok = broken == 0 and calls == [1] * len(calls) and spread == 0.0
    detail = (f"50 scans bitwise permutation/duplicate invariant ({broken} broken); "
              f"rng draws per scan {sorted(set(calls))}, within-scan transform spread {spread}")
    report(13, ok, detail, t.seconds)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
