"""Toy-scale experiment protocols used by the acceptance suite and the tuning script.

Both protocols are fixed end to end by their arguments: data seeds are derived
from the run seed, every method sees identical splits, and results come back
per seed so callers can report spreads as well as means.
"""
from __future__ import annotations

import numpy as np

from . import data as D
from . import metrics as M
from .trainer import Splits, TrainConfig, train

# shared by both protocols; picked on seeds 100-104 (benchmarks/tune_replications.py)
TRAIN = {"lr": 1e-2, "hidden_dims": [64], "max_epochs": 100, "checkpoint_interval_iters": 10,
         "early_stop_patience": 7}

BUDGET_GEOMETRY = {"n_features": 20, "overlap": 1.0, "separation": 2.0}
MISMATCH_GEOMETRY = {"n_features": 10, "overlap": 1.0, "separation": 2.0}


def _graph(sigmay_exp):
    return {"sigma1_sq": 0.25, "sigma2_sq": 0.25, "sigmay_sq": 2.0 ** -sigmay_exp}


# label-noise variance per method, chosen from 2^-2 .. 2^-7 on the tuning seeds
MISMATCH_GRAPH = {"NoT": _graph(2), "NoT-GA": _graph(7)}


def budget_experiment(seeds, methods=("SUP", "MT", "NoT"), train=None, geometry=None,
                      pool_size=2000, test_size=1000, budget_fraction=0.05):
    """Test AUROC per method and seed on a 2-label problem with a small labeling budget.

    Each seed draws its own dataset, holds out ``test_size`` samples, and runs
    the realistic sampler on the remaining pool.  SUP never sees unlabeled data.
    """
    geometry = geometry or BUDGET_GEOMETRY
    train = dict(TRAIN if train is None else train)
    budget = int(round(budget_fraction * pool_size))
    out = {m: [] for m in methods}
    for seed in seeds:
        ds = D.gen_synthetic(1000 + seed, pool_size + test_size, 2, geometry=geometry)
        pool, test = ds.subset(np.arange(pool_size)), ds.subset(np.arange(pool_size, pool_size + test_size))
        plan = D.BudgetPlan([budget], min_val_size=20, val_fraction=0.2)
        lab, val, unl = D.realistic_sample(pool, plan, seed)[0].materialize(pool)
        splits = Splits(lab, val, unl)
        for m in methods:
            cfg = dict(train, method=m, seed=seed)
            if m == "SUP":
                cfg["nU"] = 0
            run = train_run(cfg, splits)
            out[m].append(M.nanmean_or_nan(M.per_label_auroc(run.predict(test), test.Y)))
    return out


def mismatch_experiment(seeds, methods=("NoT", "NoT-GA"), train=None, graphs=None, geometry=None,
                        spec=D.DM_3311, pool_size=8000):
    """Per-seed test AUPRC and recall on the low-gamma classes under class mismatch.

    Returns ``{method: {"auprc": [...], "recall_low": [...]}}``.  Low-gamma
    classes are those whose labeled share is below their unlabeled share.
    NoT-GA gets the gamma realized by the split.
    """
    geometry = geometry or MISMATCH_GEOMETRY
    train = dict(TRAIN if train is None else train)
    graphs = MISMATCH_GRAPH if graphs is None else graphs
    out = {m: {"auprc": [], "recall_low": []} for m in methods}
    K = len(spec.class_names)
    for seed in seeds:
        ds = D.gen_synthetic(2000 + seed, pool_size, K, mode="unilabel", geometry=geometry)
        ms = D.build_mismatch(ds, spec, seed)
        low = np.flatnonzero(ms.distribution.gamma < 0.5)
        lab, val, unl, test = ms.materialize(ds)
        splits = Splits(lab, val, unl)
        for m in methods:
            cfg = dict(train, method=m, seed=seed)
            if m in graphs:
                cfg["graph"] = graphs[m]
            if m == "NoT-GA":
                cfg["gamma"] = ms.distribution.gamma.tolist()
            rep = M.evaluate(train_run(cfg, splits).predict(test), test.Y, "unilabel", 0.5)
            out[m]["auprc"].append(rep.mean_auprc)
            out[m]["recall_low"].append(float(np.mean(rep.recall[low])))
    return out


def train_run(cfg: dict, splits: Splits):
    return train(TrainConfig(**cfg), splits)
