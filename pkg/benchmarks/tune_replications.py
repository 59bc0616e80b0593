"""Hyperparameter sweeps behind the shared settings in ``noteacher.experiments``.

Runs on seeds 100-104, disjoint from the seeds the acceptance suite scores.

    python3 benchmarks/tune_replications.py

Budget sweep: one training configuration is shared by SUP, MT and NoT and is
scored by the AUROC averaged over all three, so the choice favors no method.
Mismatch sweep: the label-noise variance is scanned per method and each method
keeps its own best mean AUPRC.
"""
import itertools

import numpy as np

from noteacher import experiments as E

TUNING_SEEDS = range(100, 105)


def budget_sweep():
    print("budget protocol: lr, patience, hidden -> mean test AUROC per method")
    best = None
    for lr, patience, hidden in itertools.product([1e-3, 3e-3, 1e-2], [7, 15], [[64], [32, 32]]):
        train = dict(E.TRAIN, lr=lr, early_stop_patience=patience, hidden_dims=hidden)
        res = E.budget_experiment(TUNING_SEEDS, train=train)
        means = {m: float(np.mean(v)) for m, v in res.items()}
        avg = float(np.mean(list(means.values())))
        cells = "  ".join(f"{m} {v:.4f}" for m, v in means.items())
        print(f"  lr={lr:<6g} patience={patience:<3} hidden={hidden!s:<9} {cells}  avg {avg:.4f}")
        if best is None or avg > best[0]:
            best = (avg, lr, patience, hidden)
    print(f"  chosen: lr={best[1]:g} patience={best[2]} hidden={best[3]}")


def mismatch_sweep():
    print("mismatch protocol: sigma_y^2 -> mean AUPRC / low-gamma recall per method")
    best = {}
    for p in range(2, 8):
        graph = {"sigma1_sq": 0.25, "sigma2_sq": 0.25, "sigmay_sq": 2.0 ** -p}
        res = E.mismatch_experiment(TUNING_SEEDS, graphs={"NoT": graph, "NoT-GA": graph})
        cells = []
        for m, r in res.items():
            auprc, recall = float(np.mean(r["auprc"])), float(np.mean(r["recall_low"]))
            cells.append(f"{m} {auprc:.4f}/{recall:.4f}")
            if m not in best or auprc > best[m][0]:
                best[m] = (auprc, p)
        print(f"  2^-{p}  " + "  ".join(cells))
    print("  chosen: " + ", ".join(f"{m} 2^-{p}" for m, (_, p) in best.items()))


if __name__ == "__main__":
    budget_sweep()
    mismatch_sweep()
