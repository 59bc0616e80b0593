"""Ranking metrics, thresholded metrics and view-disagreement counts.

Metrics that are undefined for the given labels (a label with no positives or
no negatives) raise :class:`UndefinedMetricError` in the scalar functions and
show up as NaN in the per-label vectors, which the means skip.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ShapeError, UndefinedMetricError
from .utils import atomic_write_text


def _scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if s.shape != y.shape:
        raise ShapeError(f"scores {s.shape} and labels {y.shape} differ in length")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be binary")
    return s, y


def auroc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative; ties count 1/2.

    Mann-Whitney U from mid-ranks, so the cost is one sort.
    """
    s, y = _scores_labels(scores, labels)
    n_pos = float(y.sum())
    n_neg = float(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    order = np.argsort(s, kind="mergesort")
    rank_sum = kernels.positive_midrank_sum(s[order], y[order])
    return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Average precision: ``sum_i (R_i - R_{i-1}) P_i`` over descending thresholds."""
    s, y = _scores_labels(scores, labels)
    if y.sum() == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    return kernels.average_precision_sorted(s[order], y[order])


def _per_column(metric, scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    out = np.full(scores.shape[1], np.nan)
    for k in range(scores.shape[1]):
        try:
            out[k] = metric(scores[:, k], labels[:, k])
        except UndefinedMetricError:
            pass
    return out


def per_label_auroc(scores, labels):
    return _per_column(auroc, scores, labels)


def per_label_auprc(scores, labels):
    return _per_column(auprc, scores, labels)


def nanmean_or_nan(values):
    values = np.asarray(values, dtype=np.float64)
    if np.all(np.isnan(values)):
        return math.nan
    return float(np.nanmean(values))


def binarize(posteriors, tau):
    """``1[f >= tau]``; exactly ``tau`` counts as positive."""
    return np.asarray(posteriors, dtype=np.float64) >= tau


def argmax_class(posteriors):
    # np.argmax returns the first maximum: lowest index wins ties
    return np.argmax(np.asarray(posteriors), axis=1)


def confusion_unilabel(pred_class, true_class, K) -> np.ndarray:
    """``C[i, j]`` counts samples of true class i predicted as class j."""
    pred = np.asarray(pred_class, dtype=np.int64)
    true = np.asarray(true_class, dtype=np.int64)
    if pred.shape != true.shape:
        raise ShapeError("prediction and truth vectors differ in length")
    if np.any((pred < 0) | (pred >= K) | (true < 0) | (true >= K)):
        raise ValueError(f"class indices must lie in [0, {K})")
    cm = np.zeros((K, K), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def precision_recall_at(posteriors, targets, tau=0.5):
    """Per-class precision and recall with each class posterior binarized at ``tau``.

    Precision is NaN for a class never predicted; recall is NaN for a class
    with no positives.
    """
    pred = binarize(posteriors, tau)
    truth = np.asarray(targets) == 1
    tp = (pred & truth).sum(axis=0).astype(np.float64)
    n_pred = pred.sum(axis=0).astype(np.float64)
    n_true = truth.sum(axis=0).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(n_pred > 0, tp / n_pred, np.nan)
        recall = np.where(n_true > 0, tp / n_true, np.nan)
    return precision, recall


def disagreement_count(f_a, f_b, tau) -> int:
    """Samples whose binarized predictions differ on at least one label."""
    a = np.asarray(f_a)
    b = np.asarray(f_b)
    if a.shape != b.shape:
        raise ShapeError(f"posterior batches are not aligned: {a.shape} vs {b.shape}")
    if not 0 < tau < 1:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    differ = binarize(a, tau) != binarize(b, tau)
    return int(differ.reshape(len(a), -1).any(axis=1).sum())


@dataclass
class MetricsReport:
    per_label_auroc: np.ndarray
    mean_auroc: float
    per_class_auprc: np.ndarray
    mean_auprc: float
    precision: np.ndarray
    recall: np.ndarray
    confusion: np.ndarray | None = None
    disagreement_series: list = field(default_factory=list)

    def to_dict(self):
        def clean(v):
            if isinstance(v, np.ndarray):
                return [clean(x) for x in v.tolist()]
            if isinstance(v, list):
                return [clean(x) for x in v]
            if isinstance(v, float) and math.isnan(v):
                return None
            return v

        return {
            "per_label_auroc": clean(self.per_label_auroc),
            "mean_auroc": clean(self.mean_auroc),
            "per_class_auprc": clean(self.per_class_auprc),
            "mean_auprc": clean(self.mean_auprc),
            "precision": clean(self.precision),
            "recall": clean(self.recall),
            "confusion": None if self.confusion is None else self.confusion.tolist(),
            "disagreement_series": [list(p) for p in self.disagreement_series],
        }


def evaluate(posteriors, targets, mode="multilabel", tau=0.5, disagreement_series=()):
    """Full report on a fixed set of posteriors against one-hot or multi-hot targets."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    aurocs = per_label_auroc(posteriors, targets)
    auprcs = per_label_auprc(posteriors, targets)
    precision, recall = precision_recall_at(posteriors, targets, tau)
    confusion = None
    if mode == "unilabel":
        K = targets.shape[1]
        confusion = confusion_unilabel(argmax_class(posteriors), argmax_class(targets), K)
    return MetricsReport(
        per_label_auroc=aurocs,
        mean_auroc=nanmean_or_nan(aurocs),
        per_class_auprc=auprcs,
        mean_auprc=nanmean_or_nan(auprcs),
        precision=precision,
        recall=recall,
        confusion=confusion,
        disagreement_series=list(disagreement_series),
    )


METRIC_COLUMNS = ("run_id", "seed", "budget", "method", "mean_auroc", "mean_auprc")


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def write_metrics_csv(path, rows):
    """Rows are ``(run_id, seed, budget, method, MetricsReport)`` tuples.

    Per-label columns follow the summary columns; undefined values are empty.
    """
    rows = list(rows)
    K = max((len(r[4].per_label_auroc) for r in rows), default=0)
    header = list(METRIC_COLUMNS)
    header += [f"auroc_{k}" for k in range(K)] + [f"auprc_{k}" for k in range(K)]
    header += [f"precision_{k}" for k in range(K)] + [f"recall_{k}" for k in range(K)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for run_id, seed, budget, method, rep in rows:
        w.writerow(
            [run_id, seed, budget, method, _fmt(rep.mean_auroc), _fmt(rep.mean_auprc)]
            + [_fmt(v) for v in rep.per_label_auroc]
            + [_fmt(v) for v in rep.per_class_auprc]
            + [_fmt(v) for v in rep.precision]
            + [_fmt(v) for v in rep.recall]
        )
    atomic_write_text(path, buf.getvalue())
