"""Closed-form loss weights from the consensus graphical model.

Each observed variable (network posterior or label) connects to a latent
consensus value through a zero-mean Gaussian potential with its own variance.
Integrating the consensus out leaves a product of pairwise Gaussians on the
differences, with precision ``2 * lam[m, k]`` where

    lam[m, k] = 1 / (2 * var[m] * var[k] * sum_i 1 / var[i]).

Multiplying through by ``prod(var)`` turns this into a ratio of products,
which is how it is evaluated here: it avoids the reciprocals and keeps the
three-variable case bitwise identical to :func:`compute_not_weights`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


def _check_variance(name, v):
    if not (isinstance(v, (int, float, np.floating, np.integer)) and math.isfinite(v) and v > 0):
        raise ConfigError(f"{name} must be a positive finite variance, got {v!r}")
    return float(v)


@dataclass(frozen=True)
class GraphHyperParams:
    """Variances of ``f1 - fc``, ``f2 - fc`` and ``y - fc``."""

    sigma1_sq: float = 2.0**-2
    sigma2_sq: float = 2.0**-2
    sigmay_sq: float = 2.0**-2

    def __post_init__(self):
        for name in ("sigma1_sq", "sigma2_sq", "sigmay_sq"):
            object.__setattr__(self, name, _check_variance(name, getattr(self, name)))


@dataclass(frozen=True)
class LossWeights:
    lam_y1: float
    lam_y2: float
    lam_12_L: float
    lam_12_U: float


def compute_not_weights(h: GraphHyperParams) -> LossWeights:
    """Weights of the four NoT loss terms for the given variances."""
    s1, s2, sy = h.sigma1_sq, h.sigma2_sq, h.sigmay_sq
    denom = math.fsum((s1 * s2, s2 * sy, s1 * sy))
    return LossWeights(
        lam_y1=s2 / (2.0 * denom),
        lam_y2=s1 / (2.0 * denom),
        lam_12_L=sy / (2.0 * denom),
        lam_12_U=1.0 / (2.0 * math.fsum((s1, s2))),
    )


def compute_general_weights(variances) -> np.ndarray:
    """Pairwise weights for ``M`` variables tied to one consensus value.

    Returns a symmetric ``M x M`` matrix; the diagonal is unused and left at 0.
    """
    var = [_check_variance(f"variances[{i}]", v) for i, v in enumerate(variances)]
    m = len(var)
    if m < 2:
        raise ConfigError(f"need at least two variables, got {m}")
    leave_one_out = [math.prod(var[:j] + var[j + 1 :]) for j in range(m)]
    denom = 2.0 * math.fsum(leave_one_out)
    lam = np.zeros((m, m))
    for a in range(m):
        for b in range(a + 1, m):
            others = [v for i, v in enumerate(var) if i not in (a, b)]
            lam[a, b] = lam[b, a] = math.prod(others) / denom
    return lam


@dataclass(frozen=True)
class ClassDistribution:
    """Per-class labeled/unlabeled counts with the derived proportions and gamma.

    ``gamma[k]`` is the probability that a sample of class ``k`` is labeled.
    """

    counts_labeled: np.ndarray
    counts_unlabeled: np.ndarray
    alpha_L: np.ndarray = field(repr=False)
    alpha_U: np.ndarray = field(repr=False)
    gamma: np.ndarray

    @property
    def K(self) -> int:
        return len(self.gamma)


def _normalize(counts):
    total = counts.sum()
    if total == 0:
        return np.zeros(len(counts))
    return counts / total


def compute_gamma(counts_labeled, counts_unlabeled) -> ClassDistribution:
    nl = np.asarray(counts_labeled, dtype=np.float64)
    nu = np.asarray(counts_unlabeled, dtype=np.float64)
    if nl.shape != nu.shape or nl.ndim != 1:
        raise DataError(f"count vectors must be 1-D and equal length, got {nl.shape} and {nu.shape}")
    if np.any(nl < 0) or np.any(nu < 0):
        raise DataError("class counts must be nonnegative")
    total = nl + nu
    empty = np.flatnonzero(total == 0)
    if len(empty):
        raise DataError(f"class {int(empty[0])} has no labeled or unlabeled samples")
    return ClassDistribution(
        counts_labeled=nl,
        counts_unlabeled=nu,
        alpha_L=_normalize(nl),
        alpha_U=_normalize(nu),
        gamma=nl / total,
    )


def estimate_unlabeled_counts(val_class_counts, n_unlabeled) -> np.ndarray:
    """Scale validation class counts up to the unlabeled-set size.

    For data where unlabeled classes are unknown and the validation set is a
    random draw from the same distribution as the unlabeled set.
    """
    val = np.asarray(val_class_counts, dtype=np.float64)
    if val.sum() <= 0:
        raise DataError("validation set has no samples to estimate class prevalence from")
    return val * (float(n_unlabeled) / val.sum())
