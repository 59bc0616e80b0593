"""Training objectives.

Posteriors are ``(batch, K)`` :class:`~noteacher.autodiff.Value` nodes;
targets are plain arrays (rows of unlabeled samples are ignored and may hold
NaN); ``labeled`` is a boolean row mask.  Every cross-entropy and squared-error
term is a mean over its own sample subset and over the K outputs.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, ShapeError
from .graphical import LossWeights


def _as_targets(targets, shape):
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != shape:
        raise ShapeError(f"targets shape {y.shape} does not match posteriors shape {shape}")
    return y


def _split(f, labeled):
    mask = np.asarray(labeled, dtype=bool)
    if mask.shape != (f.shape[0],):
        raise ShapeError(f"labeled mask shape {mask.shape} does not match batch size {f.shape[0]}")
    return np.flatnonzero(mask), np.flatnonzero(~mask)


def _aligned(f1, f2):
    if f1.shape != f2.shape:
        raise ShapeError(f"posterior batches are not aligned: {f1.shape} vs {f2.shape}")


def bce_terms(targets, posteriors):
    """Element-wise binary cross-entropy on clamped posteriors."""
    f = ad.clamp_prob(posteriors)
    y = np.asarray(targets, dtype=np.float64)
    return -(y * ad.log(f) + (1.0 - y) * ad.log(1.0 - f))


def multilabel_ce(targets, posteriors):
    """Per-sample ``-(1/K) sum_k [y log f + (1-y) log(1-f)]``, averaged over the batch."""
    posteriors = ad.as_value(posteriors)
    y = _as_targets(targets, posteriors.shape)
    return ad.mean(bce_terms(y, posteriors))


def mse(a, b):
    """Mean over samples and outputs of the squared difference."""
    return ad.mean(ad.square(ad.sub(a, b)))


def not_loss(f1, f2, targets, labeled, weights: LossWeights):
    """NoT loss: weighted CE of both views on labeled rows plus view agreement.

    The unlabeled agreement term carries the ``nU / nL`` factor that converts
    the mean-aggregated term back to the scale of the likelihood's sum.
    """
    _aligned(f1, f2)
    y = _as_targets(targets, f1.shape)
    lab, unl = _split(f1, labeled)
    n_l, n_u = len(lab), len(unl)
    if n_l == 0:
        raise DataError("NoT loss needs at least one labeled sample in the batch")
    f1l, f2l = f1[lab], f2[lab]
    loss = (
        weights.lam_y1 * multilabel_ce(y[lab], f1l)
        + weights.lam_y2 * multilabel_ce(y[lab], f2l)
        + weights.lam_12_L * mse(f1l, f2l)
    )
    if n_u:
        loss = loss + (weights.lam_12_U * n_u / n_l) * mse(f1[unl], f2[unl])
    return loss


def not_loss_squared(f1, f2, targets, labeled, weights: LossWeights):
    """Sum-aggregated squared-error form (negative log-likelihood of the graph)."""
    _aligned(f1, f2)
    y = _as_targets(targets, f1.shape)
    lab, unl = _split(f1, labeled)
    if len(lab) == 0:
        raise DataError("NoT loss needs at least one labeled sample in the batch")
    f1l, f2l = f1[lab], f2[lab]
    yl = y[lab]
    loss = (
        weights.lam_y1 * ad.sum(ad.square(f1l - yl))
        + weights.lam_y2 * ad.sum(ad.square(f2l - yl))
        + weights.lam_12_L * ad.sum(ad.square(f1l - f2l))
    )
    if len(unl):
        loss = loss + weights.lam_12_U * ad.sum(ad.square(f1[unl] - f2[unl]))
    return loss


def _check_gamma(gamma, k):
    g = np.asarray(gamma, dtype=np.float64)
    if g.shape != (k,):
        raise ConfigError(f"gamma must have length K={k}, got shape {g.shape}")
    if np.any(g < 0) or np.any(g > 1) or np.any(~np.isfinite(g)):
        raise ConfigError("gamma entries must lie in [0, 1]")
    if np.all(g == 1):
        raise ConfigError("all gamma_k == 1: the unlabeled likelihood is identically zero")
    return g


def _check_one_hot(y):
    if np.any((y != 0) & (y != 1)) or np.any(y.sum(axis=1) != 1):
        raise DataError("NoT-GA supports uni-label (one-hot) targets only")


def class_distances(f):
    """``(n, K)`` matrix of mean squared distance from each row to each one-hot vector.

    ``mean_j (f_j - e_kj)^2 = (sum_j f_j^2 - 2 f_k + 1) / K``.
    """
    k = f.shape[1]
    sq = ad.sum(ad.square(f), axis=1, keepdims=True)
    return (sq - 2.0 * f + 1.0) / float(k)


def notga_unlabeled_term(f1u, f2u, weights: LossWeights, gamma):
    """Mean over rows of ``-log sum_k exp(-l1 d1_k - l2 d2_k) (1 - gamma_k)``."""
    g = _check_gamma(gamma, f1u.shape[1])
    keep = np.flatnonzero(g < 1)
    logits = -weights.lam_y1 * class_distances(f1u) - weights.lam_y2 * class_distances(f2u)
    logits = logits[:, keep] + np.log1p(-g[keep])
    return ad.mean(-ad.logsumexp(logits, axis=1))


def notga_loss(f1, f2, targets, labeled, weights: LossWeights, gamma):
    """NoT loss with the class-mismatch generative assumption (uni-label only).

    Labeled rows contribute the same CE terms as NoT; the agreement term uses
    the labeled-graph weight over all rows; unlabeled rows add the
    gamma-weighted marginal over the unknown class.
    """
    _aligned(f1, f2)
    y = _as_targets(targets, f1.shape)
    lab, unl = _split(f1, labeled)
    if len(lab) == 0:
        raise DataError("NoT-GA loss needs at least one labeled sample in the batch")
    _check_one_hot(y[lab])
    g = _check_gamma(gamma, f1.shape[1])
    loss = (
        weights.lam_y1 * multilabel_ce(y[lab], f1[lab])
        + weights.lam_y2 * multilabel_ce(y[lab], f2[lab])
        + weights.lam_12_L * mse(f1, f2)
    )
    if len(unl):
        loss = loss + notga_unlabeled_term(f1[unl], f2[unl], weights, g)
    return loss


def mt_loss(f_student, f_teacher, targets, labeled, lambda_cons):
    """Mean Teacher: CE on labeled student outputs plus student/teacher MSE on all rows.

    The teacher output is detached; no gradient reaches teacher parameters.
    """
    if lambda_cons < 0:
        raise ConfigError(f"lambda_cons must be nonnegative, got {lambda_cons}")
    _aligned(f_student, f_teacher)
    y = _as_targets(targets, f_student.shape)
    lab, _ = _split(f_student, labeled)
    teacher = ad.as_value(f_teacher).detach()
    loss = lambda_cons * mse(f_student, teacher)
    if len(lab):
        loss = multilabel_ce(y[lab], f_student[lab]) + loss
    return loss


def pseudo_labels(posteriors, threshold):
    """Hard labels ``1[f >= threshold]``; a tie counts as positive."""
    return (np.asarray(posteriors, dtype=np.float64) >= threshold).astype(np.float64)


def pseudo_label_loss(f, targets, labeled, w_unl, threshold=0.5):
    """CE on labeled rows plus ``w_unl`` times CE against current pseudo-labels."""
    if not 0 < threshold < 1:
        raise ConfigError(f"pseudo-label threshold must be in (0, 1), got {threshold}")
    if w_unl < 0:
        raise ConfigError(f"pseudo-label weight must be nonnegative, got {w_unl}")
    y = _as_targets(targets, f.shape)
    lab, unl = _split(f, labeled)
    loss = ad.Value(0.0)
    if len(lab):
        loss = multilabel_ce(y[lab], f[lab])
    if len(unl) and w_unl:
        fu = f[unl]
        loss = loss + w_unl * multilabel_ce(pseudo_labels(fu.data, threshold), fu)
    return loss


# -- virtual adversarial training ------------------------------------------------


def bernoulli_kl(p, q):
    """Mean over rows of the per-label averaged ``KL(Bern(p) || Bern(q))``.

    ``p`` is treated as a constant.
    """
    p = np.clip(np.asarray(p.data if isinstance(p, ad.Value) else p, dtype=np.float64),
                ad.PROB_EPS, 1.0 - ad.PROB_EPS)
    q = ad.clamp_prob(q)
    const = p * np.log(p) + (1.0 - p) * np.log(1.0 - p)
    return ad.mean(const - (p * ad.log(q) + (1.0 - p) * ad.log(1.0 - q)))


def _unit_rows(d):
    d = np.asarray(d, dtype=np.float64)
    flat = d.reshape(d.shape[0], -1)
    norm = np.sqrt((flat * flat).sum(axis=1))
    return d / np.maximum(norm, 1e-12).reshape((-1,) + (1,) * (d.ndim - 1))


def vat_perturbation(model_eval, x, f_clean, epsilon, xi=1e-6, power_iters=1, rng=None):
    """Adversarial perturbation of radius ``epsilon`` per row, by power iteration."""
    if power_iters < 1:
        raise ConfigError(f"power_iters must be >= 1, got {power_iters}")
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    rng = np.random.default_rng() if rng is None else rng
    x = np.asarray(x, dtype=np.float64)
    d = _unit_rows(rng.standard_normal(x.shape))
    for _ in range(power_iters):
        probe = ad.Value(xi * d, requires_grad=True)
        kl = bernoulli_kl(f_clean, model_eval(ad.add(x, probe)))
        (grad,) = ad.gradients(kl, [probe])
        d = _unit_rows(grad)
    return epsilon * d


def vat_lds_multilabel(model_eval, x, epsilon, xi=1e-6, power_iters=1, rng=None, f_clean=None):
    """Local distributional smoothness with the multi-label Bernoulli KL.

    ``model_eval`` maps an input Value to posteriors.  The clean posteriors are
    detached; the returned Value is differentiable in the model parameters at
    the (fixed) adversarial perturbation.
    """
    x = np.asarray(x, dtype=np.float64)
    if f_clean is None:
        f_clean = model_eval(ad.Value(x)).data
    r_adv = vat_perturbation(model_eval, x, f_clean, epsilon, xi, power_iters, rng)
    return bernoulli_kl(f_clean, model_eval(ad.Value(x + r_adv)))
