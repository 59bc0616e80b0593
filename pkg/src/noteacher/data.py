"""Datasets, augmentation, budget-driven labeling and class-mismatch splits.

A :class:`Dataset` is either flat (``X`` is ``(n, d)``) or a set of scan bags
(``bags`` is a list of ``(depth_i, d)`` arrays).  Targets ``Y`` are ``(n, K)``
binary rows; unlabeled rows hold NaN and have ``labeled == False``.  ``ids``
carry sample identity through every split.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from statistics import NormalDist
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError
from .graphical import ClassDistribution, compute_gamma
from .utils import atomic_write_text

MODES = ("multilabel", "unilabel")
STRUCTURES = ("flat", "scan-bag")


class Sample(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    labeled: bool
    id: int


@dataclass
class Dataset:
    Y: np.ndarray
    labeled: np.ndarray
    ids: np.ndarray
    mode: str = "multilabel"
    structure: str = "flat"
    X: np.ndarray | None = None
    bags: list | None = None

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float64)
        self.labeled = np.asarray(self.labeled, dtype=bool)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.structure not in STRUCTURES:
            raise ConfigError(f"unknown structure {self.structure!r}")
        if self.structure == "flat":
            self.X = np.asarray(self.X, dtype=np.float64)
            n_x = len(self.X)
        else:
            self.bags = [np.asarray(b, dtype=np.float64) for b in self.bags]
            n_x = len(self.bags)
        n = len(self.Y)
        if not (n_x == n == len(self.labeled) == len(self.ids)):
            raise DataError("features, targets, labeled flags and ids differ in length")
        lab = self.Y[self.labeled]
        if np.any((lab != 0) & (lab != 1)):
            raise DataError("labeled targets must be binary")
        if self.mode == "unilabel" and len(lab) and np.any(lab.sum(axis=1) != 1):
            raise DataError("uni-label targets must be one-hot")

    @property
    def n(self):
        return len(self.Y)

    @property
    def K(self):
        return self.Y.shape[1]

    @property
    def n_features(self):
        return self.X.shape[1] if self.structure == "flat" else self.bags[0].shape[1]

    def __len__(self):
        return self.n

    def sample(self, i) -> Sample:
        x = self.X[i] if self.structure == "flat" else self.bags[i]
        return Sample(x, self.Y[i], bool(self.labeled[i]), int(self.ids[i]))

    def subset(self, index, strip_labels=False) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        Y = self.Y[index].copy()
        labeled = self.labeled[index].copy()
        if strip_labels:
            Y[:] = np.nan
            labeled[:] = False
        return Dataset(
            Y=Y,
            labeled=labeled,
            ids=self.ids[index].copy(),
            mode=self.mode,
            structure=self.structure,
            X=None if self.X is None else self.X[index].copy(),
            bags=None if self.bags is None else [self.bags[i] for i in index],
        )

    def class_index(self):
        """Class of each row of a fully labeled uni-label dataset."""
        if self.mode != "unilabel":
            raise DataError("class_index needs a uni-label dataset")
        return np.argmax(self.Y, axis=1)

    def inputs(self, index=None):
        """Model input for the given rows: ``(X, None)`` or ``(stacked slices, offsets)``."""
        index = np.arange(self.n) if index is None else np.asarray(index, dtype=np.int64)
        if self.structure == "flat":
            return self.X[index], None
        bags = [self.bags[i] for i in index]
        offsets = np.concatenate(([0], np.cumsum([len(b) for b in bags]))).astype(np.int64)
        return np.concatenate(bags, axis=0), offsets


# -- synthetic data ---------------------------------------------------------------


@dataclass
class Geometry:
    """Shape of a synthetic problem.

    Multi-label: each label owns a direction; a sample sits at ``+separation/2``
    or ``-separation/2`` along it depending on the label, plus isotropic noise
    of std ``overlap``.  Uni-label: K clusters at distance ``separation`` from
    the origin.  ``warp`` bends the feature space with a fixed random sinusoid
    so that the decision surface is not linear.  Scan bags put the signal in a
    ``signal_fraction`` of slices; the rest are background noise.
    """

    n_features: int = 20
    separation: float = 3.0
    overlap: float = 1.0
    correlation: float = 0.0
    prevalence: float | list = 0.5
    class_weights: list | None = None
    warp: float = 0.0
    min_slices: int = 4
    max_slices: int = 12
    signal_fraction: float = 0.25

    def validate(self, K):
        if self.n_features < 1:
            raise ConfigError("geometry.n_features must be >= 1")
        if self.separation < 0 or self.overlap < 0:
            raise ConfigError("geometry.separation and geometry.overlap must be nonnegative")
        if not 0 <= self.correlation < 1:
            raise ConfigError("geometry.correlation must be in [0, 1)")
        prev = np.broadcast_to(np.asarray(self.prevalence, dtype=np.float64), (K,))
        if np.any(prev <= 0) or np.any(prev >= 1):
            raise ConfigError("geometry.prevalence must lie strictly inside (0, 1)")
        if self.class_weights is not None:
            w = np.asarray(self.class_weights, dtype=np.float64)
            if w.shape != (K,) or np.any(w < 0) or w.sum() <= 0:
                raise ConfigError(f"geometry.class_weights must be {K} nonnegative weights")
        if not 1 <= self.min_slices <= self.max_slices:
            raise ConfigError("geometry needs 1 <= min_slices <= max_slices")
        if not 0 < self.signal_fraction <= 1:
            raise ConfigError("geometry.signal_fraction must be in (0, 1]")
        return prev


def _directions(rng, d, K):
    g = rng.standard_normal((d, K))
    if K <= d:
        q, _ = np.linalg.qr(g)
        return q.T
    return (g / np.linalg.norm(g, axis=0)).T


def gen_synthetic(seed, n, K, mode="multilabel", structure="flat", geometry=None) -> Dataset:
    """Deterministic synthetic dataset; see :class:`Geometry`."""
    geo = geometry if isinstance(geometry, Geometry) else Geometry(**(geometry or {}))
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    if n < K:
        raise ConfigError(f"need n >= K, got n={n}, K={K}")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    if structure not in STRUCTURES:
        raise ConfigError(f"unknown structure {structure!r}")
    prev = geo.validate(K)
    rng = np.random.default_rng(seed)
    d = geo.n_features
    dirs = _directions(rng, d, K)
    warp_w = rng.standard_normal((d, d)) / math.sqrt(d)
    warp_b = rng.uniform(0, 2 * np.pi, size=d)

    if mode == "multilabel":
        z = rng.standard_normal((n, K))
        if geo.correlation:
            shared = rng.standard_normal((n, 1))
            z = math.sqrt(geo.correlation) * shared + math.sqrt(1 - geo.correlation) * z
        cut = np.array([NormalDist().inv_cdf(p) for p in prev])
        Y = (z < cut).astype(np.float64)
        centers = (2.0 * Y - 1.0) @ dirs * (geo.separation / 2.0)
    else:
        w = np.ones(K) if geo.class_weights is None else np.asarray(geo.class_weights, float)
        cls = rng.choice(K, size=n, p=w / w.sum())
        Y = np.eye(K)[cls]
        centers = dirs[cls] * geo.separation

    def warp(x):
        if not geo.warp:
            return x
        return x + geo.warp * np.sin(x @ warp_w + warp_b)

    if structure == "flat":
        X = warp(centers + geo.overlap * rng.standard_normal((n, d)))
        return Dataset(Y=Y, labeled=np.ones(n, bool), ids=np.arange(n), mode=mode, X=X)

    bags = []
    for i in range(n):
        depth = int(rng.integers(geo.min_slices, geo.max_slices + 1))
        n_signal = max(1, int(round(geo.signal_fraction * depth)))
        slices = geo.overlap * rng.standard_normal((depth, d))
        where = rng.choice(depth, size=n_signal, replace=False)
        slices[where] += centers[i]
        bags.append(warp(slices))
    return Dataset(
        Y=Y, labeled=np.ones(n, bool), ids=np.arange(n), mode=mode, structure="scan-bag", bags=bags
    )


# -- augmentation ---------------------------------------------------------------

AUG_LEVELS = ("none", "noise", "noise+affine", "noise+affine+intensity")


@dataclass(frozen=True)
class AugPolicy:
    """Feature-space augmentation, cumulative by level.

    noise: additive Gaussian vector; affine: per-feature random scale and
    shift; intensity: monotone remap ``x + a * tanh(x)`` with ``|a| < 1``.
    """

    level: str = "noise"
    noise_std: float = 0.1
    scale_std: float = 0.1
    shift_std: float = 0.1
    intensity_std: float = 0.3

    def __post_init__(self):
        if self.level not in AUG_LEVELS:
            raise ConfigError(f"unknown augmentation level {self.level!r}; choose from {AUG_LEVELS}")

    @property
    def rank(self):
        return AUG_LEVELS.index(self.level)

    def n_draws(self, d):
        return (0, d, 3 * d, 3 * d + 1)[self.rank]


def _apply(x, u, policy, d):
    # u holds the parameter draws along its last axis; x and u broadcast by row
    r = policy.rank
    x = x + policy.noise_std * u[..., :d]
    if r >= 2:
        x = x * (1.0 + policy.scale_std * u[..., d : 2 * d]) + policy.shift_std * u[..., 2 * d : 3 * d]
    if r >= 3:
        a = np.clip(policy.intensity_std * u[..., 3 * d : 3 * d + 1], -0.9, 0.9)
        x = x + a * np.tanh(x)
    return x


def augment(sample, policy: AugPolicy, rng):
    """Augment one flat sample or one scan.

    All transform parameters come from a single ``rng`` call; for a scan the
    same parameters are applied to every slice.  Targets and the labeled flag
    pass through untouched.
    """
    if isinstance(sample, Sample):
        return sample._replace(x=augment(sample.x, policy, rng))
    x = np.asarray(sample, dtype=np.float64)
    if policy.rank == 0:
        return x.copy()
    d = x.shape[-1]
    u = rng.standard_normal(policy.n_draws(d))
    return _apply(x, u, policy, d)


def augment_inputs(x, offsets, policy: AugPolicy, rng):
    """Augment a model input batch (flat rows, or stacked slices with offsets).

    One parameter row is drawn per sample (per scan for bags) in one call.
    """
    x = np.asarray(x, dtype=np.float64)
    if policy.rank == 0:
        return x.copy()
    d = x.shape[1]
    n = len(x) if offsets is None else len(offsets) - 1
    u = rng.standard_normal((n, policy.n_draws(d)))
    if offsets is None:
        return _apply(x, u, policy, d)
    return _apply(x, np.repeat(u, np.diff(offsets), axis=0), policy, d)


# -- realistic budget sampling -------------------------------------------------


@dataclass
class BudgetPlan:
    budgets: list
    min_positives_per_label: int = 1
    min_val_size: int = 1
    val_fraction: float = 0.1

    def __post_init__(self):
        self.budgets = [int(b) for b in self.budgets]
        if not self.budgets or any(b < 1 for b in self.budgets):
            raise ConfigError("budgets must be a non-empty list of positive sizes")
        if any(b2 <= b1 for b1, b2 in zip(self.budgets, self.budgets[1:])):
            raise ConfigError(f"budgets must be strictly ascending, got {self.budgets}")
        if self.min_positives_per_label < 1:
            raise ConfigError("min_positives_per_label must be >= 1")
        if self.min_val_size < 1:
            raise ConfigError("min_val_size must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must be in (0, 1)")


@dataclass
class BudgetSplit:
    """Row indices into the pool for one labeling budget."""

    budget: int
    n_final: int
    labeled_train: np.ndarray
    val: np.ndarray
    unlabeled: np.ndarray
    draw_order: np.ndarray = field(repr=False)

    @property
    def labeled(self):
        return self.draw_order[: self.n_final]

    def materialize(self, pool: Dataset):
        """``(labeled_train, val, unlabeled)`` datasets, unlabeled with labels stripped."""
        return (
            pool.subset(self.labeled_train),
            pool.subset(self.val),
            pool.subset(self.unlabeled, strip_labels=True),
        )

    def to_manifest(self):
        return {
            "budget": self.budget,
            "n_final": self.n_final,
            "labeled_train": self.labeled_train.tolist(),
            "val": self.val.tolist(),
            "unlabeled": self.unlabeled.tolist(),
            "draw_order": self.draw_order.tolist(),
        }

    @classmethod
    def from_manifest(cls, m):
        return cls(
            budget=int(m["budget"]),
            n_final=int(m["n_final"]),
            labeled_train=np.asarray(m["labeled_train"], dtype=np.int64),
            val=np.asarray(m["val"], dtype=np.int64),
            unlabeled=np.asarray(m["unlabeled"], dtype=np.int64),
            draw_order=np.asarray(m["draw_order"], dtype=np.int64),
        )


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def realistic_sample(pool: Dataset, plan: BudgetPlan, seed, label_names=None) -> list:
    """Budget-driven labeled sets with label-coverage top-up, one split per budget.

    Samples are annotated in one random order.  For budget L the first L are
    taken, then drawing continues until every label has the minimum number of
    positives, giving ``L_F >= L``.  Larger budgets extend the same order, so
    each labeled set contains the previous one.  The labeled set is split at
    random into train and validation; everything not yet drawn is the
    unlabeled pool.
    """
    if np.any(~pool.labeled) or np.any(np.isnan(pool.Y)):
        raise DataError("realistic sampling needs a pool with known labels")
    n = pool.n
    if plan.budgets[-1] > n:
        raise DataError(f"budget {plan.budgets[-1]} exceeds pool size {n}")
    seeds = np.random.SeedSequence(int(seed)).spawn(1 + len(plan.budgets))
    order = np.random.default_rng(seeds[0]).permutation(n)
    cum = np.cumsum(pool.Y[order] == 1, axis=0)

    need = plan.min_positives_per_label
    covered_at = np.zeros(pool.K, dtype=np.int64)
    for k in range(pool.K):
        hit = np.searchsorted(cum[:, k], need)
        if hit >= n:
            name = label_names[k] if label_names else k
            raise DataError(
                f"label {name!r} has only {int(cum[-1, k])} positives in the pool; "
                f"cannot reach {need}"
            )
        covered_at[k] = hit + 1
    coverage = int(covered_at.max())

    splits = []
    for b, budget in enumerate(plan.budgets):
        n_final = max(budget, coverage)
        n_val = max(plan.min_val_size, _round_half_up(plan.val_fraction * n_final))
        n_val = min(n_val, n_final - 1)
        if n_val < 1:
            raise DataError(f"labeled set of size {n_final} is too small to split off validation")
        labeled = order[:n_final]
        picked = np.random.default_rng(seeds[1 + b]).permutation(n_final)
        val = np.sort(labeled[picked[:n_val]])
        train = np.sort(labeled[picked[n_val:]])
        splits.append(
            BudgetSplit(
                budget=budget,
                n_final=n_final,
                labeled_train=train,
                val=val,
                unlabeled=np.sort(order[n_final:]),
                draw_order=order.copy(),
            )
        )
    return splits


# -- class distribution mismatch --------------------------------------------------

SPLITS = ("labeled", "unlabeled", "val", "test")
NIH4_CLASSES = ["No Finding", "Infiltration", "Pneumothorax", "Mass"]


def counts_from_ratios(ratio, total):
    """Integer counts proportional to ``ratio`` summing to ``total`` (largest remainder)."""
    r = np.asarray(ratio, dtype=np.float64)
    if np.any(r < 0) or r.sum() <= 0:
        raise ConfigError(f"invalid ratio {list(ratio)}")
    exact = r / r.sum() * total
    counts = np.floor(exact).astype(np.int64)
    short = int(total - counts.sum())
    for k in np.argsort(-(exact - counts), kind="stable")[:short]:
        counts[k] += 1
    return counts


@dataclass
class MismatchSpec:
    """Per-class split sizes, either explicit or derived from ratios and totals.

    When both counts and ratios are given the counts are used and the ratios
    are checked against them to within ``ratio_tolerance`` (absolute, on
    normalized proportions); published tables round their counts.
    """

    class_names: list
    counts: dict | None = None
    labeled_ratio: list | None = None
    unlabeled_ratio: list | None = None
    totals: dict | None = None
    ratio_tolerance: float = 0.05

    def __post_init__(self):
        K = len(self.class_names)
        if self.counts is None:
            if self.labeled_ratio is None or self.unlabeled_ratio is None or self.totals is None:
                raise ConfigError("mismatch spec needs explicit counts or ratios with totals")
            ratio = {
                "labeled": self.labeled_ratio,
                "unlabeled": self.unlabeled_ratio,
                "val": self.unlabeled_ratio,
                "test": self.unlabeled_ratio,
            }
            missing = [s for s in SPLITS if s not in self.totals]
            if missing:
                raise ConfigError(f"mismatch totals missing splits {missing}")
            self.counts = {s: counts_from_ratios(ratio[s], int(self.totals[s])).tolist() for s in SPLITS}
        unknown = set(self.counts) - set(SPLITS)
        if unknown or set(SPLITS) - set(self.counts):
            raise ConfigError(f"mismatch counts must have exactly the splits {SPLITS}")
        for s in SPLITS:
            c = np.asarray(self.counts[s])
            if c.shape != (K,) or np.any(c < 0):
                raise ConfigError(f"mismatch counts[{s!r}] must be {K} nonnegative integers")
        for split, ratio in (("labeled", self.labeled_ratio), ("unlabeled", self.unlabeled_ratio)):
            if ratio is None:
                continue
            c = np.asarray(self.counts[split], dtype=np.float64)
            r = np.asarray(ratio, dtype=np.float64)
            if np.max(np.abs(c / c.sum() - r / r.sum())) > self.ratio_tolerance:
                raise ConfigError(f"{split} counts {list(c)} are inconsistent with ratio {list(r)}")


DM_7511 = MismatchSpec(
    class_names=NIH4_CLASSES,
    counts={
        "labeled": [243, 243, 243, 243],
        "unlabeled": [1452, 1019, 214, 231],
        "val": [73, 47, 6, 11],
        "test": [2835, 1843, 484, 423],
    },
    labeled_ratio=[1, 1, 1, 1],
    unlabeled_ratio=[7, 5, 1, 1],
)

DM_3311 = MismatchSpec(
    class_names=NIH4_CLASSES,
    counts={
        "labeled": [200, 200, 600, 600],
        "unlabeled": [600, 600, 200, 200],
        "val": [60, 60, 20, 20],
        "test": [600, 600, 200, 200],
    },
    labeled_ratio=[1, 1, 3, 3],
    unlabeled_ratio=[3, 3, 1, 1],
)

_DM_TOTALS = {"labeled": 1600, "unlabeled": 1600, "val": 160, "test": 1600}

DM_1133 = MismatchSpec(
    class_names=NIH4_CLASSES,
    labeled_ratio=[3, 3, 1, 1],
    unlabeled_ratio=[1, 1, 3, 3],
    totals=_DM_TOTALS,
)

DM_1313 = MismatchSpec(
    class_names=NIH4_CLASSES,
    labeled_ratio=[3, 1, 3, 1],
    unlabeled_ratio=[1, 3, 1, 3],
    totals=_DM_TOTALS,
)

PRESETS = {"DM-7511": DM_7511, "DM-3311": DM_3311, "DM-1133": DM_1133, "DM-1313": DM_1313}


@dataclass
class MismatchSplits:
    labeled: np.ndarray
    unlabeled: np.ndarray
    val: np.ndarray
    test: np.ndarray
    distribution: ClassDistribution

    def materialize(self, pool: Dataset):
        """``(labeled, val, unlabeled, test)`` datasets; unlabeled labels stripped."""
        return (
            pool.subset(self.labeled),
            pool.subset(self.val),
            pool.subset(self.unlabeled, strip_labels=True),
            pool.subset(self.test),
        )

    def to_manifest(self):
        return {
            "labeled": self.labeled.tolist(),
            "unlabeled": self.unlabeled.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
            "counts_labeled": self.distribution.counts_labeled.tolist(),
            "counts_unlabeled": self.distribution.counts_unlabeled.tolist(),
            "gamma": self.distribution.gamma.tolist(),
        }

    @classmethod
    def from_manifest(cls, m):
        return cls(
            labeled=np.asarray(m["labeled"], dtype=np.int64),
            unlabeled=np.asarray(m["unlabeled"], dtype=np.int64),
            val=np.asarray(m["val"], dtype=np.int64),
            test=np.asarray(m["test"], dtype=np.int64),
            distribution=compute_gamma(m["counts_labeled"], m["counts_unlabeled"]),
        )


def build_mismatch(pool: Dataset, spec: MismatchSpec, seed) -> MismatchSplits:
    """Draw exactly the requested per-class counts into each split."""
    if pool.mode != "unilabel":
        raise DataError("mismatch construction needs a uni-label pool")
    K = len(spec.class_names)
    if pool.K != K:
        raise DataError(f"pool has K={pool.K} classes, spec names {K}")
    rng = np.random.default_rng(seed)
    cls = pool.class_index()
    parts = {s: [] for s in SPLITS}
    for k, name in enumerate(spec.class_names):
        members = rng.permutation(np.flatnonzero(cls == k))
        start = 0
        for s in SPLITS:
            c = int(spec.counts[s][k])
            if start + c > len(members):
                raise DataError(
                    f"class {name!r}: split {s!r} needs {c} samples but only "
                    f"{len(members) - start} remain in the pool"
                )
            parts[s].append(members[start : start + c])
            start += c
    idx = {s: np.sort(np.concatenate(parts[s])) for s in SPLITS}
    realized_l = np.bincount(cls[idx["labeled"]], minlength=K)
    realized_u = np.bincount(cls[idx["unlabeled"]], minlength=K)
    return MismatchSplits(
        labeled=idx["labeled"],
        unlabeled=idx["unlabeled"],
        val=idx["val"],
        test=idx["test"],
        distribution=compute_gamma(realized_l, realized_u),
    )


# -- CSV ingestion ------------------------------------------------------------------


@dataclass
class CsvSchema:
    """Column roles of a dataset CSV.

    Feature columns default to every column that is not a label, id or bag column.
    Setting ``bag_column`` groups consecutive-or-not rows with the same bag id
    into one scan; all rows of a bag must carry identical labels.
    """

    label_columns: list
    mode: str = "multilabel"
    id_column: str | None = "id"
    bag_column: str | None = None
    feature_columns: list | None = None


def _parse_label(cell, line, col):
    cell = cell.strip()
    if cell == "":
        return None
    if cell in ("0", "1", "0.0", "1.0"):
        return float(cell)
    raise DataError(f"line {line}: label column {col!r} has non-binary value {cell!r}")


def ingest_csv(path, schema: CsvSchema) -> Dataset:
    """Load a dataset; rows with all label cells empty become unlabeled samples."""
    if schema.mode not in MODES:
        raise ConfigError(f"unknown mode {schema.mode!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        pos = {name: i for i, name in enumerate(header)}
        missing = [c for c in schema.label_columns if c not in pos]
        for c in (schema.id_column, schema.bag_column):
            if c is not None and c not in pos:
                missing.append(c)
        if missing:
            raise DataError(f"{path}: header lacks columns {missing}")
        reserved = set(schema.label_columns) | {schema.id_column, schema.bag_column}
        feats = schema.feature_columns or [c for c in header if c not in reserved]
        bad = [c for c in feats if c not in pos]
        if bad or not feats:
            raise DataError(f"{path}: feature columns {bad or '(none)'} not usable")
        f_idx = [pos[c] for c in feats]
        l_idx = [pos[c] for c in schema.label_columns]

        xs, ys, ids, bag_keys = [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            try:
                x = [float(row[i]) for i in f_idx]
            except ValueError:
                raise DataError(f"line {line}: non-numeric feature value") from None
            labels = [_parse_label(row[i], line, c) for i, c in zip(l_idx, schema.label_columns)]
            present = [v is not None for v in labels]
            if any(present) and not all(present):
                raise DataError(f"line {line}: some label cells are empty and some are not")
            ys.append([np.nan if v is None else v for v in labels])
            xs.append(x)
            if schema.id_column is not None:
                try:
                    ids.append(int(row[pos[schema.id_column]]))
                except ValueError:
                    raise DataError(f"line {line}: id must be an integer") from None
            if schema.bag_column is not None:
                bag_keys.append((row[pos[schema.bag_column]], line))

    X = np.asarray(xs, dtype=np.float64).reshape(len(xs), len(f_idx))
    Y = np.asarray(ys, dtype=np.float64).reshape(len(ys), len(l_idx))
    if schema.bag_column is None:
        ids_arr = np.asarray(ids) if schema.id_column is not None else np.arange(len(X))
        labeled = ~np.isnan(Y).any(axis=1)
        return Dataset(Y=Y, labeled=labeled, ids=ids_arr, mode=schema.mode, X=X)

    groups = {}
    for row_i, (key, line) in enumerate(bag_keys):
        groups.setdefault(key, []).append((row_i, line))
    bags, bag_y, bag_ids = [], [], []
    for key, rows in groups.items():
        first = rows[0][0]
        for r, line in rows[1:]:
            if not np.array_equal(Y[r], Y[first], equal_nan=True):
                raise DataError(f"line {line}: labels differ from earlier rows of bag {key!r}")
        bags.append(X[[r for r, _ in rows]])
        bag_y.append(Y[first])
        bag_ids.append(ids[first] if schema.id_column is not None else len(bag_ids))
    Yb = np.asarray(bag_y).reshape(len(bags), len(l_idx))
    return Dataset(
        Y=Yb,
        labeled=~np.isnan(Yb).any(axis=1),
        ids=np.asarray(bag_ids),
        mode=schema.mode,
        structure="scan-bag",
        bags=bags,
    )


def default_schema(ds: Dataset) -> CsvSchema:
    return CsvSchema(
        label_columns=[f"y{k}" for k in range(ds.K)],
        mode=ds.mode,
        id_column="id",
        bag_column="bag" if ds.structure == "scan-bag" else None,
        feature_columns=[f"x{j}" for j in range(ds.n_features)],
    )


def _cell(v):
    return "" if np.isnan(v) else repr(int(v))


def export_csv(ds: Dataset, path, schema: CsvSchema | None = None):
    """Write ``ds`` so that :func:`ingest_csv` with the same schema restores it exactly."""
    schema = schema or default_schema(ds)
    feats = schema.feature_columns or [f"x{j}" for j in range(ds.n_features)]
    header = [schema.id_column] if schema.id_column else []
    if schema.bag_column:
        header.append(schema.bag_column)
    header += list(feats) + list(schema.label_columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i in range(ds.n):
        labels = [_cell(v) for v in ds.Y[i]]
        lead = [str(int(ds.ids[i]))] if schema.id_column else []
        if ds.structure == "flat":
            w.writerow(lead + [repr(float(v)) for v in ds.X[i]] + labels)
        else:
            for sl in ds.bags[i]:
                w.writerow(lead + [str(int(ds.ids[i]))] + [repr(float(v)) for v in sl] + labels)
    atomic_write_text(path, buf.getvalue())


def with_labels_hidden(ds: Dataset) -> Dataset:
    return replace(ds, Y=np.full_like(ds.Y, np.nan), labeled=np.zeros(ds.n, bool))
