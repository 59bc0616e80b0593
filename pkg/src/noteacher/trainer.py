"""Training loop shared by every method.

One epoch walks the labeled training set once in a shuffled order, ``nL``
samples per batch; each batch also carries ``nU`` unlabeled samples drawn
uniformly with replacement.  Every ``checkpoint_interval_iters`` iterations the
constituent networks are scored on the validation set, which drives the LR
plateau schedule, early stopping and best-checkpoint selection.

The whole loop state (parameters, optimizer moments, RNG states, counters and
history) round-trips through :meth:`Trainer.save` / :meth:`Trainer.load`, so a
resumed run continues exactly where the saved one stopped.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import metrics as M
from .data import AugPolicy, Dataset, augment_inputs
from .errors import CheckpointError, ConfigError, DataError
from .graphical import GraphHyperParams, compute_gamma, compute_not_weights, estimate_unlabeled_counts
from .models import (
    EmaPair,
    MlpSpec,
    copy_params,
    ema_update,
    forward_bags,
    forward_mlp,
    init_params,
    leaves,
    load_checkpoint,
    save_checkpoint,
    spec_from_dict,
    spec_to_dict,
)
from .optim import Adam
from .utils import rng_from_state, rng_state, stream

METHODS = ("SUP", "PSU", "VAT", "MT", "NoT", "NoT-GA")
MIN_IMPROVEMENT = 1e-5

# constituent networks and which of them receive gradient steps
NETWORKS = {
    "SUP": (("model", "ema"), ("model",)),
    "PSU": (("model", "ema"), ("model",)),
    "VAT": (("model", "ema"), ("model",)),
    "MT": (("student", "teacher"), ("student",)),
    "NoT": (("f1", "f2"), ("f1", "f2")),
    "NoT-GA": (("f1", "f2"), ("f1", "f2")),
}


@dataclass
class TrainConfig:
    method: str = "NoT"
    nL: int = 16
    nU: int = 16
    lr: float = 1e-4
    weight_decay: float = 1e-5
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    ema_decay: float = 0.95
    lambda_cons: float = 1.0
    vat_epsilon: float = 1.0
    vat_xi: float = 1e-6
    vat_power_iters: int = 1
    vat_weight: float = 1.0
    pseudo_weight: float = 1.0
    pseudo_threshold: float = 0.5
    graph: GraphHyperParams = field(default_factory=GraphHyperParams)
    gamma: object = None  # per-class list, "estimate", or None
    max_epochs: int = 50
    early_stop_patience: int = 7
    reduce_lr_patience: int = 3
    lr_reduce_factor: float = 0.1
    checkpoint_interval_iters: int = 10
    binarize_tau: float = 0.5
    seed: int = 0
    hidden_dims: tuple = (64,)
    activation: str = "relu"
    augmentation: str = "noise"
    noise_std: float = 0.1

    def __post_init__(self):
        if isinstance(self.graph, dict):
            self.graph = GraphHyperParams(**self.graph)
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.nL < 1:
            raise ConfigError(f"nL must be >= 1, got {self.nL}")
        if self.nU < 0:
            raise ConfigError(f"nU must be >= 0, got {self.nU}")
        for name in ("early_stop_patience", "reduce_lr_patience", "checkpoint_interval_iters", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 < self.binarize_tau < 1:
            raise ConfigError(f"binarize_tau must be in (0, 1), got {self.binarize_tau}")
        if self.lr <= 0 or self.weight_decay < 0 or self.adam_eps <= 0:
            raise ConfigError("lr and adam_eps must be positive, weight_decay nonnegative")
        if not all(0 <= b < 1 for b in self.adam_betas) or len(self.adam_betas) != 2:
            raise ConfigError(f"adam_betas must be two values in [0, 1), got {self.adam_betas}")
        if not 0 <= self.ema_decay <= 1:
            raise ConfigError(f"ema_decay must be in [0, 1], got {self.ema_decay}")
        if not 0 < self.lr_reduce_factor <= 1:
            raise ConfigError(f"lr_reduce_factor must be in (0, 1], got {self.lr_reduce_factor}")
        if self.lambda_cons < 0 or self.vat_weight < 0 or self.pseudo_weight < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.method == "VAT" and self.vat_epsilon <= 0:
            raise ConfigError("vat_epsilon must be positive")
        if self.method == "NoT-GA" and self.gamma is None:
            raise ConfigError("method NoT-GA requires gamma (a per-class list or 'estimate')")
        if isinstance(self.gamma, str) and self.gamma != "estimate":
            raise ConfigError(f"gamma must be a list of per-class values or 'estimate', got {self.gamma!r}")
        self.aug_policy  # validates the level

    @property
    def aug_policy(self):
        return AugPolicy(level=self.augmentation, noise_std=self.noise_std)

    def to_dict(self):
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        d["hidden_dims"] = list(self.hidden_dims)
        if isinstance(self.gamma, np.ndarray):
            d["gamma"] = self.gamma.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown training keys {unknown}")
        return cls(**d)


@dataclass
class Splits:
    labeled: Dataset
    val: Dataset
    unlabeled: Dataset | None = None
    test: Dataset | None = None

    def __post_init__(self):
        parts = [self.labeled, self.val] + [d for d in (self.unlabeled, self.test) if d is not None]
        if len({(d.K, d.mode, d.structure, d.n_features) for d in parts}) != 1:
            raise DataError("splits disagree on label count, mode, structure or feature count")
        if self.labeled.n == 0:
            raise DataError("labeled training split is empty")
        if not np.all(self.labeled.labeled) or not np.all(self.val.labeled):
            raise DataError("labeled and validation splits must be fully labeled")
        if self.val.n == 0:
            raise DataError("validation split is empty")

    @property
    def n_unlabeled(self):
        return 0 if self.unlabeled is None else self.unlabeled.n


def resolve_gamma(config: TrainConfig, splits: Splits):
    """Per-class labeled probability for NoT-GA, or None for other methods."""
    if config.method != "NoT-GA":
        return None
    if isinstance(config.gamma, str):
        lab = splits.labeled.Y.sum(axis=0)
        est = estimate_unlabeled_counts(splits.val.Y.sum(axis=0), splits.n_unlabeled)
        return compute_gamma(lab, est).gamma
    g = np.asarray(config.gamma, dtype=np.float64)
    if g.shape != (splits.labeled.K,):
        raise ConfigError(f"gamma must have {splits.labeled.K} entries, got {g.shape}")
    return g


def _predict(spec, params, ds: Dataset, batch=512):
    out = []
    for start in range(0, ds.n, batch):
        idx = np.arange(start, min(start + batch, ds.n))
        x, offsets = ds.inputs(idx)
        if offsets is None:
            out.append(forward_mlp(spec, params, x).data)
        else:
            out.append(forward_bags(spec, params, x, offsets).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, spec.output_dim))


def validate(spec, params, val: Dataset, tau):
    """Deterministic scoring without augmentation.

    Returns a dict with ``per_label_auroc``, ``mean_auroc`` (NaN if every
    label is undefined), ``binarized`` predictions and raw ``posteriors``.
    """
    if val.n == 0:
        raise DataError("validation split is empty")
    post = _predict(spec, params, val)
    aurocs = M.per_label_auroc(post, val.Y)
    return {
        "per_label_auroc": aurocs,
        "mean_auroc": M.nanmean_or_nan(aurocs),
        "binarized": M.binarize(post, tau),
        "posteriors": post,
    }


@dataclass
class TrainedRun:
    spec: MlpSpec
    best_params: dict
    best_network: str
    best_iter: int
    best_score: float
    history: list
    loss_series: list
    networks: tuple

    def predict(self, ds: Dataset, network=None):
        return _predict(self.spec, self.best_params[network or self.best_network], ds)


class Trainer:
    def __init__(self, config: TrainConfig, splits: Splits):
        self.config = config
        self.splits = splits
        if config.nU > 0 and config.method != "SUP" and splits.n_unlabeled == 0:
            raise ConfigError("nU > 0 but the unlabeled pool is empty")
        self.gamma = resolve_gamma(config, splits)
        self.weights = compute_not_weights(config.graph)
        ds = splits.labeled
        self.spec = MlpSpec(
            input_dim=ds.n_features,
            hidden_dims=config.hidden_dims,
            output_dim=ds.K,
            activation=config.activation,
            output="softmax" if ds.mode == "unilabel" else "sigmoid",
        )
        self.networks, self.trained = NETWORKS[config.method]
        seed = config.seed
        first = init_params(self.spec, stream(seed, "init-1"))
        if config.method in ("NoT", "NoT-GA"):
            second = init_params(self.spec, stream(seed, "init-2"))
        else:
            second = copy_params(first)
        self.params = {self.networks[0]: first, self.networks[1]: second}
        self.optims = {
            n: Adam(self.params[n], config.lr, config.adam_betas, config.adam_eps, config.weight_decay)
            for n in self.trained
        }
        self.rng_batch = stream(seed, "batching")
        self.rng_aug = stream(seed, "augmentation")
        self.rng_vat = stream(seed, "vat")
        self.policy = config.aug_policy
        self.lr = config.lr

        self.iter = 0
        self.epoch = 0
        self.epoch_order = None
        self.batch_pos = 0
        self.best_score = -math.inf
        self.best_iter = 0
        self.best_network = self.networks[0]
        self.best_params = {n: copy_params(p) for n, p in self.params.items()}
        self.stale = 0
        self.plateau = 0
        self.done = False
        self.history = []
        self.loss_series = []
        self._pending_losses = []

    # -- batches --------------------------------------------------------------

    @property
    def batches_per_epoch(self):
        return math.ceil(self.splits.labeled.n / self.config.nL)

    def _uses_unlabeled(self):
        return self.config.method != "SUP" and self.config.nU > 0

    def _next_batch(self):
        if self.epoch_order is None:
            self.epoch_order = self.rng_batch.permutation(self.splits.labeled.n)
            self.batch_pos = 0
        nL = self.config.nL
        lab = self.epoch_order[self.batch_pos * nL : (self.batch_pos + 1) * nL]
        if self._uses_unlabeled():
            unl = self.rng_batch.integers(0, self.splits.n_unlabeled, size=self.config.nU)
        else:
            unl = np.zeros(0, dtype=np.int64)
        return lab, unl

    def _batch_inputs(self, lab, unl):
        xl, ol = self.splits.labeled.inputs(lab)
        targets = self.splits.labeled.Y[lab]
        mask = np.ones(len(lab), dtype=bool)
        if len(unl) == 0:
            return xl, ol, targets, mask
        xu, ou = self.splits.unlabeled.inputs(unl)
        x = np.concatenate([xl, xu], axis=0)
        offsets = None if ol is None else np.concatenate([ol, ou[1:] + ol[-1]])
        targets = np.concatenate([targets, np.full((len(unl), targets.shape[1]), np.nan)])
        mask = np.concatenate([mask, np.zeros(len(unl), dtype=bool)])
        return x, offsets, targets, mask

    def _forward(self, params, x, offsets):
        if offsets is None:
            return forward_mlp(self.spec, params, x)
        return forward_bags(self.spec, params, x, offsets)

    def _augment(self, x, offsets):
        return augment_inputs(x, offsets, self.policy, self.rng_aug)

    # -- one optimization step ---------------------------------------------------

    def _loss(self, nodes, x, offsets, targets, mask):
        c = self.config
        m = c.method
        if m in ("NoT", "NoT-GA"):
            f1 = self._forward(nodes["f1"], self._augment(x, offsets), offsets)
            f2 = self._forward(nodes["f2"], self._augment(x, offsets), offsets)
            if m == "NoT":
                return L.not_loss(f1, f2, targets, mask, self.weights)
            return L.notga_loss(f1, f2, targets, mask, self.weights, self.gamma)
        if m == "MT":
            fs = self._forward(nodes["student"], self._augment(x, offsets), offsets)
            ft = self._forward(self.params["teacher"], self._augment(x, offsets), offsets)
            return L.mt_loss(fs, ft, targets, mask, c.lambda_cons)
        xa = self._augment(x, offsets)
        f = self._forward(nodes["model"], xa, offsets)
        lab = np.flatnonzero(mask)
        if m == "SUP":
            return L.multilabel_ce(targets[lab], f[lab])
        if m == "PSU":
            return L.pseudo_label_loss(f, targets, mask, c.pseudo_weight, c.pseudo_threshold)
        # VAT: supervised CE plus smoothness on every row of the batch
        frozen = nodes["model"]
        lds = L.vat_lds_multilabel(
            lambda v: self._forward(frozen, v, offsets),
            xa,
            c.vat_epsilon,
            xi=c.vat_xi,
            power_iters=c.vat_power_iters,
            rng=self.rng_vat,
            f_clean=f.data,
        )
        return L.multilabel_ce(targets[lab], f[lab]) + c.vat_weight * lds

    def step(self):
        """One optimization step, followed by validation when the interval is due."""
        if self.done:
            return
        lab, unl = self._next_batch()
        x, offsets, targets, mask = self._batch_inputs(lab, unl)
        nodes = {n: leaves(self.params[n]) for n in self.trained}
        loss = self._loss(nodes, x, offsets, targets, mask)
        for n in self.trained:
            keys = list(nodes[n])
            grads = ad.gradients(loss, [nodes[n][k] for k in keys])
            self.optims[n].step(dict(zip(keys, grads)))
        if self.config.method in ("SUP", "PSU", "VAT", "MT"):
            src, dst = self.networks
            ema_update(EmaPair(self.params[src], self.params[dst], self.config.ema_decay))

        value = float(loss.data)
        self.loss_series.append(value)
        self._pending_losses.append(value)
        self.iter += 1
        self.batch_pos += 1
        if self.batch_pos >= self.batches_per_epoch:
            self.epoch += 1
            self.epoch_order = None
            self.batch_pos = 0
        if self.iter % self.config.checkpoint_interval_iters == 0:
            self._checkpoint()
        if self.epoch >= self.config.max_epochs:
            self.done = True

    # -- validation bookkeeping -------------------------------------------------------

    def _checkpoint(self):
        c = self.config
        results = {n: validate(self.spec, self.params[n], self.splits.val, c.binarize_tau) for n in self.networks}
        a, b = self.networks
        disagreement = int(
            M.disagreement_count(results[a]["posteriors"], results[b]["posteriors"], c.binarize_tau)
        )
        scores = {n: results[n]["mean_auroc"] for n in self.networks}
        row = {
            "iter": self.iter,
            "epoch": self.epoch,
            "lr": self.lr,
            "train_loss": float(np.mean(self._pending_losses)) if self._pending_losses else math.nan,
            **{f"auroc_{n}": scores[n] for n in self.networks},
            "disagreement": disagreement,
        }
        self.history.append(row)
        self._pending_losses = []

        finite = {n: s for n, s in scores.items() if not math.isnan(s)}
        top = max(finite, key=lambda n: finite[n]) if finite else None
        if top is not None and finite[top] >= self.best_score + MIN_IMPROVEMENT:
            self.best_score = finite[top]
            self.best_network = top
            self.best_iter = self.iter
            self.best_params = {n: copy_params(p) for n, p in self.params.items()}
            self.stale = 0
            self.plateau = 0
            return
        self.stale += 1
        self.plateau += 1
        if self.plateau >= c.reduce_lr_patience:
            self.lr *= c.lr_reduce_factor
            for opt in self.optims.values():
                opt.lr = self.lr
            self.plateau = 0
        if self.stale >= c.early_stop_patience:
            self.done = True

    def run(self, until_iter=None) -> TrainedRun:
        """Train to completion, or stop early once ``iter`` reaches ``until_iter``."""
        while not self.done and (until_iter is None or self.iter < until_iter):
            self.step()
        return self.result()

    def result(self) -> TrainedRun:
        return TrainedRun(
            spec=self.spec,
            best_params={n: copy_params(p) for n, p in self.best_params.items()},
            best_network=self.best_network,
            best_iter=self.best_iter,
            best_score=self.best_score,
            history=[dict(r) for r in self.history],
            loss_series=list(self.loss_series),
            networks=self.networks,
        )

    # -- persistence ------------------------------------------------------------------

    def save(self, path):
        arrays = {}
        for n, p in self.params.items():
            for k, v in p.items():
                arrays[f"params/{n}/{k}"] = v
        for n, p in self.best_params.items():
            for k, v in p.items():
                arrays[f"best/{n}/{k}"] = v
        for n, opt in self.optims.items():
            arrays.update(opt.state_arrays(f"adam/{n}"))
        if self.epoch_order is not None:
            arrays["epoch_order"] = self.epoch_order
        meta = {
            "kind": "trainer",
            "config": self.config.to_dict(),
            "spec": spec_to_dict(self.spec),
            "iter": self.iter,
            "epoch": self.epoch,
            "batch_pos": self.batch_pos,
            "lr": self.lr,
            "adam_t": {n: opt.t for n, opt in self.optims.items()},
            "best_score": None if self.best_score == -math.inf else self.best_score,
            "best_iter": self.best_iter,
            "best_network": self.best_network,
            "stale": self.stale,
            "plateau": self.plateau,
            "done": self.done,
            "history": self.history,
            "loss_series": self.loss_series,
            "pending_losses": self._pending_losses,
            "rng": {
                "batching": rng_state(self.rng_batch),
                "augmentation": rng_state(self.rng_aug),
                "vat": rng_state(self.rng_vat),
            },
        }
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path, splits: Splits, config: TrainConfig | None = None):
        """Rebuild a trainer from :meth:`save` output.

        Everything is read and checked before a trainer is built, so a bad file
        never leaves a half-restored object behind.
        """
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "trainer":
            raise CheckpointError(f"{path} is not a trainer checkpoint")
        try:
            cfg = config or TrainConfig.from_dict(_config_from_json(meta["config"]))
            spec = spec_from_dict(meta["spec"])
            t = cls(cfg, splits)
            if spec != t.spec:
                raise CheckpointError(f"{path} was written for a different network shape")
            params = {n: {k: arrays[f"params/{n}/{k}"] for k in t.params[n]} for n in t.networks}
            best = {n: {k: arrays[f"best/{n}/{k}"] for k in t.params[n]} for n in t.networks}
            moments = {
                n: {k: (arrays[f"adam/{n}/m/{k}"], arrays[f"adam/{n}/v/{k}"]) for k in t.params[n]}
                for n in t.trained
            }
            rng = {k: rng_from_state(v) for k, v in meta["rng"].items()}
        except KeyError as exc:
            raise CheckpointError(f"{path} is missing {exc}") from exc

        for n in t.networks:
            for k, v in params[n].items():
                t.params[n][k][...] = v
        t.best_params = best
        for n, opt in t.optims.items():
            opt.t = int(meta["adam_t"][n])
            opt.lr = float(meta["lr"])
            for k, (m, v) in moments[n].items():
                opt.m[k] = m
                opt.v[k] = v
        t.rng_batch, t.rng_aug, t.rng_vat = rng["batching"], rng["augmentation"], rng["vat"]
        t.epoch_order = arrays.get("epoch_order")
        t.iter = int(meta["iter"])
        t.epoch = int(meta["epoch"])
        t.batch_pos = int(meta["batch_pos"])
        t.lr = float(meta["lr"])
        t.best_score = -math.inf if meta["best_score"] is None else float(meta["best_score"])
        t.best_iter = int(meta["best_iter"])
        t.best_network = meta["best_network"]
        t.stale = int(meta["stale"])
        t.plateau = int(meta["plateau"])
        t.done = bool(meta["done"])
        t.history = [dict(r) for r in meta["history"]]
        t.loss_series = [float(v) for v in meta["loss_series"]]
        t._pending_losses = [float(v) for v in meta["pending_losses"]]
        return t


def _config_from_json(d):
    d = dict(d)
    if isinstance(d.get("graph"), dict):
        d["graph"] = GraphHyperParams(**d["graph"])
    return d


def train(config: TrainConfig, splits: Splits) -> TrainedRun:
    return Trainer(config, splits).run()


def history_columns(networks):
    return ["iter", "epoch", "lr", "train_loss", *(f"auroc_{n}" for n in networks), "disagreement"]


def _cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def history_csv(history, networks) -> str:
    cols = history_columns(networks)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in history:
        w.writerow([_cell(row[c]) for c in cols])
    return buf.getvalue()


def read_history_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        row = {}
        for k, v in r.items():
            if k in ("iter", "epoch", "disagreement"):
                row[k] = int(v)
            else:
                row[k] = math.nan if v == "" else float(v)
        out.append(row)
    return out


def config_json(config: TrainConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True)


__all__ = [
    "METHODS",
    "TrainConfig",
    "Splits",
    "Trainer",
    "TrainedRun",
    "train",
    "validate",
    "history_csv",
    "read_history_csv",
]
