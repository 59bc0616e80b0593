"""YAML experiment configuration with strict key checking.

Example::

    seed: 0
    seeds: [0, 1, 2]
    dataset:
      synthetic: {n: 2000, K: 2, mode: multilabel, geometry: {overlap: 1.0}}
      test_size: 500
    sampling: {budgets: [50, 100], min_val_size: 10}
    train: {nL: 16, nU: 16, lr: 0.001}
    methods:
      SUP: {nU: 0}
      NoT: {}
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import yaml

from . import data as D
from .errors import ConfigError
from .trainer import METHODS, TrainConfig

TOP_KEYS = {"seed", "seeds", "out", "dataset", "sampling", "mismatch", "train", "methods", "splits_manifest"}
DATASET_KEYS = {"synthetic", "csv", "test_size", "label_names"}
SYNTHETIC_KEYS = {"n", "K", "mode", "structure", "geometry"}
CSV_KEYS = {"path", "label_columns", "mode", "id_column", "bag_column", "feature_columns"}
SAMPLING_KEYS = {"budgets", "min_positives_per_label", "min_val_size", "val_fraction"}
MISMATCH_KEYS = {"preset", "class_names", "counts", "labeled_ratio", "unlabeled_ratio", "totals", "ratio_tolerance"}


def _reject_unknown(section, got, allowed):
    if not isinstance(got, dict):
        raise ConfigError(f"{section} must be a mapping")
    unknown = sorted(set(got) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {unknown}")


def _resolve(path, base):
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base, path))


@dataclass
class DatasetConfig:
    synthetic: dict | None = None
    csv: dict | None = None
    test_size: int = 0
    label_names: list | None = None

    def geometry(self):
        return D.Geometry(**(self.synthetic.get("geometry") or {}))


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    seed: int = 0
    seeds: list = field(default_factory=list)
    out: str | None = None
    sampling: D.BudgetPlan | None = None
    mismatch: D.MismatchSpec | None = None
    train: dict = field(default_factory=dict)
    methods: dict = field(default_factory=dict)
    splits_manifest: str | None = None

    def train_config(self, method, seed) -> TrainConfig:
        merged = dict(self.train)
        merged.update(self.methods.get(method) or {})
        merged["method"] = method
        merged["seed"] = int(seed)
        return TrainConfig.from_dict(merged)

    @property
    def budget_tags(self):
        if self.mismatch is not None:
            return ["mismatch"]
        return [f"L{b}" for b in self.sampling.budgets] if self.sampling else []


def _parse_dataset(raw, base):
    _reject_unknown("dataset", raw, DATASET_KEYS)
    syn, csv_ = raw.get("synthetic"), raw.get("csv")
    if (syn is None) == (csv_ is None):
        raise ConfigError("dataset needs exactly one of 'synthetic' or 'csv'")
    if syn is not None:
        _reject_unknown("dataset.synthetic", syn, SYNTHETIC_KEYS)
        for key in ("n", "K"):
            if key not in syn:
                raise ConfigError(f"dataset.synthetic.{key} is required")
            if not isinstance(syn[key], int) or syn[key] < 1:
                raise ConfigError(f"dataset.synthetic.{key} must be a positive integer, got {syn[key]!r}")
        if syn["n"] < syn["K"]:
            raise ConfigError("dataset.synthetic.n must be >= dataset.synthetic.K")
        geo = syn.get("geometry") or {}
        _reject_unknown("dataset.synthetic.geometry", geo, {f.name for f in fields(D.Geometry)})
        D.Geometry(**geo).validate(syn["K"])
        if syn.get("mode", "multilabel") not in D.MODES:
            raise ConfigError(f"dataset.synthetic.mode must be one of {D.MODES}")
        if syn.get("structure", "flat") not in D.STRUCTURES:
            raise ConfigError(f"dataset.synthetic.structure must be one of {D.STRUCTURES}")
    else:
        _reject_unknown("dataset.csv", csv_, CSV_KEYS)
        if "path" not in csv_ or "label_columns" not in csv_:
            raise ConfigError("dataset.csv needs 'path' and 'label_columns'")
        csv_ = dict(csv_, path=_resolve(csv_["path"], base))
        if not os.path.isfile(csv_["path"]):
            raise ConfigError(f"dataset.csv.path does not exist: {csv_['path']}")
    test_size = raw.get("test_size", 0)
    if not isinstance(test_size, int) or test_size < 0:
        raise ConfigError("dataset.test_size must be a nonnegative integer")
    return DatasetConfig(synthetic=syn, csv=csv_, test_size=test_size, label_names=raw.get("label_names"))


def _parse_mismatch(raw):
    _reject_unknown("mismatch", raw, MISMATCH_KEYS)
    if "preset" in raw:
        if len(raw) != 1:
            raise ConfigError("mismatch.preset cannot be combined with other mismatch keys")
        if raw["preset"] not in D.PRESETS:
            raise ConfigError(f"mismatch.preset must be one of {sorted(D.PRESETS)}")
        return D.PRESETS[raw["preset"]]
    if "class_names" not in raw:
        raise ConfigError("mismatch.class_names is required without a preset")
    return D.MismatchSpec(**raw)


def parse_config(raw, base_dir=".") -> ExperimentConfig:
    try:
        return _parse_config(raw, base_dir)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config value: {exc}") from exc


def _parse_config(raw, base_dir):
    if raw is None:
        raise ConfigError("config is empty")
    _reject_unknown("config", raw, TOP_KEYS)
    if "dataset" not in raw:
        raise ConfigError("config needs a 'dataset' section")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    seeds = raw.get("seeds", [seed])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds must be a non-empty list of nonnegative integers")
    if "sampling" in raw and "mismatch" in raw:
        raise ConfigError("use either 'sampling' or 'mismatch', not both")
    sampling = None
    if "sampling" in raw:
        _reject_unknown("sampling", raw["sampling"], SAMPLING_KEYS)
        if "budgets" not in raw["sampling"]:
            raise ConfigError("sampling.budgets is required")
        sampling = D.BudgetPlan(**raw["sampling"])
    mismatch = _parse_mismatch(raw["mismatch"]) if "mismatch" in raw else None

    train = raw.get("train") or {}
    _reject_unknown("train", train, {f.name for f in fields(TrainConfig)} - {"method", "seed"})
    methods = raw.get("methods") or {}
    if isinstance(methods, list):
        methods = {m: {} for m in methods}
    _reject_unknown("methods", methods, METHODS)
    cfg = ExperimentConfig(
        dataset=_parse_dataset(raw["dataset"], base_dir),
        seed=seed,
        seeds=list(seeds),
        out=raw.get("out"),
        sampling=sampling,
        mismatch=mismatch,
        train=dict(train),
        methods={m: dict(v or {}) for m, v in methods.items()},
    )
    if "splits_manifest" in raw:
        path = _resolve(raw["splits_manifest"], base_dir)
        if not os.path.isfile(path):
            raise ConfigError(f"splits_manifest does not exist: {path}")
        cfg.splits_manifest = path
    for m in cfg.methods:
        for s in cfg.seeds:
            cfg.train_config(m, s)  # surface bad training keys at parse time
    return cfg


def load_config(path) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(raw, os.path.dirname(os.path.abspath(path)))
