"""Backbones (dense MLP and max-pooled bag head), NoT pairs and Mean Teacher EMA pairs.

Parameters are plain ``dict[str, ndarray]`` keyed ``W0, b0, W1, b1, ...``.
The forward functions accept either arrays or autodiff leaves as parameter
values, so the same code serves evaluation and training.
"""
from __future__ import annotations

import io
import json
import os
import tempfile
import zipfile
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, ConfigError, ShapeError

CHECKPOINT_VERSION = 1

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}
OUTPUTS = ("sigmoid", "softmax")


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple = (64,)
    output_dim: int = 1
    activation: str = "relu"
    output: str = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ConfigError(f"all layer sizes must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.output not in OUTPUTS:
            raise ConfigError(f"unknown output mode {self.output!r}")

    @property
    def layer_dims(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self):
        return sum(i * o + o for i, o in self.layer_dims)


def init_params(spec: MlpSpec, rng) -> dict:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
    return params


def copy_params(params):
    return {k: np.array(v, copy=True) for k, v in params.items()}


def flatten(params):
    return np.concatenate([np.ravel(params[k]) for k in params])


def leaves(params):
    """Wrap parameter arrays as gradient-tracking autodiff leaves."""
    return {k: ad.Value(v, requires_grad=True) for k, v in params.items()}


def _check_input(spec, x):
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"input shape {x.shape} does not match input_dim={spec.input_dim}")


def _trunk(spec, params, x):
    act = ACTIVATIONS[spec.activation]
    h = x
    for i in range(len(spec.hidden_dims)):
        h = act(h @ params[f"W{i}"] + params[f"b{i}"])
    return h


def _head(spec, params, h):
    i = len(spec.hidden_dims)
    logits = h @ params[f"W{i}"] + params[f"b{i}"]
    if spec.output == "softmax":
        return ad.softmax(logits, axis=1)
    return ad.sigmoid(logits)


def forward_mlp(spec: MlpSpec, params, x):
    """Posteriors ``(batch, K)`` for a flat input batch."""
    x = ad.as_value(x)
    _check_input(spec, x)
    return _head(spec, params, _trunk(spec, params, x))


def bag_offsets(bags):
    lengths = [len(b) for b in bags]
    if any(n < 1 for n in lengths):
        raise ShapeError("every scan must contain at least one slice")
    return np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)


def forward_bags(spec: MlpSpec, params, slices, offsets):
    """Posteriors for a batch of bags given stacked slices and segment offsets.

    The hidden layers act per slice, the result is max-pooled over each bag's
    depth, and the output layer classifies the pooled vector.
    """
    slices = ad.as_value(slices)
    _check_input(spec, slices)
    pooled = ad.segment_max(_trunk(spec, params, slices), offsets)
    return _head(spec, params, pooled)


def forward_bag(spec: MlpSpec, params, scan):
    """One-row posterior for a single variable-depth scan ``(depth, input_dim)``."""
    scan = np.asarray(scan.data if isinstance(scan, ad.Value) else scan, dtype=np.float64)
    if scan.ndim != 2 or len(scan) == 0:
        raise ShapeError("a scan must be a non-empty (depth, features) array")
    _check_input(spec, ad.as_value(scan))
    # one slice per matmul so each hidden vector is bitwise independent of slice order and count
    hidden = ad.concat([_trunk(spec, params, ad.as_value(scan[i : i + 1])) for i in range(len(scan))], axis=0)
    return _head(spec, params, ad.segment_max(hidden, np.array([0, len(scan)], dtype=np.int64)))


@dataclass
class ModelPair:
    """Two independently initialized networks sharing one spec (NoT views)."""

    spec: MlpSpec
    f1: dict
    f2: dict


def init_pair(spec: MlpSpec, seed1, seed2) -> ModelPair:
    return ModelPair(
        spec,
        init_params(spec, np.random.default_rng(seed1)),
        init_params(spec, np.random.default_rng(seed2)),
    )


@dataclass
class EmaPair:
    """Student/teacher parameter sets; the teacher only moves by :func:`ema_update`."""

    student: dict
    teacher: dict
    decay: float = 0.95

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ConfigError(f"EMA decay must be in [0, 1], got {self.decay}")


def ema_update(pair: EmaPair):
    """``teacher <- decay * teacher + (1 - decay) * student``, in place."""
    d = pair.decay
    for k, t in pair.teacher.items():
        t[...] = d * t + (1.0 - d) * pair.student[k]


# -- checkpoint files -----------------------------------------------------------


def _atomic_write(path, writer):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, arrays: dict, meta: dict):
    """Write arrays plus a JSON metadata record as one ``.npz`` file, atomically.

    Arrays keep their exact dtype and bytes, so a load reproduces them bit for bit.
    """
    record = dict(meta, version=CHECKPOINT_VERSION)
    payload = {f"a/{k}": np.asarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(json.dumps(record).encode("utf-8"), dtype=np.uint8)

    def writer(fh):
        buf = io.BytesIO()
        np.savez(buf, **payload)
        fh.write(buf.getvalue())

    _atomic_write(path, writer)


def load_checkpoint(path):
    """Return ``(arrays, meta)``; raises :class:`CheckpointError` on any defect."""
    try:
        with np.load(os.fspath(path), allow_pickle=False) as npz:
            meta = json.loads(bytes(npz["__meta__"]).decode("utf-8"))
            arrays = {k[2:]: np.array(npz[k]) for k in npz.files if k.startswith("a/")}
    except (OSError, ValueError, KeyError, EOFError, zipfile.BadZipFile, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has version {meta.get('version')!r}, expected {CHECKPOINT_VERSION}"
        )
    return arrays, meta


def spec_to_dict(spec: MlpSpec):
    d = asdict(spec)
    d["hidden_dims"] = list(d["hidden_dims"])
    return d


def spec_from_dict(d) -> MlpSpec:
    return MlpSpec(**d)
