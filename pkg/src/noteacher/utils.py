"""Seeded random streams and atomic file writes."""
from __future__ import annotations

import json
import os
import tempfile
import zlib

import numpy as np

STREAMS = ("dataset", "sampling", "init-1", "init-2", "augmentation", "batching", "vat")


def stream(seed, name):
    """Independent generator for one named purpose under a run seed.

    Perturbing one stream (say, batching) leaves every other stream untouched.
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def stream_seed(seed, name):
    return [int(seed), zlib.crc32(name.encode("utf-8"))]


def rng_state(rng):
    return rng.bit_generator.state


def rng_from_state(state):
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def atomic_write_text(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
