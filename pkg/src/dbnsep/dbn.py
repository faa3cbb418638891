"""Greedy layer-wise stacking of RBMs, deterministic passes and model files.

Layer ``i`` is trained with ``layer_seed(cfg.seed, i)``: the SplitMix64
finalizer applied to ``cfg.seed + i`` (mod 2**64). Hidden probabilities,
not samples, are propagated upward as the next layer's training data.

Model file layout (all integers little-endian)::

    b"DBNS"                      magic
    u32 version                  currently 1
    u32 count                    number of entries in layer_sizes
    u32 * count                  layer_sizes, visible layer first
    per layer: W (row-major), a, b as float64
    u32 CRC-32 (zlib) of every preceding byte
"""

import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rbm
from .errors import (
    ConfigError,
    ModelChecksumError,
    ModelFormatError,
    ModelTruncatedError,
    ModelVersionError,
    ShapeError,
    UntrainedModelError,
)
from .numerics import as_matrix, derive_seed

MAGIC = b"DBNS"
FORMAT_VERSION = 1
LARGE_LAYER_SIZES = (784, 2000, 1000, 500, 100)


def layer_seed(seed, index):
    return derive_seed(seed, index)


@dataclass
class DbnModel:
    layer_sizes: list
    layers: list
    trained: list = field(default=None)

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ConfigError(f"need at least two positive layer sizes, got {self.layer_sizes}")
        if len(self.layers) != len(self.layer_sizes) - 1:
            raise ShapeError(f"{len(self.layers)} layers for layer_sizes {self.layer_sizes}")
        for i, p in enumerate(self.layers):
            if (p.n_visible, p.n_hidden) != (self.layer_sizes[i], self.layer_sizes[i + 1]):
                raise ShapeError(
                    f"layer {i} is {p.n_visible}x{p.n_hidden}, expected "
                    f"{self.layer_sizes[i]}x{self.layer_sizes[i + 1]}"
                )
        if self.trained is None:
            self.trained = [False] * len(self.layers)

    @classmethod
    def initial(cls, layer_sizes, seed=0):
        """Untrained stack at the RBM initialization for ``seed``."""
        layers = [
            rbm.init_params(layer_sizes[i], layer_sizes[i + 1], layer_seed(seed, i))
            for i in range(len(layer_sizes) - 1)
        ]
        return cls(list(layer_sizes), layers)

    @classmethod
    def zeros(cls, layer_sizes):
        """All-zero weights and biases, flagged trained. Handy as a neutral baseline."""
        layers = [
            rbm.RbmParams(np.zeros((n, m)), np.zeros((1, n)), np.zeros((1, m)))
            for n, m in zip(layer_sizes[:-1], layer_sizes[1:])
        ]
        return cls(list(layer_sizes), layers, [True] * len(layers))

    @property
    def n_top(self):
        return self.layer_sizes[-1]

    @property
    def is_trained(self):
        return all(self.trained)

    def equals(self, other):
        return (
            self.layer_sizes == other.layer_sizes
            and self.trained == other.trained
            and all(p.equals(q) for p, q in zip(self.layers, other.layers))
        )


def greedy_train(data, layer_sizes, cfg, logs=None):
    """Train each RBM on the mean-field output of the one below it.

    If ``logs`` is a list, each layer's ``TrainLog`` is appended to it.
    """
    data = as_matrix(data, "training data")
    layer_sizes = [int(s) for s in layer_sizes]
    if len(layer_sizes) < 2 or min(layer_sizes) < 1:
        raise ConfigError(f"need at least two positive layer sizes, got {layer_sizes}")
    if data.shape[1] != layer_sizes[0]:
        raise ShapeError(f"data has {data.shape[1]} columns, layer_sizes starts with {layer_sizes[0]}")
    layers = []
    x = data
    for i, n_hidden in enumerate(layer_sizes[1:]):
        params, log = rbm.train(x, n_hidden, replace(cfg, seed=layer_seed(cfg.seed, i)))
        layers.append(params)
        if logs is not None:
            logs.append(log)
        if i + 1 < len(layer_sizes) - 1:
            x = rbm.hidden_probs(params, x)
    return DbnModel(layer_sizes, layers, [True] * len(layers))


def _require_trained(m):
    if not m.is_trained:
        missing = [i for i, t in enumerate(m.trained) if not t]
        raise UntrainedModelError(f"layers {missing} are not trained")


def up_pass(m, v):
    """Top-layer activations: mean-field hidden probabilities composed bottom to top."""
    _require_trained(m)
    x = as_matrix(v, "input batch")
    if x.shape[1] != m.layer_sizes[0]:
        raise ShapeError(f"input has {x.shape[1]} columns, model expects {m.layer_sizes[0]}")
    for p in m.layers:
        x = rbm.hidden_probs(p, x)
    return x


def down_pass(m, top):
    """Visible probabilities from top-layer activations, mean-field throughout."""
    x = as_matrix(top, "top activations")
    if x.shape[1] != m.n_top:
        raise ShapeError(f"top activations have {x.shape[1]} columns, model top layer has {m.n_top}")
    for p in reversed(m.layers):
        x = rbm.visible_probs(p, x)
    return x


def reconstruct(m, v):
    return down_pass(m, up_pass(m, v))


def model_nbytes(layer_sizes):
    """Exact size in bytes of the model file for ``layer_sizes``."""
    header = 4 + 4 + 4 + 4 * len(layer_sizes)
    body = sum(8 * (n * h + n + h) for n, h in zip(layer_sizes[:-1], layer_sizes[1:]))
    return header + body + 4


def dumps_model(m):
    _require_trained(m)
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(m.layer_sizes))]
    parts.append(struct.pack(f"<{len(m.layer_sizes)}I", *m.layer_sizes))
    for p in m.layers:
        for arr in (p.W, p.a, p.b):
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    blob = b"".join(parts)
    return blob + struct.pack("<I", zlib.crc32(blob))


def loads_model(blob):
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise ModelFormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 12:
        raise ModelTruncatedError(f"model file truncated in header ({len(blob)} bytes)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"model format version {version}, this build reads {FORMAT_VERSION}")
    if count < 2:
        raise ModelFormatError(f"layer count {count} is below 2")
    if len(blob) < 12 + 4 * count:
        raise ModelTruncatedError(f"model file truncated in layer sizes ({len(blob)} bytes)")
    sizes = list(struct.unpack_from(f"<{count}I", blob, 12))
    if min(sizes) < 1:
        raise ModelFormatError(f"zero layer size in {sizes}")
    expected = model_nbytes(sizes)
    if len(blob) < expected:
        raise ModelTruncatedError(f"model file has {len(blob)} bytes, expected {expected}")
    if len(blob) > expected:
        raise ModelFormatError(f"model file has {len(blob) - expected} trailing bytes")
    (stored,) = struct.unpack_from("<I", blob, expected - 4)
    actual = zlib.crc32(blob[: expected - 4])
    if stored != actual:
        raise ModelChecksumError(f"checksum mismatch: stored {stored:#010x}, computed {actual:#010x}")

    off = 12 + 4 * count
    layers = []
    for n, h in zip(sizes[:-1], sizes[1:]):
        arrays = []
        for shape in ((n, h), (1, n), (1, h)):
            k = shape[0] * shape[1]
            arrays.append(np.frombuffer(blob, dtype="<f8", count=k, offset=off).astype(np.float64).reshape(shape))
            off += 8 * k
        layers.append(rbm.RbmParams(*arrays))
    return DbnModel(sizes, layers, [True] * len(layers))


def save_model(m, path):
    Path(path).write_bytes(dumps_model(m))


def load_model(path):
    return loads_model(Path(path).read_bytes())
