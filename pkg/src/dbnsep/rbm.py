"""Binary restricted Boltzmann machine trained with contrastive divergence.

Energy of a joint state (v, h)::

    E(v, h) = -v.a - h.b - v W h

Gray-scale pixels in [0, 1] are fed to the positive phase as they are
(treated as probabilities, never sampled). During the Gibbs chain hidden
states are sampled, visible reconstructions stay as probabilities, and the
negative-phase statistics use hidden probabilities.
"""

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, EmptyInputError, EnumerationLimitError, NumericError, ShapeError
from .numerics import as_matrix, bernoulli_sample, make_rng, sigmoid_map

MAX_ENUMERATION_UNITS = 20


@dataclass
class RbmParams:
    W: np.ndarray  # n_visible x n_hidden
    a: np.ndarray  # 1 x n_visible
    b: np.ndarray  # 1 x n_hidden

    def __post_init__(self):
        self.W = as_matrix(self.W, "W")
        self.a = as_matrix(self.a, "visible bias")
        self.b = as_matrix(self.b, "hidden bias")
        nv, nh = self.W.shape
        if self.a.shape != (1, nv) or self.b.shape != (1, nh):
            raise ShapeError(
                f"bias shapes {self.a.shape}, {self.b.shape} inconsistent with W {self.W.shape}"
            )

    @property
    def n_visible(self):
        return self.W.shape[0]

    @property
    def n_hidden(self):
        return self.W.shape[1]

    def copy(self):
        return RbmParams(self.W.copy(), self.a.copy(), self.b.copy())

    def equals(self, other):
        """Bitwise equality of all arrays."""
        return all(
            x.shape == y.shape and x.tobytes() == y.tobytes()
            for x, y in ((self.W, other.W), (self.a, other.a), (self.b, other.b))
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 15
    batch_size: int = 64
    cd_k: int = 1
    momentum: float = 0.5
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate >= 0 and np.isfinite(self.learning_rate)):
            raise ConfigError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.cd_k < 1:
            raise ConfigError(f"cd_k must be >= 1, got {self.cd_k}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass
class TrainLog:
    recon_error: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)


@dataclass
class Velocity:
    """Momentum state carried between ``cd_step`` calls (mutated in place)."""

    dW: np.ndarray
    da: np.ndarray
    db: np.ndarray

    @classmethod
    def zeros_like(cls, p):
        return cls(np.zeros_like(p.W), np.zeros_like(p.a), np.zeros_like(p.b))


def init_params(n_visible, n_hidden, seed):
    if n_visible < 1 or n_hidden < 1:
        raise DomainError(f"RBM dimensions must be >= 1, got {n_visible}x{n_hidden}")
    rng = make_rng(seed, stream=0)
    W = rng.normal(0.0, 0.01, size=(n_visible, n_hidden))
    return RbmParams(W, np.zeros((1, n_visible)), np.zeros((1, n_hidden)))


def _check_cols(m, n, what):
    if m.shape[1] != n:
        raise ShapeError(f"{what} has {m.shape[1]} columns, model expects {n}")


def hidden_probs(p, v):
    """P(h_j = 1 | v) for every row of ``v``."""
    v = as_matrix(v, "visible batch")
    _check_cols(v, p.n_visible, "visible batch")
    return sigmoid_map(v @ p.W + p.b)


def visible_probs(p, h):
    """P(v_i = 1 | h) for every row of ``h``."""
    h = as_matrix(h, "hidden batch")
    _check_cols(h, p.n_hidden, "hidden batch")
    return sigmoid_map(h @ p.W.T + p.a)


def free_energy(p, v):
    """F(v) = -v.a - sum_j log(1 + exp(b_j + (vW)_j)), one value per row (batch x 1)."""
    v = as_matrix(v, "visible batch")
    _check_cols(v, p.n_visible, "visible batch")
    x = v @ p.W + p.b
    return -(v @ p.a.T) - np.logaddexp(0.0, x).sum(axis=1, keepdims=True)


def all_binary_states(n):
    """All 2**n binary row vectors, first unit as the most significant bit."""
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)), dtype=np.float64).reshape(2**n, n)


def log_partition(p):
    total = p.n_visible + p.n_hidden
    if total > MAX_ENUMERATION_UNITS:
        raise EnumerationLimitError(
            f"exact enumeration refused: {total} units exceeds the limit of {MAX_ENUMERATION_UNITS}"
        )
    neg_f = -free_energy(p, all_binary_states(p.n_visible))[:, 0]
    top = neg_f.max()
    return top + np.log(np.exp(neg_f - top).sum())


def exact_log_likelihood(p, data):
    """Mean log P(v) over the rows of binary ``data``, with the exact partition function."""
    data = as_matrix(data, "data")
    _check_cols(data, p.n_visible, "data")
    if not np.all((data == 0.0) | (data == 1.0)):
        raise DomainError("exact_log_likelihood requires binary data")
    log_z = log_partition(p)
    return float(np.mean(-free_energy(p, data)[:, 0] - log_z))


def cd_step(p, batch, cfg, rng, velocity, epoch=None, batch_index=None):
    """One CD-k update on ``batch``.

    Returns ``(new_params, recon_error)`` where ``recon_error`` is the mean
    squared difference between the batch and the k-step visible
    probabilities. ``velocity`` is updated in place.
    """
    v0 = as_matrix(batch, "batch")
    _check_cols(v0, p.n_visible, "batch")
    if np.any((v0 < 0.0) | (v0 > 1.0)):
        raise DomainError("batch entries must lie in [0, 1]")
    n = v0.shape[0]

    h0 = hidden_probs(p, v0)
    h = bernoulli_sample(h0, rng)
    for step in range(cfg.cd_k):
        vk = visible_probs(p, h)
        hk = hidden_probs(p, vk)
        if step + 1 < cfg.cd_k:
            h = bernoulli_sample(hk, rng)

    grad_W = (v0.T @ h0 - vk.T @ hk) / n - cfg.weight_decay * p.W
    grad_a = (v0.sum(axis=0, keepdims=True) - vk.sum(axis=0, keepdims=True)) / n
    grad_b = (h0.sum(axis=0, keepdims=True) - hk.sum(axis=0, keepdims=True)) / n

    lr, mom = cfg.learning_rate, cfg.momentum
    velocity.dW = mom * velocity.dW + lr * grad_W
    velocity.da = mom * velocity.da + lr * grad_a
    velocity.db = mom * velocity.db + lr * grad_b

    new = RbmParams(p.W + velocity.dW, p.a + velocity.da, p.b + velocity.db)
    for arr in (new.W, new.a, new.b):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite parameter update at epoch {epoch}, batch {batch_index}")
    err = float(np.mean((v0 - vk) ** 2))
    return new, err


def train(data, n_hidden, cfg):
    """Minibatch CD training from ``init_params(n_visible, n_hidden, cfg.seed)``.

    Each epoch visits a fresh permutation of the rows; the final batch may be
    short. Returns ``(params, log)``.
    """
    data = as_matrix(data, "training data")
    if data.shape[0] == 0:
        raise EmptyInputError("training data has no rows")
    if data.shape[0] < cfg.batch_size:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds the {data.shape[0]} training rows")
    if np.any((data < 0.0) | (data > 1.0)):
        raise DomainError("training data must lie in [0, 1]")

    params = init_params(data.shape[1], n_hidden, cfg.seed)
    rng = make_rng(cfg.seed, stream=1)
    vel = Velocity.zeros_like(params)
    log = TrainLog()
    n = data.shape[0]
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for bi, lo in enumerate(range(0, n, cfg.batch_size)):
            rows = order[lo:lo + cfg.batch_size]
            params, err = cd_step(params, data[rows], cfg, rng, vel, epoch=epoch, batch_index=bi)
            total += err * len(rows)
        log.recon_error.append(total / n)
        log.epoch_seconds.append(time.perf_counter() - start)
    return params, log
