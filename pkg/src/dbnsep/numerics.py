"""Dense float64 matrix helpers, seeded sampling and column statistics.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64 in
row-major (C) order. Vectors that the rest of the package treats as
matrices (a single image, a bias vector) are 1 x n.

Random streams come from numpy's ``PCG64`` bit generator, seeded through
``SeedSequence``. ``make_rng(seed, stream)`` gives independent streams for
the same seed, so callers never reuse a stream for two purposes.

``column_variance`` is the *population* variance (divide by N). The
node-selection thresholds downstream are defined against that quantity.
"""

import numpy as np

from .errors import DomainError, EmptyInputError, ShapeError

# largest double below 1 and smallest positive normal double
_SIGMOID_HI = np.nextafter(1.0, 0.0)
_SIGMOID_LO = np.finfo(np.float64).tiny


def as_matrix(x, name="matrix"):
    """Return ``x`` as a C-ordered float64 2-D array, promoting 1-D input to 1 x n."""
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


_MASK64 = (1 << 64) - 1


def derive_seed(seed, index):
    """SplitMix64 finalizer applied to ``seed + index`` (mod 2**64)."""
    z = (int(seed) + int(index)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def make_rng(seed, stream=0):
    """PCG64 generator for ``seed``; distinct ``stream`` values are independent."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def matmul(a, b):
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def sigmoid_map(m):
    """Elementwise logistic function, overflow-free, clamped to the open interval (0, 1)."""
    x = np.asarray(m, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, _SIGMOID_LO, _SIGMOID_HI, out=out)


def bernoulli_sample(probs, rng):
    """Independent 0/1 draws, 1 with the given probability. Advances ``rng``."""
    p = np.asarray(probs, dtype=np.float64)
    bad = ~((p >= 0.0) & (p <= 1.0))
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DomainError(f"probability {p[idx]!r} at index {idx} outside [0, 1]")
    return (rng.random(p.shape) < p).astype(np.float64)


def column_mean(m):
    m = as_matrix(m)
    if m.shape[0] < 1:
        raise EmptyInputError("column_mean needs at least one row")
    return m.mean(axis=0, keepdims=True)


def column_variance(m):
    """Population variance per column (sum of squared deviations / N), two-pass."""
    m = as_matrix(m)
    if m.shape[0] < 2:
        raise EmptyInputError(f"column_variance needs at least two rows, got {m.shape[0]}")
    dev = m - m.mean(axis=0, keepdims=True)
    return np.mean(dev * dev, axis=0, keepdims=True)
