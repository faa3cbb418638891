"""Which top-layer nodes carry which aspect, and reconstruction without the rest.

Two scores per top node:

* variance of its activation over a single-aspect probe batch;
* mean relative activity, the (absolute by default) difference of its
  activation between a mixed image and that image's single-aspect source.

Nodes scoring above a threshold are selected. Selected nodes can then be
"inactivated" by overwriting them with neutral values (their mean activation
over face-only inputs) before the down pass.

All scores use mean-field activations, so nothing here consumes randomness.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import hypergeom

from .dbn import down_pass, up_pass
from .data import DIGIT, FACE, MIXED
from .errors import AspectError, DomainError, EmptyInputError, PairingError, ShapeError
from .numerics import as_matrix, column_mean, column_variance

VARIANCE = "variance"
RELATIVE_ACTIVITY = "relative_activity"
RELATIVE_ACTIVITY_SIGNED = "relative_activity_signed"

DEFAULT_VARIANCE_THRESHOLD = 0.1
DEFAULT_RELATIVE_ACTIVITY_THRESHOLD = 0.7


@dataclass(frozen=True)
class NodeStatistics:
    values: np.ndarray  # one score per top node
    kind: str
    source_aspect: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        object.__setattr__(self, "values", v)
        if self.kind != RELATIVE_ACTIVITY_SIGNED and np.any(v < 0):
            raise DomainError(f"{self.kind} statistics must be non-negative")

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class RelevanceSelection:
    node_indices: tuple
    method: str
    threshold: float
    n_nodes: int
    source_aspect: str = ""

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.node_indices)))
        if idx and (idx[0] < 0 or idx[-1] >= self.n_nodes):
            raise DomainError(f"node indices out of range for {self.n_nodes} nodes")
        object.__setattr__(self, "node_indices", idx)

    def __len__(self):
        return len(self.node_indices)

    def __contains__(self, i):
        return i in self.node_indices

    def complement(self):
        chosen = set(self.node_indices)
        rest = [i for i in range(self.n_nodes) if i not in chosen]
        return RelevanceSelection(rest, f"not {self.method}", self.threshold, self.n_nodes, self.source_aspect)

    def mask(self):
        m = np.zeros(self.n_nodes, dtype=bool)
        m[list(self.node_indices)] = True
        return m


def _probe_activations(m, probe, want=None):
    aspect = probe.single_aspect() if len(probe) else None
    if want is not None and aspect != want:
        raise AspectError(f"probe must contain only {want} images, got {aspect}")
    return up_pass(m, probe.images), aspect


def variance_analysis(m, probe):
    """Population variance of each top node over a single-aspect probe."""
    if len(probe) < 2:
        raise EmptyInputError(f"variance needs a probe of at least two images, got {len(probe)}")
    top, aspect = _probe_activations(m, probe)
    return NodeStatistics(column_variance(top), VARIANCE, aspect)


def select_by_threshold(stats, threshold):
    """Nodes whose score is strictly above ``threshold``."""
    if not math.isfinite(threshold):
        raise DomainError(f"threshold must be finite, got {threshold}")
    idx = np.flatnonzero(stats.values > threshold)
    return RelevanceSelection(idx.tolist(), stats.kind, float(threshold), len(stats), stats.source_aspect)


def quantile_threshold(stats, fraction):
    """Threshold whose strict-greater selection is the top ``fraction`` of nodes (fewer on ties)."""
    if not 0 < fraction <= 1:
        raise DomainError(f"quantile fraction must lie in (0, 1], got {fraction}")
    ranked = np.sort(stats.values)[::-1]
    k = max(1, int(round(fraction * ranked.size)))
    if k >= ranked.size:
        return float(np.nextafter(ranked[-1], -np.inf))
    return float(ranked[k])


def select_by_quantile(stats, fraction):
    return select_by_threshold(stats, quantile_threshold(stats, fraction))


def relative_activity(m, mixed, single, signed=False):
    """|up_pass(mixed) - up_pass(single)| per top node (1 x n_top)."""
    a = as_matrix(mixed, "mixed image")
    b = as_matrix(single, "single image")
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = up_pass(m, a) - up_pass(m, b)
    return diff if signed else np.abs(diff)


def paired_singles(mixed_set, singles):
    """Rows of ``singles`` matching each mixed row, chosen by the singles' aspect."""
    if mixed_set.pair_index is None or np.any(mixed_set.aspect != MIXED):
        raise PairingError("relative activity needs a mixed set with pair_index")
    aspect = singles.single_aspect()
    col = {FACE: 0, DIGIT: 1}.get(aspect)
    if col is None:
        raise PairingError(f"singles must be faces or digits, got {aspect}")
    rows = mixed_set.pair_index[:, col]
    if rows.size and (rows.min() < 0 or rows.max() >= len(singles)):
        raise PairingError(f"pair index {int(rows.max())} out of range for {len(singles)} {aspect} images")
    return singles.images[rows], aspect


def mean_relative_activity(m, mixed_set, singles, signed=False):
    """Mean relative activity per node over all (mixed, paired single) pairs.

    The statistic's ``source_aspect`` is the aspect *not* in ``singles``:
    pairing with clean digits isolates the face content and vice versa.
    """
    if len(mixed_set) == 0:
        raise EmptyInputError("no mixed images")
    ref, aspect = paired_singles(mixed_set, singles)
    diff = up_pass(m, mixed_set.images) - up_pass(m, ref)
    if not signed:
        diff = np.abs(diff)
    kind = RELATIVE_ACTIVITY_SIGNED if signed else RELATIVE_ACTIVITY
    return NodeStatistics(column_mean(diff), kind, FACE if aspect == DIGIT else DIGIT)


def neutral_values(m, face_probe):
    """Mean top activation per node over face-only inputs."""
    if len(face_probe) == 0:
        raise EmptyInputError("neutral values need at least one face")
    top, _ = _probe_activations(m, face_probe, want=FACE)
    return column_mean(top).ravel()


def neutralize(top, sel, nv):
    """Copy of ``top`` with the selected columns overwritten by the neutral values."""
    top = as_matrix(top, "top activations")
    nv = np.asarray(nv, dtype=np.float64).ravel()
    if top.shape[1] != nv.size or sel.n_nodes != nv.size:
        raise ShapeError(f"top has {top.shape[1]} nodes, neutral values {nv.size}, selection {sel.n_nodes}")
    out = top.copy()
    idx = list(sel.node_indices)
    if idx:
        out[:, idx] = nv[idx]
    return out


def selective_reconstruct(m, v, sel, nv):
    return down_pass(m, neutralize(up_pass(m, v), sel, nv))


def jaccard(a, b):
    sa, sb = set(a.node_indices), set(b.node_indices)
    union = sa | sb
    return len(sa & sb) / len(union) if union else 1.0


def chance_jaccard(n, size_a, size_b):
    """Expected Jaccard index of two independent uniform random subsets of the given sizes."""
    if size_a == 0 and size_b == 0:
        return 1.0
    dist = hypergeom(n, size_a, size_b)
    lo, hi = max(0, size_a + size_b - n), min(size_a, size_b)
    k = np.arange(lo, hi + 1)
    return float(np.sum(dist.pmf(k) * k / (size_a + size_b - k)))


STATS_HEADER = ["node_index", "value", "selected", "method", "threshold"]


def write_statistics_csv(path, stats, sel):
    chosen = set(sel.node_indices)
    with open(path, "w", newline="", encoding="utf-8") as f:
        out = csv.writer(f, lineterminator="\n")
        out.writerow(STATS_HEADER)
        for i, v in enumerate(stats.values):
            out.writerow([i, repr(float(v)), int(i in chosen), sel.method, repr(sel.threshold)])


def read_statistics_csv(path, source_aspect=""):
    """Inverse of ``write_statistics_csv``: ``(NodeStatistics, RelevanceSelection)``."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise EmptyInputError(f"{path}: no rows")
    values = np.array([float(r["value"]) for r in rows])
    method = rows[0]["method"]
    threshold = float(rows[0]["threshold"])
    chosen = [int(r["node_index"]) for r in rows if r["selected"] == "1"]
    stats = NodeStatistics(values, method, source_aspect)
    return stats, RelevanceSelection(chosen, method, threshold, len(values), source_aspect)
