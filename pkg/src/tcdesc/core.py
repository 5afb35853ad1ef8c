"""Descriptor batches, pairwise distances and kNN selection.

Everything downstream (topology weights, the topology distance, the loss)
consumes the types defined here.  All functions are pure; arrays are never
mutated in place once a batch is constructed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import KNotLessThanD, KTooLarge, ZeroRow

UNIT_NORM_TOL = 1e-6


def normalize_batch(raw):
    """Scale every row of ``raw`` to unit Euclidean norm.

    Raises :class:`ZeroRow` for rows whose norm is below 1e-12.
    """
    raw = np.asarray(raw, dtype=np.float64)
    norms = np.linalg.norm(raw, axis=1)
    bad = np.nonzero(norms < 1e-12)[0]
    if bad.size:
        raise ZeroRow(int(bad[0]))
    return raw / norms[:, None]


@dataclass(frozen=True)
class DescriptorBatch:
    """Two aligned sets of n unit-norm d-dimensional descriptors.

    Row i of ``a_set`` and row i of ``p_set`` are the matching pair.
    """

    a_set: np.ndarray
    p_set: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a_set, dtype=np.float64)
        p = np.asarray(self.p_set, dtype=np.float64)
        if a.ndim != 2 or a.shape != p.shape:
            raise ValueError("a_set and p_set must be 2-d arrays of equal shape")
        n, d = a.shape
        if n < 2 or d < 2:
            raise ValueError(f"need n >= 2 and d >= 2, got n={n}, d={d}")
        for name, x in (("a_set", a), ("p_set", p)):
            norms = np.linalg.norm(x, axis=1)
            if np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOL:
                raise ValueError(f"{name} rows are not unit-norm")
        object.__setattr__(self, "a_set", a)
        object.__setattr__(self, "p_set", p)

    @property
    def n(self):
        return self.a_set.shape[0]

    @property
    def d(self):
        return self.a_set.shape[1]

    @classmethod
    def from_raw(cls, raw_a, raw_p):
        """Normalize two raw matrices and wrap them in a batch."""
        return cls(normalize_batch(raw_a), normalize_batch(raw_p))


@dataclass(frozen=True)
class NeighborSet:
    """The k nearest same-set neighbors of one descriptor.

    ``neighbor_matrix`` is d x k with column j equal to the descriptor at
    ``neighbor_indices[j]``; indices are ordered by ascending distance,
    ties broken by smaller index.
    """

    center_index: int
    neighbor_indices: np.ndarray
    neighbor_matrix: np.ndarray = field(repr=False)

    @property
    def k(self):
        return len(self.neighbor_indices)


def pairwise_distances(x):
    """n x n matrix of Euclidean distances within one unit-norm set.

    Uses d(i, j) = sqrt(max(0, 2 - 2 <x_i, x_j>)), exact for unit rows;
    the diagonal is forced to exactly zero.
    """
    x = np.asarray(x, dtype=np.float64)
    gram = x @ x.T
    sq = np.maximum(2.0 - 2.0 * gram, 0.0)
    dist = np.sqrt(sq)
    np.fill_diagonal(dist, 0.0)
    return dist


def _check_k(k, n, d):
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n - 1:
        raise KTooLarge(f"k={k} exceeds n-1={n - 1}")
    if k >= d:
        raise KNotLessThanD(f"k={k} must be < d={d}")


def knn_indices(x, k):
    """(n, k) index matrix of the k nearest neighbors of every row, plus the
    per-row gap between the k-th and (k+1)-th neighbor distance.

    Self is excluded; ties are resolved toward the smaller index (stable
    sort on the distance row).
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    _check_k(k, n, d)
    dist = pairwise_distances(x)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    idx = order[:, :k]
    sorted_dist = np.take_along_axis(dist, order, axis=1)
    if k < n - 1:
        gaps = sorted_dist[:, k] - sorted_dist[:, k - 1]
    else:
        gaps = np.full(n, np.inf)
    return idx, gaps


def knn(x, i, k):
    """NeighborSet of the k nearest neighbors of row ``i`` within ``x``."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    _check_k(k, n, d)
    row = np.sqrt(np.maximum(2.0 - 2.0 * (x @ x[i]), 0.0))
    row[i] = np.inf
    idx = np.argsort(row, kind="stable")[:k]
    return NeighborSet(center_index=i, neighbor_indices=idx,
                       neighbor_matrix=x[idx].T.copy())


# ---------------------------------------------------------------------------
# Descriptor file format: magic "TCD1", little-endian u32 n, u32 d, then
# n*d float32 row-major values for the A block followed by the P block.

_MAGIC = b"TCD1"


def save_descriptors(path, batch):
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", batch.n, batch.d))
        fh.write(batch.a_set.astype("<f4").tobytes())
        fh.write(batch.p_set.astype("<f4").tobytes())


def load_descriptors(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        n, d = struct.unpack("<II", fh.read(8))
        count = n * d
        a = np.frombuffer(fh.read(4 * count), dtype="<f4", count=count)
        p = np.frombuffer(fh.read(4 * count), dtype="<f4", count=count)
    a = a.astype(np.float64).reshape(n, d)
    p = p.astype(np.float64).reshape(n, d)
    # float32 round-trip perturbs norms slightly; re-normalize on load
    return DescriptorBatch.from_raw(a, p)
