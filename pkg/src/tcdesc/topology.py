"""Global topology vectors and the per-pair topology distance.

A topology vector scatters one descriptor's k local weights into a sparse
length-n vector indexed by batch position; the topology distance of a
matching pair is the l1 distance of the two vectors divided by k,
computed over the union of their supports.  ``batch_topology_distance``
runs the whole pipeline (kNN -> weights -> mapping -> distance) for every
pair in a batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import weights as tw
from .core import knn_indices
from .errors import IndexOutOfBatch, LengthMismatch, SingularGram


@dataclass(frozen=True)
class TopologyVector:
    """Sparse length-n vector with exactly k stored entries.

    ``indices`` are strictly increasing batch positions; entries may hold
    a numerically zero value, sparsity refers to the stored support.
    """

    length: int
    indices: np.ndarray
    values: np.ndarray

    def dense(self):
        out = np.zeros(self.length)
        out[self.indices] = self.values
        return out


@dataclass(frozen=True)
class TopologyDistanceReport:
    per_pair: np.ndarray
    mean: float


def global_mapping(weights, nb, n):
    """Scatter local weights to a sparse length-n topology vector."""
    idx = np.asarray(nb.neighbor_indices)
    if nb.center_index >= n or (idx >= n).any() or (idx < 0).any():
        raise IndexOutOfBatch(
            f"neighbor indices of center {nb.center_index} exceed batch size {n}")
    order = np.argsort(idx)
    return TopologyVector(length=n, indices=idx[order],
                          values=np.asarray(weights.weights)[order])


def topology_distance(ta, tp, k):
    """(1/k) * l1 distance over the union of the two supports."""
    if ta.length != tp.length:
        raise LengthMismatch(f"lengths differ: {ta.length} vs {tp.length}")
    union = np.union1d(ta.indices, tp.indices)
    va = np.zeros(union.size)
    vp = np.zeros(union.size)
    va[np.searchsorted(union, ta.indices)] = ta.values
    vp[np.searchsorted(union, tp.indices)] = tp.values
    return float(np.abs(va - vp).sum() / k)


# ---------------------------------------------------------------------------
# Batched forward pass shared by the loss and gradient modules.


@dataclass
class TopologyCache:
    """Intermediate quantities of one batched topology-distance pass.

    Kept around so the gradient module can backpropagate without
    recomputing kNN sets, weights or Gram matrices.
    """

    k: int
    kind: str
    t: float
    ridge_eps: float
    idx_a: np.ndarray          # (n, k) neighbor indices in A
    idx_p: np.ndarray          # (n, k) neighbor indices in P
    wa: np.ndarray             # (n, k) weights, A side
    wp: np.ndarray             # (n, k) weights, P side
    d_t: np.ndarray            # (n,) per-pair topology distance
    sign_a: np.ndarray         # (n, k) d(d_T)/d(wa) * k
    sign_p: np.ndarray         # (n, k) -d(d_T)/d(wp) * k
    m: np.ndarray              # (n,) neighbor-set intersection counts
    min_gap: float             # smallest kNN distance gap over both sets
    nb_a: np.ndarray = field(default=None, repr=False)   # (n, k, d)
    nb_p: np.ndarray = field(default=None, repr=False)
    gram_a: np.ndarray = field(default=None, repr=False)  # (n, k, k)
    gram_p: np.ndarray = field(default=None, repr=False)
    dist_a: np.ndarray = field(default=None, repr=False)  # (n, k) kernel dists
    dist_p: np.ndarray = field(default=None, repr=False)


def _side_weights(x, idx, kind, t, ridge_eps):
    """Weights for every center of one set, plus gradient-relevant caches."""
    n, d = x.shape
    k = idx.shape[1]
    nb = x[idx]                                  # (n, k, d)
    if kind == tw.HARD:
        return np.ones((n, k)), nb, None, None
    if kind in (tw.HARD_PROXY, tw.HEAT_KERNEL):
        divisor = tw.HARD_PROXY_DIVISOR if kind == tw.HARD_PROXY else t
        dists = np.linalg.norm(x[:, None, :] - nb, axis=2)
        return np.exp(-dists / divisor), nb, None, dists
    if kind == tw.LINEAR_COMBINATION:
        gram = nb @ nb.transpose(0, 2, 1)
        if ridge_eps == 0.0:
            conds = np.linalg.cond(gram)
            if np.any(conds > tw.GRAM_COND_LIMIT):
                raise SingularGram(
                    f"singular Gram matrix at center {int(np.argmax(conds))}")
        else:
            gram = gram + ridge_eps * np.eye(k)
        rhs = np.einsum("nkd,nd->nk", nb, x)
        w = np.linalg.solve(gram, rhs[..., None])[..., 0]
        return w, nb, gram, None
    raise ValueError(f"unknown weight kind {kind!r}")


def _union_l1(idx_a_row, wa_row, idx_p_row, wp_row):
    """l1 over the union of supports plus per-slot signs for backprop."""
    common, ia, ip = np.intersect1d(idx_a_row, idx_p_row,
                                    return_indices=True)
    tp_at_a = np.zeros_like(wa_row)
    tp_at_a[ia] = wp_row[ip]
    ta_at_p = np.zeros_like(wp_row)
    ta_at_p[ip] = wa_row[ia]
    diff_a = wa_row - tp_at_a
    p_only = np.ones(len(wp_row), dtype=bool)
    p_only[ip] = False
    total = np.abs(diff_a).sum() + np.abs(wp_row[p_only]).sum()
    return total, np.sign(diff_a), np.sign(ta_at_p - wp_row), len(common)


def topology_forward(a_set, p_set, k, kind=tw.LINEAR_COMBINATION,
                     t=1.0, ridge_eps=tw.DEFAULT_RIDGE_EPS):
    """Run kNN, weights, mapping and l1 merge for every matching pair."""
    n = a_set.shape[0]
    idx_a, gaps_a = knn_indices(a_set, k)
    idx_p, gaps_p = knn_indices(p_set, k)
    wa, nb_a, gram_a, dist_a = _side_weights(a_set, idx_a, kind, t, ridge_eps)
    wp, nb_p, gram_p, dist_p = _side_weights(p_set, idx_p, kind, t, ridge_eps)

    d_t = np.empty(n)
    sign_a = np.empty((n, k))
    sign_p = np.empty((n, k))
    m = np.empty(n, dtype=np.int64)
    for i in range(n):
        total, sa, sp, mi = _union_l1(idx_a[i], wa[i], idx_p[i], wp[i])
        d_t[i] = total / k
        sign_a[i] = sa
        sign_p[i] = sp
        m[i] = mi

    return TopologyCache(
        k=k, kind=kind, t=t, ridge_eps=ridge_eps,
        idx_a=idx_a, idx_p=idx_p, wa=wa, wp=wp, d_t=d_t,
        sign_a=sign_a, sign_p=sign_p, m=m,
        min_gap=float(min(gaps_a.min(), gaps_p.min())),
        nb_a=nb_a, nb_p=nb_p, gram_a=gram_a, gram_p=gram_p,
        dist_a=dist_a, dist_p=dist_p)


def batch_topology_distance(batch, k, kind=tw.LINEAR_COMBINATION,
                            t=1.0, ridge_eps=tw.DEFAULT_RIDGE_EPS):
    """Per-pair topology distances for a whole batch, computed with the
    vectorized forward pass."""
    cache = topology_forward(batch.a_set, batch.p_set, k, kind=kind,
                             t=t, ridge_eps=ridge_eps)
    return TopologyDistanceReport(per_pair=cache.d_t,
                                  mean=float(cache.d_t.mean()))
