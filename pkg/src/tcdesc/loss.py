"""Triplet loss with fused topology + Euclidean positive distance.

The positive distance of pair i is a per-pair convex combination
lambda_i * d_T + (1 - lambda_i) * d_E, where lambda_i defaults to the
adaptive rule min((m_i / k)^gamma, 0.5) driven by the neighbor-set
overlap m_i.  Negatives are mined as the hardest in-batch non-match over
both cross directions; the negative distance stays purely Euclidean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist

from . import weights as tw
from .core import _check_k
from .topology import TopologyCache, topology_forward

DEFAULT_MARGIN = 1.0


@dataclass(frozen=True)
class LossConfig:
    margin: float = DEFAULT_MARGIN
    k: int = 16
    gamma: float = 1.0
    weight_kind: str = tw.LINEAR_COMBINATION
    fixed_lambda: float | None = None   # None selects the adaptive rule
    ridge_eps: float = tw.DEFAULT_RIDGE_EPS
    heat_t: float = 1.0
    lambda_batch_mean: bool = False     # average adaptive lambda over the batch

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.fixed_lambda is not None and not 0.0 <= self.fixed_lambda <= 1.0:
            raise ValueError(f"fixed lambda must be in [0, 1], got {self.fixed_lambda}")
        if self.weight_kind not in tw.WEIGHT_KINDS:
            raise ValueError(f"unknown weight kind {self.weight_kind!r}")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class PairDiagnostics:
    i: int
    d_e: float
    d_t: float
    lam: float
    m: int
    neg_index: int
    neg_distance: float
    hinge_active: bool


@dataclass(frozen=True)
class LossReport:
    loss: float
    per_pair: list[PairDiagnostics]


@dataclass
class LossCache:
    """Forward-pass state handed to the gradient module."""

    cfg: LossConfig
    a_set: np.ndarray
    p_set: np.ndarray
    topo: TopologyCache
    d_e: np.ndarray
    lam: np.ndarray
    neg_index: np.ndarray
    neg_distance: np.ndarray
    neg_from_a: np.ndarray      # True where min was ||a_i - p_j||
    hinge: np.ndarray
    active: np.ndarray


def matching_count(nb_a, nb_p):
    """Number of indices common to both neighbor sets."""
    return int(np.intersect1d(nb_a.neighbor_indices,
                              nb_p.neighbor_indices).size)


def adaptive_lambda(m, k, gamma):
    """min((m/k)^gamma, 0.5)."""
    if not 0 <= m <= k:
        raise ValueError(f"need 0 <= m <= k, got m={m}, k={k}")
    return float(min((m / k) ** gamma, 0.5))


def fused_positive_distance(d_t, d_e, lam):
    """lam * d_T + (1 - lam) * d_E."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    return lam * d_t + (1.0 - lam) * d_e


def _negative_mining(a_set, p_set):
    """Hardest in-batch negative per pair, over both cross directions."""
    ap = cdist(a_set, p_set)            # ap[i, j] = ||a_i - p_j||
    cand = np.minimum(ap, ap.T)         # ap.T[i, j] = ||p_i - a_j||
    np.fill_diagonal(cand, np.inf)
    neg_index = np.argmin(cand, axis=1)         # first minimum: smaller j wins
    neg_distance = cand[np.arange(len(cand)), neg_index]
    neg_from_a = ap[np.arange(len(ap)), neg_index] <= ap.T[np.arange(len(ap)), neg_index]
    return neg_index, neg_distance, neg_from_a


def hardest_negative(batch, i):
    """(index, distance) of the closest non-match to pair i."""
    neg_index, neg_distance, _ = _negative_mining(batch.a_set, batch.p_set)
    return int(neg_index[i]), float(neg_distance[i])


def loss_forward(a_set, p_set, cfg):
    """Evaluate the loss on raw arrays; returns (LossReport, LossCache)."""
    a_set = np.asarray(a_set, dtype=np.float64)
    p_set = np.asarray(p_set, dtype=np.float64)
    n, d = a_set.shape
    _check_k(cfg.k, n, d)

    topo = topology_forward(a_set, p_set, cfg.k, kind=cfg.weight_kind,
                            t=cfg.heat_t, ridge_eps=cfg.ridge_eps)
    d_e = np.linalg.norm(a_set - p_set, axis=1)

    if cfg.fixed_lambda is not None:
        lam = np.full(n, float(cfg.fixed_lambda))
    else:
        lam = np.minimum((topo.m / cfg.k) ** cfg.gamma, 0.5)
        if cfg.lambda_batch_mean:
            lam = np.full(n, lam.mean())

    neg_index, neg_distance, neg_from_a = _negative_mining(a_set, p_set)
    d_plus = lam * topo.d_t + (1.0 - lam) * d_e
    hinge = cfg.margin + d_plus - neg_distance
    active = hinge > 0.0
    loss = float(np.maximum(hinge, 0.0).mean())

    per_pair = [
        PairDiagnostics(i=i, d_e=float(d_e[i]), d_t=float(topo.d_t[i]),
                        lam=float(lam[i]), m=int(topo.m[i]),
                        neg_index=int(neg_index[i]),
                        neg_distance=float(neg_distance[i]),
                        hinge_active=bool(active[i]))
        for i in range(n)
    ]
    report = LossReport(loss=loss, per_pair=per_pair)
    cache = LossCache(cfg=cfg, a_set=a_set, p_set=p_set, topo=topo,
                      d_e=d_e, lam=lam, neg_index=neg_index,
                      neg_distance=neg_distance, neg_from_a=neg_from_a,
                      hinge=hinge, active=active)
    return report, cache


def tcdesc_loss(batch, cfg):
    """Full loss on a DescriptorBatch; see loss_forward for the math."""
    report, _ = loss_forward(batch.a_set, batch.p_set, cfg)
    return report
