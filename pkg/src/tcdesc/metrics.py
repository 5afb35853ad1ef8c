"""Evaluation metrics: FPR95, mutual-NN matching score, and
neighborhood-consistency diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import EmptyClass


@dataclass(frozen=True)
class VerificationSample:
    distance: float
    label: bool                 # True for a match


@dataclass(frozen=True)
class MetricReport:
    fpr95: float
    matching_score: float
    mean_m_over_k: float
    mean_topology_distance: float


def fpr95_from_distances(match_dists, non_match_dists):
    """False positive rate at the threshold admitting 95% recall.

    The threshold is the ceil(0.95 * #matches)-th smallest match
    distance; non-matches at exactly the threshold count as false
    positives.
    """
    match_dists = np.sort(np.asarray(match_dists, dtype=np.float64))
    non_match_dists = np.asarray(non_match_dists, dtype=np.float64)
    if match_dists.size == 0 or non_match_dists.size == 0:
        raise EmptyClass("need at least one match and one non-match")
    need = math.ceil(0.95 * match_dists.size)
    tau = match_dists[need - 1]
    return float(np.mean(non_match_dists <= tau))


def fpr95(samples):
    """FPR95 over a list of VerificationSample."""
    dists = np.array([s.distance for s in samples])
    labels = np.array([bool(s.label) for s in samples])
    return fpr95_from_distances(dists[labels], dists[~labels])


def matching_score(desc_a, desc_b, ground_truth, budget):
    """Correct mutual-NN matches divided by the keypoint budget.

    ``ground_truth[i]`` is the index in desc_b that truly corresponds to
    row i of desc_a.  The score is capped at 1.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    desc_a = np.asarray(desc_a, dtype=np.float64)
    desc_b = np.asarray(desc_b, dtype=np.float64)
    gt = np.asarray(ground_truth)
    cross = cdist(desc_a, desc_b)
    nn_ab = np.argmin(cross, axis=1)
    nn_ba = np.argmin(cross, axis=0)
    mutual = nn_ba[nn_ab] == np.arange(len(desc_a))
    correct = int(np.sum(mutual & (nn_ab == gt)))
    return min(correct / budget, 1.0)


def neighborhood_report(batch, k, ridge_eps=None):
    """(mean m/k, mean topology distance) with linear-combination weights."""
    from . import weights as tw
    from .topology import topology_forward

    if ridge_eps is None:
        ridge_eps = tw.DEFAULT_RIDGE_EPS
    topo = topology_forward(batch.a_set, batch.p_set, k,
                            kind=tw.LINEAR_COMBINATION, ridge_eps=ridge_eps)
    return float(topo.m.mean() / k), float(topo.d_t.mean())


def evaluate_batch(batch, k):
    """MetricReport for one descriptor batch.

    Matches are the aligned pairs, non-matches all cross pairs; the
    matching score uses mutual-NN matching against the identity pairing
    with a budget of n.
    """
    cross = cdist(batch.a_set, batch.p_set)
    match = np.diag(cross).copy()
    non_match = cross[~np.eye(batch.n, dtype=bool)]
    mean_m_over_k, mean_dt = neighborhood_report(batch, k)
    return MetricReport(
        fpr95=fpr95_from_distances(match, non_match),
        matching_score=matching_score(batch.a_set, batch.p_set,
                                      np.arange(batch.n), batch.n),
        mean_m_over_k=mean_m_over_k,
        mean_topology_distance=mean_dt,
    )
