"""Local topology weightings between a descriptor and its kNN set.

Three kinds are provided: the hard (binary) weight, the heat-kernel
similarity, and the linear-combination weights obtained as the
least-squares coefficients fitting the center from its neighbors, solved
in closed form through the ridge-stabilized normal equations.  A smooth
proxy for the hard weight (divisor 1e3) is included for training use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NonPositiveT, SingularGram

HARD = "hard"
HARD_PROXY = "proxy"
HEAT_KERNEL = "heat"
LINEAR_COMBINATION = "lc"

WEIGHT_KINDS = (HARD, HARD_PROXY, HEAT_KERNEL, LINEAR_COMBINATION)

HARD_PROXY_DIVISOR = 1e3
DEFAULT_RIDGE_EPS = 1e-6

# condition-number ceiling above which an unregularized Gram matrix is
# treated as singular
GRAM_COND_LIMIT = 1e12


@dataclass(frozen=True)
class TopologyWeights:
    """k-vector of local weights aligned with a NeighborSet.

    ``param`` carries the kernel width t (heat kernel) or the ridge
    epsilon (linear combination); None for the other kinds.
    """

    kind: str
    center_index: int
    weights: np.ndarray
    param: float | None = None


def hard_weights(nb):
    """Binary weight: 1 on every neighbor, implicit 0 elsewhere."""
    return TopologyWeights(kind=HARD, center_index=nb.center_index,
                           weights=np.ones(nb.k))


def _kernel_weights(center, nb, divisor):
    diffs = center[:, None] - nb.neighbor_matrix
    dists = np.linalg.norm(diffs, axis=0)
    return np.exp(-dists / divisor)


def hard_proxy_weights(center, nb):
    """Smooth stand-in for hard_weights: exp(-||center - neighbor|| / 1e3).

    On the unit sphere distances are at most 2, so every proxy weight
    lies in [exp(-2e-3), 1].
    """
    w = _kernel_weights(np.asarray(center, dtype=np.float64), nb,
                        HARD_PROXY_DIVISOR)
    return TopologyWeights(kind=HARD_PROXY, center_index=nb.center_index,
                           weights=w)


def heat_kernel_weights(center, nb, t):
    """Heat-kernel similarity exp(-||center - neighbor|| / t), t > 0."""
    if t <= 0:
        raise NonPositiveT(f"heat kernel width must be positive, got {t}")
    w = _kernel_weights(np.asarray(center, dtype=np.float64), nb, t)
    return TopologyWeights(kind=HEAT_KERNEL, center_index=nb.center_index,
                           weights=w, param=float(t))


def linear_combination_weights(center, nb, ridge_eps=DEFAULT_RIDGE_EPS):
    """Least-squares coefficients expressing the center from its neighbors.

    Solves W = (N^T N + ridge_eps I)^{-1} N^T center via a Cholesky
    factorization of the (regularized) Gram matrix.  With ridge_eps = 0
    and full-column-rank N this is the exact least-squares minimizer of
    ||center - N W||^2; a numerically singular Gram matrix then raises
    :class:`SingularGram`.
    """
    if ridge_eps < 0:
        raise ValueError(f"ridge_eps must be >= 0, got {ridge_eps}")
    center = np.asarray(center, dtype=np.float64)
    nmat = nb.neighbor_matrix
    gram = nmat.T @ nmat
    if ridge_eps == 0.0:
        if np.linalg.cond(gram) > GRAM_COND_LIMIT:
            raise SingularGram(
                f"Gram matrix for center {nb.center_index} is numerically "
                f"singular; pass ridge_eps > 0")
    else:
        gram = gram + ridge_eps * np.eye(nb.k)
    w = cho_solve(cho_factor(gram), nmat.T @ center)
    return TopologyWeights(kind=LINEAR_COMBINATION,
                           center_index=nb.center_index,
                           weights=w, param=float(ridge_eps))
