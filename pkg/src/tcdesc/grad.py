"""Analytic gradients of the loss and a finite-difference verifier.

Discrete quantities (kNN membership, the overlap counts m_i, the per-pair
lambda_i and the mined negative index) are held constant; the
least-squares weights are differentiated through their closed form with
respect to both the center and the neighbor columns.  The l1 subgradient
at an exact zero is taken as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import weights as tw
from .errors import HingeBoundary, TieDetected, ToleranceExceeded
from .loss import loss_forward

TIE_TOL = 1e-9
BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class GradientBatch:
    d_a: np.ndarray
    d_p: np.ndarray


@dataclass(frozen=True)
class GradCheckReport:
    max_abs: float
    max_rel: float
    worst_coord: tuple
    passed: bool


def _lc_backward(x, idx, nb, gram, w, g_w):
    """Backprop g_w through W = (N^T N + eps I)^{-1} N^T x per center.

    With u = G^{-1} g_w and residual r = x - N W:
      d(center)      = N u
      d(column l)    = u_l * r - W_l * (N u)
    Returns the (n, d) gradient accumulated over centers and neighbors.
    """
    u = np.linalg.solve(gram, g_w[..., None])[..., 0]        # (n, k)
    nu = np.einsum("nkd,nk->nd", nb, u)                      # N u per center
    resid = x - np.einsum("nkd,nk->nd", nb, w)
    contrib = u[:, :, None] * resid[:, None, :] - w[:, :, None] * nu[:, None, :]
    grad = nu.copy()                                         # center term
    np.add.at(grad, idx, contrib)
    return grad


def _kernel_backward(x, idx, nb, dists, weights_, divisor, g_w):
    """Backprop through w_l = exp(-||center - nb_l|| / divisor)."""
    safe = np.where(dists > 0.0, dists, 1.0)
    scale = np.where(dists > 0.0, -weights_ / (divisor * safe), 0.0) * g_w
    diffs = x[:, None, :] - nb                               # (n, k, d)
    grad = np.einsum("nk,nkd->nd", scale, diffs)             # center term
    np.add.at(grad, idx, -scale[:, :, None] * diffs)
    return grad


def _topology_grad_side(x, idx, nb, gram, dists, w, kind, t, g_w):
    if kind == tw.HARD:
        return np.zeros_like(x)
    if kind == tw.LINEAR_COMBINATION:
        return _lc_backward(x, idx, nb, gram, w, g_w)
    divisor = tw.HARD_PROXY_DIVISOR if kind == tw.HARD_PROXY else t
    return _kernel_backward(x, idx, nb, dists, w, divisor, g_w)


def gradient_from_cache(cache, strict=True):
    """GradientBatch for a completed forward pass.

    With ``strict`` the measure-zero points where finite differences can
    disagree (kNN ties, hinge boundaries) raise; the trainer disables
    this since the subgradient is still usable there.
    """
    cfg = cache.cfg
    a, p = cache.a_set, cache.p_set
    n, d = a.shape
    topo = cache.topo

    if strict:
        if topo.min_gap < TIE_TOL:
            raise TieDetected(
                f"kNN distance gap {topo.min_gap:.3e} below {TIE_TOL}")
        if np.any(np.abs(cache.hinge) < BOUNDARY_TOL):
            raise HingeBoundary("a pair sits on the hinge boundary")

    coef = 1.0 / n
    act = cache.active
    d_a = np.zeros_like(a)
    d_p = np.zeros_like(p)

    # Euclidean positive term: coef * (1 - lam_i) * d||a_i - p_i||
    diff = a - p
    safe_de = np.where(cache.d_e > 0.0, cache.d_e, 1.0)
    w_e = np.where(act & (cache.d_e > 0.0), coef * (1.0 - cache.lam) / safe_de, 0.0)
    d_a += w_e[:, None] * diff
    d_p -= w_e[:, None] * diff

    # mined negative term: -coef * d(min cross distance)
    rows = np.arange(n)
    j = cache.neg_index
    safe_dn = np.where(cache.neg_distance > 0.0, cache.neg_distance, 1.0)
    w_n = np.where(act & (cache.neg_distance > 0.0), coef / safe_dn, 0.0)
    from_a = cache.neg_from_a
    diff_n = np.where(from_a[:, None], a[rows] - p[j], p[rows] - a[j])
    step = w_n[:, None] * diff_n
    fa = from_a
    np.add.at(d_a, rows[fa], -step[fa])
    np.add.at(d_p, j[fa], step[fa])
    np.add.at(d_p, rows[~fa], -step[~fa])
    np.add.at(d_a, j[~fa], step[~fa])

    # topology term, skipped wherever its coefficient is zero
    topo_w = np.where(act, coef * cache.lam, 0.0)
    if cfg.weight_kind != tw.HARD and np.any(topo_w > 0.0):
        g_wa = topo_w[:, None] * topo.sign_a / cfg.k
        g_wp = -topo_w[:, None] * topo.sign_p / cfg.k
        d_a += _topology_grad_side(a, topo.idx_a, topo.nb_a, topo.gram_a,
                                   topo.dist_a, topo.wa, cfg.weight_kind,
                                   cfg.heat_t, g_wa)
        d_p += _topology_grad_side(p, topo.idx_p, topo.nb_p, topo.gram_p,
                                   topo.dist_p, topo.wp, cfg.weight_kind,
                                   cfg.heat_t, g_wp)

    return GradientBatch(d_a=d_a, d_p=d_p)


def loss_gradient_arrays(a_set, p_set, cfg, strict=True):
    report, cache = loss_forward(a_set, p_set, cfg)
    return report, gradient_from_cache(cache, strict=strict)


def loss_gradient(batch, cfg):
    """(LossReport, GradientBatch) for the full loss on a batch."""
    return loss_gradient_arrays(batch.a_set, batch.p_set, cfg)


def finite_difference_check(batch, cfg, h=1e-5, tol=1e-4):
    """Compare the analytic gradient with central finite differences.

    The relative deviation at a coordinate is |analytic - fd| divided by
    max(1, |analytic|, |fd|).  Raises :class:`ToleranceExceeded` naming
    the worst coordinate when the tolerance is exceeded.
    """
    a0 = np.array(batch.a_set, dtype=np.float64)
    p0 = np.array(batch.p_set, dtype=np.float64)
    _, grad = loss_gradient_arrays(a0, p0, cfg)

    def value(a, p):
        report, _ = loss_forward(a, p, cfg)
        return report.loss

    max_abs = 0.0
    max_rel = 0.0
    worst = None
    for side, x0, g in (("a", a0, grad.d_a), ("p", p0, grad.d_p)):
        for i in range(x0.shape[0]):
            for j in range(x0.shape[1]):
                x = x0.copy()
                x[i, j] = x0[i, j] + h
                f_plus = value(x, p0) if side == "a" else value(a0, x)
                x[i, j] = x0[i, j] - h
                f_minus = value(x, p0) if side == "a" else value(a0, x)
                fd = (f_plus - f_minus) / (2.0 * h)
                abs_dev = abs(g[i, j] - fd)
                rel_dev = abs_dev / max(1.0, abs(g[i, j]), abs(fd))
                if rel_dev > max_rel:
                    max_rel = rel_dev
                    worst = (side, i, j)
                max_abs = max(max_abs, abs_dev)

    if max_rel > tol:
        raise ToleranceExceeded(
            f"gradient check failed at {worst}: rel deviation {max_rel:.3e} "
            f"> {tol}", worst_coord=worst)
    return GradCheckReport(max_abs=max_abs, max_rel=max_rel,
                           worst_coord=worst, passed=True)
