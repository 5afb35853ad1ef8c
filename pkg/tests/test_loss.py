import numpy as np
import pytest

from tcdesc.core import DescriptorBatch, knn, normalize_batch
from tcdesc.loss import (LossConfig, adaptive_lambda, fused_positive_distance,
                         hardest_negative, loss_forward, matching_count,
                         tcdesc_loss)
from tcdesc.topology import batch_topology_distance


def random_batch(seed, n=12, d=8):
    rng = np.random.default_rng(seed)
    return DescriptorBatch.from_raw(rng.normal(size=(n, d)),
                                    rng.normal(size=(n, d)))


def naive_loss(batch, cfg):
    """Composed from the already-tested pieces, one pair at a time."""
    a, p = batch.a_set, batch.p_set
    n = batch.n
    d_t = batch_topology_distance(batch, cfg.k, kind=cfg.weight_kind,
                                  t=cfg.heat_t,
                                  ridge_eps=cfg.ridge_eps).per_pair
    total = 0.0
    for i in range(n):
        if cfg.fixed_lambda is not None:
            lam = cfg.fixed_lambda
        else:
            m = matching_count(knn(a, i, cfg.k), knn(p, i, cfg.k))
            lam = adaptive_lambda(m, cfg.k, cfg.gamma)
        d_plus = fused_positive_distance(d_t[i], float(np.linalg.norm(a[i] - p[i])), lam)
        d_minus = np.inf
        for j in range(n):
            if j == i:
                continue
            d_minus = min(d_minus, np.linalg.norm(a[i] - p[j]),
                          np.linalg.norm(p[i] - a[j]))
        total += max(0.0, cfg.margin + d_plus - d_minus)
    return total / n


class TestPieces:
    def test_matching_count(self):
        x = normalize_batch(np.random.default_rng(0).normal(size=(10, 6)))
        y = x.copy()
        assert matching_count(knn(x, 0, 4), knn(y, 0, 4)) == 4

    def test_matching_count_disjoint(self):
        rng = np.random.default_rng(1)
        x = normalize_batch(rng.normal(size=(10, 6)))
        nb_a = knn(x, 0, 3)
        forbidden = set(nb_a.neighbor_indices) | {0}
        allowed = [j for j in range(10) if j not in forbidden][:3]
        # fabricate a neighbor set on the other side with disjoint indices
        nb_p = type(nb_a)(center_index=0,
                          neighbor_indices=np.array(allowed),
                          neighbor_matrix=x[allowed].T)
        assert matching_count(nb_a, nb_p) == 0

    def test_adaptive_lambda_values(self):
        assert adaptive_lambda(0, 16, 1.0) == 0.0
        assert adaptive_lambda(4, 16, 1.0) == 0.25
        assert adaptive_lambda(8, 16, 1.0) == 0.5
        assert adaptive_lambda(16, 16, 1.0) == 0.5   # capped
        assert adaptive_lambda(4, 16, 2.0) == pytest.approx(0.0625)
        assert adaptive_lambda(4, 16, 0.5) == 0.5

    def test_adaptive_lambda_bounds(self):
        with pytest.raises(ValueError):
            adaptive_lambda(-1, 16, 1.0)
        with pytest.raises(ValueError):
            adaptive_lambda(17, 16, 1.0)

    def test_fused(self):
        assert fused_positive_distance(0.4, 1.2, 0.25) == pytest.approx(
            0.25 * 0.4 + 0.75 * 1.2)
        assert fused_positive_distance(0.4, 1.2, 0.0) == 1.2
        with pytest.raises(ValueError):
            fused_positive_distance(0.4, 1.2, 1.5)


class TestHardestNegative:
    def test_two_pairs(self):
        a = normalize_batch(np.array([[1.0, 0.0], [0.0, 1.0]]))
        p = normalize_batch(np.array([[0.9, 0.1], [0.1, 0.9]]))
        batch = DescriptorBatch(normalize_batch(a), normalize_batch(p))
        j, dist = hardest_negative(batch, 0)
        assert j == 1
        expect = min(np.linalg.norm(batch.a_set[0] - batch.p_set[1]),
                     np.linalg.norm(batch.p_set[0] - batch.a_set[1]))
        assert dist == pytest.approx(expect)

    def test_planted(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(8, 6))
        p = rng.normal(size=(8, 6))
        p[5] = a[0] + 1e-3 * rng.normal(size=6)   # plant a near-duplicate
        batch = DescriptorBatch.from_raw(a, p)
        j, dist = hardest_negative(batch, 0)
        assert j == 5
        assert dist < 0.1

    def test_exhaustive_oracle(self):
        for seed in range(5):
            batch = random_batch(seed, n=10, d=7)
            for i in range(batch.n):
                j, dist = hardest_negative(batch, i)
                best = np.inf
                best_j = None
                for cand in range(batch.n):
                    if cand == i:
                        continue
                    d = min(np.linalg.norm(batch.a_set[i] - batch.p_set[cand]),
                            np.linalg.norm(batch.p_set[i] - batch.a_set[cand]))
                    if d < best - 1e-15:
                        best, best_j = d, cand
                assert j == best_j
                assert dist == pytest.approx(best, abs=1e-14)


class TestLoss:
    def test_lambda_zero_equals_plain_triplet(self):
        batch = random_batch(3, n=10, d=8)
        cfg = LossConfig(k=3, fixed_lambda=0.0)
        report = tcdesc_loss(batch, cfg)
        total = 0.0
        for i in range(batch.n):
            d_e = np.linalg.norm(batch.a_set[i] - batch.p_set[i])
            _, d_minus = hardest_negative(batch, i)
            total += max(0.0, cfg.margin + d_e - d_minus)
        assert report.loss == total / batch.n   # bitwise

    def test_separated_clusters_hand_oracle(self):
        # two far-apart tight pairs: hinge reduces to margin + d_plus - d_minus
        a = normalize_batch(np.array([[1.0, 0.0, 0.0],
                                      [0.0, 1.0, 0.0],
                                      [0.0, 0.0, 1.0]]))
        p = a.copy()
        batch = DescriptorBatch(a, p)
        cfg = LossConfig(margin=1.0, k=1, fixed_lambda=0.0)
        report = tcdesc_loss(batch, cfg)
        # d_plus = 0, d_minus = sqrt(2) > margin is false: hinge = 1 - sqrt(2) < 0
        assert report.loss == 0.0
        assert all(not pd.hinge_active for pd in report.per_pair)

    @pytest.mark.parametrize("kind", ["hard", "proxy", "heat", "lc"])
    @pytest.mark.parametrize("fixed", [None, 0.0, 0.3])
    def test_naive_composed_oracle(self, kind, fixed):
        for seed in range(3):
            batch = random_batch(seed, n=12, d=8)
            cfg = LossConfig(k=3, weight_kind=kind, heat_t=0.7,
                             fixed_lambda=fixed, gamma=1.5 if fixed is None else 1.0)
            report = tcdesc_loss(batch, cfg)
            assert report.loss == pytest.approx(naive_loss(batch, cfg), abs=1e-10)

    def test_diagnostics_consistent(self):
        batch = random_batch(4, n=10, d=8)
        cfg = LossConfig(k=3)
        report, cache = loss_forward(batch.a_set, batch.p_set, cfg)
        for pd in report.per_pair:
            assert pd.lam == pytest.approx(
                adaptive_lambda(pd.m, cfg.k, cfg.gamma))
            hinge = cfg.margin + pd.lam * pd.d_t + (1 - pd.lam) * pd.d_e - pd.neg_distance
            assert pd.hinge_active == (hinge > 0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LossConfig(margin=0.0)
        with pytest.raises(ValueError):
            LossConfig(gamma=-1.0)
        with pytest.raises(ValueError):
            LossConfig(fixed_lambda=1.5)
        with pytest.raises(ValueError):
            LossConfig(weight_kind="nope")

    def test_with_(self):
        cfg = LossConfig()
        assert cfg.with_(k=4).k == 4
        assert cfg.with_(k=4).margin == cfg.margin
