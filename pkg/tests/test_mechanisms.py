import math

import numpy as np
import pytest

from dpgraphon.errors import CapacityError
from dpgraphon.mechanisms import (
    CandidateGrid,
    MechanismConfig,
    build_grid,
    em_sample_index,
    exact_em_distribution,
    exponential_mechanism,
    laplace,
)
from dpgraphon.rng import substream


class TestLaplace:
    def test_median_maps_to_zero(self):
        class FixedU:
            def uniform(self):
                return 0.5

        assert laplace(3.0, FixedU()) == 0.0

    def test_quartile_value(self):
        class FixedU:
            def uniform(self):
                return 0.25

        b = 2.0
        assert laplace(b, FixedU()) == pytest.approx(b * math.log(0.5))

    def test_scale_positive_required(self):
        with pytest.raises(ValueError):
            laplace(0.0, substream(0, "x"))

    @pytest.mark.slow
    def test_variance_monte_carlo(self):
        gen = substream(1, "laplace-var")
        xs = np.array([laplace(1.0, gen) for _ in range(1_000_000)])
        assert abs(xs.var() - 2.0) <= 0.04  # within 2% of Var = 2 b^2


class TestGrid:
    def test_k1_three_values(self):
        g = build_grid(1, 1.0, 0.5)
        assert sorted(float(c[0, 0]) for c in g.candidates) == [0.0, 0.5, 1.0]

    def test_k2_eta1_counting(self):
        g = build_grid(2, 1.0, 1.0)
        assert len(g) == 8  # 2^(k(k+1)/2) symmetric 0/1 candidates

    @pytest.mark.parametrize("seed", range(20))
    def test_size_formula_matches_enumeration(self, seed):
        gen = np.random.default_rng(seed)
        k = int(gen.integers(1, 4))
        R = float(gen.uniform(0.5, 3.0))
        eta = R / int(gen.integers(1, 5))
        g = build_grid(k, R, eta)
        assert len(g) == CandidateGrid.full_size(k, R, eta)

    def test_candidates_symmetric_in_range(self):
        g = build_grid(3, 2.0, 1.0)
        for c in g.candidates:
            assert np.allclose(c, c.T)
            assert c.min() >= 0 and c.max() <= 2.0

    def test_capacity_error(self):
        with pytest.raises(CapacityError):
            build_grid(3, 1.0, 1e-3)

    def test_normalized_filter(self):
        g = build_grid(2, 2.0, 0.5, normalized_only=True)
        for c in g.candidates:
            assert abs(c.mean() - 1.0) <= 0.5 + 1e-12
        assert 0 < len(g) < CandidateGrid.full_size(2, 2.0, 0.5)


class TestExactDistribution:
    def test_single_candidate(self):
        cfg = MechanismConfig(eps=1.0, sensitivity=1.0)
        assert exact_em_distribution([3.0], cfg).tolist() == [1.0]

    def test_equal_scores_uniform(self):
        cfg = MechanismConfig(eps=1.0, sensitivity=1.0)
        p = exact_em_distribution([0.0, 0.0], cfg)
        assert np.allclose(p, [0.5, 0.5])

    def test_two_point_ratio_strict(self):
        # scores {0, Delta} in strict mode: ratio exactly e^{eps/2}
        eps, delta = 1.2, 7.0
        cfg = MechanismConfig(eps=eps, sensitivity=delta, mode="strict")
        p = exact_em_distribution([0.0, delta], cfg)
        assert p[1] / p[0] == pytest.approx(math.exp(eps / 2))

    def test_two_point_ratio_paper(self):
        eps, delta = 0.7, 3.0
        cfg = MechanismConfig(eps=eps, sensitivity=delta, mode="paper")
        p = exact_em_distribution([0.0, delta], cfg)
        assert p[1] / p[0] == pytest.approx(math.exp(eps))

    def test_normalization_and_shift_invariance(self):
        gen = np.random.default_rng(0)
        cfg = MechanismConfig(eps=2.0, sensitivity=5.0)
        scores = gen.normal(size=40) * 100
        p = exact_em_distribution(scores, cfg)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        p2 = exact_em_distribution(scores + 1234.5, cfg)
        assert np.allclose(p, p2, atol=1e-12)

    def test_overflow_safe(self):
        cfg = MechanismConfig(eps=1.0, sensitivity=1.0)
        p = exact_em_distribution([1e6, 0.0], cfg)
        assert np.isfinite(p).all() and p.sum() == pytest.approx(1.0)

    def test_privacy_ratio_bound_over_candidates(self):
        # adjacent score vectors with |ds| <= Delta: every candidate's
        # probability moves by at most e^{eps} in strict mode
        gen = np.random.default_rng(1)
        eps, delta = 1.0, 2.0
        cfg = MechanismConfig(eps=eps, sensitivity=delta, mode="strict")
        s = gen.normal(size=30) * 5
        s2 = s + gen.uniform(-delta, delta, size=30)
        p1 = exact_em_distribution(s, cfg)
        p2 = exact_em_distribution(s2, cfg)
        assert np.abs(np.log(p1) - np.log(p2)).max() <= eps + 1e-9


class TestSampling:
    def test_deterministic_given_seed(self):
        grid = build_grid(2, 1.0, 0.5)
        cfg = MechanismConfig(eps=1.0, sensitivity=1.0)
        score = lambda B: float(B.sum())
        B1, info1 = exponential_mechanism(grid, score, cfg, substream(5, "em"))
        B2, info2 = exponential_mechanism(grid, score, cfg, substream(5, "em"))
        assert np.array_equal(B1.entries, B2.entries)
        assert info1["index"] == info2["index"]

    def test_empty_grid_rejected(self):
        grid = CandidateGrid(k=1, R=1.0, eta=1.0, candidates=np.zeros((0, 1, 1)))
        cfg = MechanismConfig(eps=1.0, sensitivity=1.0)
        with pytest.raises(ValueError):
            exponential_mechanism(grid, lambda B: 0.0, cfg, substream(0, "em"))

    @pytest.mark.slow
    def test_empirical_frequencies_match_exact(self):
        # 1e5 draws on a 5-candidate set within 3 sigma multinomial bounds
        scores = np.array([0.0, 1.0, 2.0, 1.5, -1.0])
        cfg = MechanismConfig(eps=2.0, sensitivity=1.0)
        p = exact_em_distribution(scores, cfg)
        gen = substream(7, "em-freq")
        draws = 100_000
        counts = np.zeros(5)
        for _ in range(draws):
            counts[em_sample_index(scores, cfg, gen)] += 1
        freq = counts / draws
        sigma = np.sqrt(p * (1 - p) / draws)
        assert np.all(np.abs(freq - p) <= 3 * sigma + 1e-4)


class TestUtilityTheorem:
    @pytest.mark.slow
    def test_score_gap_bound(self):
        # with prob >= 1 - delta the sampled score is within
        # eta*L + log(|grid|/delta)/c of the maximum
        gen = substream(9, "utility")
        grid = build_grid(2, 2.0, 0.5)
        scores = np.random.default_rng(2).normal(size=len(grid)) * 3
        cfg = MechanismConfig(eps=1.0, sensitivity=4.0, mode="strict")
        c = cfg.coefficient
        delta = 0.1
        # empirical Lipschitz constant of the score over the grid
        flat = grid.candidates.reshape(len(grid), -1)
        L = 0.0
        for i in range(len(grid)):
            d = np.abs(flat - flat[i]).max(axis=1)
            mask = d > 0
            L = max(L, np.max(np.abs(scores[mask] - scores[i]) / d[mask]))
        bound = grid.eta * L + math.log(len(grid) / delta) / c
        runs, hits = 1000, 0
        for _ in range(runs):
            idx = em_sample_index(scores, cfg, gen)
            if scores.max() - scores[idx] <= bound:
                hits += 1
        # binomial slack: 3 standard errors under p = 1 - delta
        assert hits / runs >= 1 - delta - 3 * math.sqrt(delta * (1 - delta) / runs)
