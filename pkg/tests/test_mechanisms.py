import math

import numpy as np
import pytest
from scipy import stats

import hetmean as hm
from hetmean.mechanisms import (
    GeometricBins,
    IntervalBins,
    NeighbourRelation,
    PtrOutcome,
    SensitivityBound,
    SensitivityKind,
    dp_histogram,
    laplace_mechanism,
    order_statistic_intervals,
    private_order_statistic,
    propose_test_release,
    sample_laplace,
)


GLOBAL = lambda v: SensitivityBound(v, NeighbourRelation.USER_LEVEL_PUBLIC_SIZE)
LOCAL = lambda v: SensitivityBound(
    v, NeighbourRelation.USER_LEVEL_PRIVATE_K, SensitivityKind.LOCAL_PROPOSED
)


class TestLaplaceMechanism:
    def test_zero_sensitivity_is_exact(self):
        out = laplace_mechanism(3.25, GLOBAL(0.0), 1.0, hm.RandomSource(0))
        assert out.value == 3.25
        assert out.scale == 0.0

    def test_recorded_scale(self):
        out = laplace_mechanism(0.0, GLOBAL(2.0), 0.5, hm.RandomSource(1))
        assert out.scale == 4.0

    def test_noise_standard_deviation(self):
        gen = hm.RandomSource(2).generator()
        draws = sample_laplace(1.0, gen, size=1_000_000)
        assert abs(draws.std() - math.sqrt(2)) < 0.02 * math.sqrt(2)
        assert abs(draws.mean()) < 3 * draws.std() / 1000.0

    def test_rejects_local_bound(self):
        with pytest.raises(ValueError):
            laplace_mechanism(0.0, LOCAL(1.0), 1.0, hm.RandomSource(3))

    def test_rejects_nonpositive_epsilon(self):
        with pytest.raises(ValueError):
            laplace_mechanism(0.0, GLOBAL(1.0), 0.0, hm.RandomSource(4))


class TestHistogram:
    def test_single_occupied_bin_wins_at_large_epsilon(self):
        bins = IntervalBins(((0.0, 1.0), (1.0, 2.0), (2.0, 3.0)))
        res = dp_histogram(
            np.full(100, 1.5),
            bins,
            hm.PrivacyBudget(1e6, 0.0),
            hm.RandomSource(5),
            path="laplace",
        )
        assert res.argmax_bin == 1

    def test_empty_input_rejected(self):
        bins = IntervalBins(((0.0, 1.0),))
        with pytest.raises(ValueError):
            dp_histogram([], bins, hm.PrivacyBudget(1.0, 1e-6), hm.RandomSource(6))

    def test_stability_requires_delta(self):
        bins = GeometricBins()
        with pytest.raises(ValueError):
            dp_histogram([1.0], bins, hm.PrivacyBudget(1.0, 0.0), hm.RandomSource(7))

    def test_laplace_requires_finite_bins(self):
        with pytest.raises(ValueError):
            dp_histogram(
                [1.0],
                GeometricBins(),
                hm.PrivacyBudget(1.0, 1e-6),
                hm.RandomSource(8),
                path="laplace",
            )

    def test_majority_bin_wins(self):
        # 60/40 split, n = 10^4: the count gap dwarfs Laplace(2) noise and the
        # stability threshold, so the majority bin should take the argmax in
        # at least 99% of seeded runs.
        bins = IntervalBins(((0.0, 0.5), (0.5, 1.0)))
        budget = hm.PrivacyBudget(1.0, 1e-6)
        values = np.concatenate([np.full(6000, 0.25), np.full(4000, 0.75)])
        wins = 0
        runs = 1000
        for t in range(runs):
            res = dp_histogram(values, bins, budget, hm.RandomSource(9, t))
            wins += res.argmax_bin == 0
        assert wins / runs >= 0.99

    def test_stability_suppresses_rare_bins(self):
        budget = hm.PrivacyBudget(1.0, 1e-6)
        values = np.concatenate([np.full(500, 3.0), [100.0]])
        res = dp_histogram(values, GeometricBins(), budget, hm.RandomSource(10))
        # threshold ~ 30 at these parameters: the singleton bin cannot survive
        assert 6 not in res.noisy_counts
        assert res.argmax_bin == 1  # (2, 4] holds the 500 values

    def test_geometric_bin_edges_are_left_open(self):
        bins = GeometricBins()
        idx = bins.index(np.asarray([4.0, 4.0001, 0.0]))
        assert idx[0] == 1  # 4.0 belongs to (2, 4]
        assert idx[1] == 2
        assert idx[2] == np.iinfo(np.int64).min


class TestOrderStatistic:
    def test_intervals_partition_domain(self):
        lows, highs, utils = order_statistic_intervals([10, 8, 6, 4, 2], 3, 16)
        assert lows[0] == 1 and highs[-1] == 16
        assert ((lows[1:] - highs[:-1]) == 1).all()
        # rank on (6, 8] is 2, distance to target rank 3 is 1
        j = int(np.where(lows == 7)[0][0])
        assert utils[j] == -1.0

    def test_probabilities_normalize(self):
        lows, highs, utils = order_statistic_intervals([10, 8, 6, 4, 2], 3, 16)
        widths = (highs - lows + 1).astype(float)
        logw = np.log(widths) + 0.5 * 2.0 * utils
        probs = np.exp(logw - logw.max())
        probs /= probs.sum()
        assert abs(probs.sum() - 1.0) <= 1e-12

    def test_constant_counts_peak_plateau(self):
        # With every count equal to K and the rank set to n, the maximal
        # utility plateau is [1, K]; at epsilon = 10 it should win ~always.
        ks = [20] * 30
        hits = 0
        for t in range(300):
            out = private_order_statistic(ks, 30, 40, 10.0, hm.RandomSource(11, t))
            hits += 1 <= out <= 20
        assert hits / 300 >= 0.99

    def test_zero_epsilon_is_uniform(self):
        ks = [10, 8, 6, 4, 2]
        gen = hm.RandomSource(12).generator()
        draws = np.asarray(
            [private_order_statistic(ks, 3, 16, 0.0, gen) for _ in range(100_000)]
        )
        counts = np.bincount(draws, minlength=17)[1:]
        chi = stats.chisquare(counts)
        assert chi.pvalue > 0.01

    def test_rank_error_bound(self):
        # Simulation against the high-probability rank-error radius
        # (1/eps)(ln k_max + ln(1/beta)).
        ks = np.asarray([10, 8, 6, 4, 2])
        eps, beta, k_max, rank = 2.0, 0.1, 16, 3
        bound = (math.log(k_max) + math.log(1 / beta)) / eps
        ok = 0
        trials = 2000
        for t in range(trials):
            out = private_order_statistic(ks, rank, k_max, eps, hm.RandomSource(13, t))
            err = abs(int((ks >= out).sum()) - rank)
            ok += err <= bound
        assert ok / trials >= 1 - beta

    def test_input_validation(self):
        with pytest.raises(ValueError):
            private_order_statistic([5, 3], 3, 8, 1.0, hm.RandomSource(14))
        with pytest.raises(ValueError):
            private_order_statistic([5, 33], 1, 8, 1.0, hm.RandomSource(15))


class TestProposeTestRelease:
    def test_zero_distance_mostly_falls_back(self):
        # Laplace(1) rarely exceeds ln(1/0.05) ~ 3.0
        budget = hm.PrivacyBudget(1.0, 0.05)
        fallbacks = 0
        runs = 2000
        for t in range(runs):
            res = propose_test_release(
                None,
                lambda d: 0.0,
                LOCAL(1.0),
                lambda d, lam: 0.0,
                budget,
                hm.RandomSource(16, t),
            )
            fallbacks += res.outcome is PtrOutcome.FALLBACK
        assert fallbacks / runs >= 0.95

    def test_large_distance_releases(self):
        budget = hm.PrivacyBudget(1.0, 1e-6)
        for t in range(50):
            res = propose_test_release(
                None,
                lambda d: 1.0,
                LOCAL(0.5),
                lambda d, lam: 1e6,
                budget,
                hm.RandomSource(17, t),
            )
            assert res.outcome is PtrOutcome.RELEASED

    def test_infinite_distance_convention(self):
        budget = hm.PrivacyBudget(1.0, 1e-6)
        res = propose_test_release(
            None,
            lambda d: 2.0,
            LOCAL(0.25),
            lambda d, lam: math.inf,
            budget,
            hm.RandomSource(18),
        )
        assert res.outcome is PtrOutcome.RELEASED
        assert res.noise_scale == 0.25

    def test_requires_positive_delta(self):
        with pytest.raises(ValueError):
            propose_test_release(
                None,
                lambda d: 0.0,
                LOCAL(1.0),
                lambda d, lam: 5.0,
                hm.PrivacyBudget(1.0, 0.0),
                hm.RandomSource(19),
            )

    def test_requires_local_bound(self):
        with pytest.raises(ValueError):
            propose_test_release(
                None,
                lambda d: 0.0,
                GLOBAL(1.0),
                lambda d, lam: 5.0,
                hm.PrivacyBudget(1.0, 1e-6),
                hm.RandomSource(20),
            )

    def test_noisy_distance_distribution(self):
        # kappa_tilde - kappa_star should follow Laplace(1/eps).
        budget = hm.PrivacyBudget(2.0, 1e-6)
        gen = hm.RandomSource(21).generator()
        draws = np.empty(100_000)
        for i in range(draws.size):
            res = propose_test_release(
                None,
                lambda d: 0.0,
                LOCAL(1.0),
                lambda d, lam: 7.0,
                budget,
                gen,
            )
            draws[i] = res.kappa_tilde - 7.0
        ks = stats.kstest(draws, stats.laplace(scale=1 / 2.0).cdf)
        assert ks.pvalue > 0.01
