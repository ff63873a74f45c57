import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import hetmean as hm
from hetmean.core import PopulationDiagnostics


def test_privacy_budget_validation():
    hm.PrivacyBudget(0.5, 0.0)
    with pytest.raises(ValueError):
        hm.PrivacyBudget(0.0)
    with pytest.raises(ValueError):
        hm.PrivacyBudget(1.0, 1.5)


def test_meta_rejects_support_outside_unit_interval():
    with pytest.raises(ValueError):
        hm.TwoPoint(0.05, 0.1)
    with pytest.raises(ValueError):
        hm.TruncatedGaussian(0.02, 0.05)


def test_meta_rejects_variance_above_bernoulli_bound():
    # sigma_p^2 <= p(1-p) for any distribution supported on [0, 1]
    with pytest.raises(ValueError):
        hm.TruncatedGaussian(0.5, 0.51)


def test_two_point_places_mass_at_both_points():
    meta = hm.TwoPoint(0.4, 0.1)
    draws = meta.sample(20_000, hm.RandomSource(3))
    values = set(np.unique(draws.round(12)).tolist())
    assert values == {0.3, 0.5}
    assert abs(draws.mean() - 0.4) < 0.005


@pytest.mark.parametrize(
    "meta",
    [
        hm.TruncatedGaussian(0.5, 0.05),
        hm.TwoPoint(0.3, 0.08),
    ],
)
def test_meta_moments_match_declared_values(meta):
    draws = meta.sample(1_000_000, hm.RandomSource(11))
    se_mean = meta.sigma_p / 1000.0
    assert abs(draws.mean() - meta.p) < 4 * se_mean
    assert abs(draws.var() - meta.sigma_p2) < 0.05 * meta.sigma_p2
    assert draws.min() >= 0.0 and draws.max() <= 1.0


def test_point_mass_population_is_degenerate():
    pop = hm.generate_population(hm.PointMass(1.0), hm.Constant(5), 3, hm.RandomSource(0))
    assert (pop.samples == 1).all()
    assert (pop.p_hats == 1.0).all()


def test_single_sample_population_mean_close_to_p():
    pop = hm.generate_population(
        hm.PointMass(0.5), hm.Constant(1), 1_000_000, hm.RandomSource(1)
    )
    assert abs(pop.p_hats.mean() - 0.5) < 4 * (0.5 / 1000.0)


def test_population_variance_matches_variance_law():
    # Monte Carlo Var(D(k)) against the closed form p(1-p)/k + (1-1/k) sigma_p^2.
    meta = hm.TruncatedGaussian(0.5, 0.05)
    k, n = 50, 100_000
    pop = hm.generate_population(meta, hm.Constant(k), n, hm.RandomSource(2))
    predicted = hm.variance_of_dk(0.5, meta.sigma_p2, k)
    assert abs(pop.p_hats.var() - predicted) < 0.05 * predicted


def test_variance_of_dk_values():
    assert hm.variance_of_dk(0.5, 0.0, 1) == 0.25
    # large-k limit leaves only the meta variance
    assert abs(hm.variance_of_dk(0.5, 0.01, 10**9) - 0.01) < 1e-9
    assert hm.variance_of_dk(0.3, 0.004, 10) == pytest.approx(0.0246)
    with pytest.raises(ValueError):
        hm.variance_of_dk(0.5, 0.3, 4)


def test_variance_of_dk_against_monte_carlo():
    # Independent simulation of D(10): p_i two-point around 0.3, then Bin(10, p_i)/10.
    meta = hm.TwoPoint(0.3, np.sqrt(0.004))
    gen = hm.RandomSource(4).generator()
    n = 1_000_000
    ps = meta.sample(n, gen)
    draws = gen.binomial(10, ps) / 10.0
    sample_var = draws.var()
    centered = (draws - draws.mean()) ** 2
    se = np.sqrt((np.mean(centered**2) - sample_var**2) / n)
    assert abs(sample_var - hm.variance_of_dk(0.3, 0.004, 10)) < 3 * se


def test_user_mean_examples():
    mk = lambda bits: hm.UserRecord(
        k=len(bits), samples=np.asarray(bits, dtype=np.uint8), p_hat=float(np.mean(bits))
    )
    assert hm.user_mean(mk([1, 0, 1, 0])) == 0.5
    assert hm.user_mean(mk([0])) == 0.0
    assert hm.user_mean(mk([1] * 7 + [0] * 3)) == 0.7


def test_population_p_hats_exact():
    pop = hm.generate_population(
        hm.TruncatedGaussian(0.5, 0.03), hm.PowerLaw(), 500, hm.RandomSource(5)
    )
    for i in (0, 10, 499):
        rec = pop.user(i)
        assert rec.p_hat == hm.user_mean(rec)


@settings(max_examples=30, deadline=None)
@given(
    st.sampled_from(["constant", "power_law", "heavy_tail", "explicit"]),
    st.integers(min_value=1, max_value=200),
    st.integers(min_value=0, max_value=2**32 - 1),
)
def test_sorting_invariant_all_profiles(kind, n, seed):
    if kind == "constant":
        profile = hm.Constant(3)
    elif kind == "power_law":
        profile = hm.PowerLaw()
    elif kind == "heavy_tail":
        profile = hm.HeavyTail()
    else:
        gen = np.random.default_rng(seed)
        profile = hm.Explicit(tuple(int(v) for v in gen.integers(1, 50, size=n)))
    pop = hm.generate_population(
        hm.PointMass(0.5), profile, n, hm.RandomSource(seed)
    )
    assert (np.diff(pop.ks) <= 0).all()
    assert (pop.ks >= 1).all()


def test_profile_length_mismatch_rejected():
    with pytest.raises(ValueError):
        hm.generate_population(hm.PointMass(0.5), hm.Explicit((1, 2)), 3, hm.RandomSource(0))


def test_reproducibility_bit_identical():
    a = hm.generate_population(
        hm.TruncatedGaussian(0.5, 0.04), hm.PowerLaw(), 300, hm.RandomSource(9, 4)
    )
    b = hm.generate_population(
        hm.TruncatedGaussian(0.5, 0.04), hm.PowerLaw(), 300, hm.RandomSource(9, 4)
    )
    assert (a.samples == b.samples).all()
    assert (a.p_hats == b.p_hats).all()
    c = hm.generate_population(
        hm.TruncatedGaussian(0.5, 0.04), hm.PowerLaw(), 300, hm.RandomSource(9, 5)
    )
    assert not (c.samples == a.samples).all()


def test_serialization_round_trip(tmp_path):
    pop = hm.generate_population(
        hm.TwoPoint(0.4, 0.1), hm.PowerLaw(), 40, hm.RandomSource(12)
    )
    path = tmp_path / "pop.txt"
    hm.write_population(pop, path)
    back = hm.read_population(path)
    assert (back.ks == pop.ks).all()
    assert (back.samples == pop.samples).all()
    assert (back.p_hats == pop.p_hats).all()


def test_common_k_means_uses_first_k_samples():
    pop = hm.generate_population(
        hm.PointMass(0.5), hm.PowerLaw(), 50, hm.RandomSource(13)
    )
    k = int(pop.ks[4])
    means = pop.common_k_means(5, k)
    for i in range(5):
        rec = pop.user(i)
        assert means[i] == rec.samples[:k].astype(int).mean()


def test_diagnostics_channel_is_separate_type():
    pop = hm.generate_population(
        hm.TruncatedGaussian(0.5, 0.03), hm.Constant(4), 100, hm.RandomSource(14)
    )
    assert isinstance(pop.diagnostics, PopulationDiagnostics)
    assert pop.diagnostics.true_means.shape == (100,)
    # estimator-facing arrays carry no true means
    assert not np.allclose(pop.diagnostics.true_means, pop.p_hats)
