import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import hetmean as hm
from hetmean.concentration import (
    ConcentrationQuery,
    binomial_tail_radius,
    meta_tail_radius,
    truncation_interval,
    user_tail_radius,
)
from hetmean.core import MetaKind, gaussian_support_ratio


def bernstein(k, p, beta):
    log_term = math.log(2.0 / beta)
    return math.sqrt(2.0 * p * (1.0 - p) * log_term / k) + log_term / (3.0 * k)


def test_binomial_radius_degenerate():
    assert binomial_tail_radius(1, 0.0, 0.3) == 0.0
    assert binomial_tail_radius(1, 1.0, 0.3) == 0.0


def test_binomial_radius_single_flip():
    # both outcomes deviate by exactly 0.5; the infimum radius is 0.5
    assert binomial_tail_radius(1, 0.5, 0.6) == pytest.approx(0.5, abs=1e-9)


def test_binomial_radius_exact_below_bernstein():
    exact = binomial_tail_radius(100, 0.5, 0.05)
    assert exact <= bernstein(100, 0.5, 0.05)


@pytest.mark.parametrize("k", [3, 17, 250])
@pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("beta", [0.01, 0.2])
def test_binomial_radius_exact_below_bernstein_grid(k, p, beta):
    assert binomial_tail_radius(k, p, beta) <= bernstein(k, p, beta) + 1e-12


def test_binomial_radius_large_k_uses_bernstein():
    k = 200_000
    assert binomial_tail_radius(k, 0.3, 0.05) == pytest.approx(
        bernstein(k, 0.3, 0.05)
    )


def test_binomial_radius_is_valid_tail_bound():
    # Oracle: exact binomial tail mass beyond the radius is at most beta.
    from scipy.stats import binom

    for k, p, beta in [(10, 0.3, 0.1), (57, 0.72, 0.03), (400, 0.5, 0.2)]:
        r = binomial_tail_radius(k, p, beta)
        xs = np.arange(k + 1)
        mass = binom.pmf(xs, k, p)[np.abs(xs / k - p) > r].sum()
        assert mass <= beta + 1e-12


@settings(max_examples=40, deadline=None)
@given(
    st.integers(min_value=1, max_value=400),
    st.floats(min_value=0.01, max_value=0.99),
    st.floats(min_value=0.02, max_value=0.5),
    st.floats(min_value=0.02, max_value=0.5),
)
def test_binomial_radius_monotone_in_beta(k, p, beta_a, beta_b):
    lo, hi = sorted((beta_a, beta_b))
    assert binomial_tail_radius(k, p, lo) >= binomial_tail_radius(k, p, hi) - 1e-12


def test_meta_radius_point_mass_zero():
    assert meta_tail_radius(MetaKind.POINT_MASS, 1000, 0.04, 0.01) == 0.0


def test_meta_radius_two_point_caps_at_support():
    assert meta_tail_radius(MetaKind.TWO_POINT, 1, 0.01, 1e-6) == pytest.approx(0.1)


def test_meta_radius_truncated_gaussian_formula():
    sigma_sq, n, beta = 0.05**2, 1000, 0.01
    value = meta_tail_radius(MetaKind.TRUNCATED_GAUSSIAN, n, sigma_sq, beta)
    sub_gaussian = math.sqrt(2 * sigma_sq * math.log(2 * n / beta))
    cap = 0.05 * gaussian_support_ratio()
    assert value == pytest.approx(min(sub_gaussian, cap))


def test_meta_radius_covers_max_of_draws():
    # Oracle: simulate max_i |p_i - p| over n draws; it should exceed the
    # radius in at most a beta fraction of trials.
    meta = hm.TruncatedGaussian(0.5, 0.05)
    n, beta, trials = 1000, 0.01, 10_000
    bound = meta_tail_radius(MetaKind.TRUNCATED_GAUSSIAN, n, meta.sigma_p2, beta)
    gen = hm.RandomSource(21).generator()
    exceed = 0
    for _ in range(trials):
        draws = meta.sample(n, gen)
        exceed += np.abs(draws - 0.5).max() > bound
    assert exceed / trials <= beta + 3 * math.sqrt(beta / trials)


def test_user_radius_point_mass_reduces_to_binomial():
    query = ConcentrationQuery(k=1, n=1, sigma_sq=0.0, beta=0.5, p_ref=0.5)
    assert user_tail_radius(query, MetaKind.POINT_MASS) == pytest.approx(
        binomial_tail_radius(1, 0.5, 0.5)
    )


def test_user_radius_shrinks_with_more_samples():
    lo = user_tail_radius(
        ConcentrationQuery(k=400, n=100, sigma_sq=0.0, beta=0.05, p_ref=0.5),
        MetaKind.POINT_MASS,
    )
    hi = user_tail_radius(
        ConcentrationQuery(k=100, n=100, sigma_sq=0.0, beta=0.05, p_ref=0.5),
        MetaKind.POINT_MASS,
    )
    assert lo < hi


def test_user_radius_reflection_symmetry():
    for p in (0.2, 0.35):
        a = user_tail_radius(
            ConcentrationQuery(k=30, n=50, sigma_sq=0.001, beta=0.05, p_ref=p),
            MetaKind.TWO_POINT,
        )
        b = user_tail_radius(
            ConcentrationQuery(k=30, n=50, sigma_sq=0.001, beta=0.05, p_ref=1 - p),
            MetaKind.TWO_POINT,
        )
        assert a == pytest.approx(b)


@pytest.mark.parametrize(
    "meta,kind",
    [
        (hm.PointMass(0.4), MetaKind.POINT_MASS),
        (hm.TruncatedGaussian(0.4, 0.05), MetaKind.TRUNCATED_GAUSSIAN),
        (hm.TwoPoint(0.4, 0.05), MetaKind.TWO_POINT),
    ],
)
@pytest.mark.parametrize("k,n,beta", [(50, 200, 0.05), (5, 1000, 0.1)])
def test_user_radius_coverage(meta, kind, k, n, beta):
    # Oracle: direct simulation of max_i |p_hat_i - p| over n users.
    radius = user_tail_radius(
        ConcentrationQuery(k=k, n=n, sigma_sq=meta.sigma_p2, beta=beta, p_ref=meta.p),
        kind,
    )
    trials = 2000
    gen = hm.RandomSource(31).generator()
    exceed = 0
    for _ in range(trials):
        ps = meta.sample(n, gen)
        p_hats = gen.binomial(k, ps) / k
        exceed += np.abs(p_hats - meta.p).max() > radius
    assert 1 - exceed / trials >= 1 - beta - 3 * math.sqrt(beta / trials)


def test_truncation_interval_examples():
    assert truncation_interval(0.5, 0.0, 0.0) == (0.5, 0.5)
    assert truncation_interval(0.1, 0.05, 0.2) == (0.0, pytest.approx(0.35))
    lo, hi = truncation_interval(0.5, 0.01, 0.07)
    assert (lo, hi) == (pytest.approx(0.42), pytest.approx(0.58))


@settings(max_examples=100, deadline=None)
@given(
    st.floats(min_value=0.0, max_value=1.0),
    st.floats(min_value=0.0, max_value=2.0),
    st.floats(min_value=0.0, max_value=2.0),
)
def test_truncation_interval_properties(center, alpha, radius):
    lo, hi = truncation_interval(center, alpha, radius)
    assert 0.0 <= lo <= hi <= 1.0
    assert hi - lo <= 2 * alpha + 2 * radius + 1e-12
