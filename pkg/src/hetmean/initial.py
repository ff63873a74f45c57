"""Pluggable initial mean and variance estimators.

The weighting stage of the private estimators needs rough private estimates of
the population mean and of the variance of a k-sample user mean.  Any
estimator meeting the accuracy contracts can be plugged in; these are the
default instantiations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PrivacyBudget
from .mechanisms import (
    GeometricBins,
    NeighbourRelation,
    SensitivityBound,
    dp_histogram,
    laplace_mechanism,
)
from .rng import RandomSource, as_generator

__all__ = [
    "InitialMeanResult",
    "InitialVarianceResult",
    "VarianceEstimatorConfig",
    "VarianceEstimateError",
    "SampleSizeTooSmallError",
    "DegenerateSpreadError",
    "dp_mean_initial",
    "dp_variance_initial",
    "averaged_moment_ratio_bound",
    "block_length",
]


class VarianceEstimateError(Exception):
    """The variance estimator could not produce an estimate."""


class SampleSizeTooSmallError(VarianceEstimateError):
    """Too few inputs for the requested accuracy constants."""


class DegenerateSpreadError(VarianceEstimateError):
    """The inputs carry no measurable spread within the configured bin range."""


@dataclass(frozen=True)
class InitialMeanResult:
    """Noisy initial mean with its own computable accuracy radius.

    ``alpha`` is derived from observable quantities only (the noisy estimate,
    the group size, epsilon and beta), never from the true mean.
    """

    p_initial: float
    alpha: float
    p_initial_raw: float
    group_size: int
    noise_scale: float


def dp_mean_initial(
    single_samples,
    epsilon: float,
    beta: float,
    rng: RandomSource | np.random.Generator,
) -> InitialMeanResult:
    """Laplace-noised mean of one binary sample per user.

    The accuracy radius alpha combines a Chernoff bound on the sample mean
    (rewritten in terms of the observed noisy estimate) with a Laplace tail,
    each at budget beta:

        alpha = 2 max{ sqrt(12 p_hat ln(4/beta)/m + 36 ln^2(4/beta)/m^2)
                         + 6 ln(4/beta)/m,
                       ln(2/beta)/(epsilon m) }.
    """
    samples = np.asarray(single_samples)
    m = samples.size
    if m < 1:
        raise ValueError("initial mean needs at least one sample")
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    mean = float(samples.sum()) / m
    release = laplace_mechanism(
        mean,
        SensitivityBound(1.0 / m, NeighbourRelation.EVENT_LEVEL),
        epsilon,
        rng,
    )
    raw = release.value
    clamped = min(1.0, max(0.0, raw))
    log4 = math.log(4.0 / beta)
    log2 = math.log(2.0 / beta)
    chernoff = (
        math.sqrt(12.0 * clamped * log4 / m + 36.0 * log4**2 / m**2)
        + 6.0 * log4 / m
    )
    laplace_tail = log2 / (epsilon * m)
    alpha = 2.0 * max(chernoff, laplace_tail)
    return InitialMeanResult(
        p_initial=clamped,
        alpha=alpha,
        p_initial_raw=raw,
        group_size=m,
        noise_scale=release.scale,
    )


@dataclass(frozen=True)
class InitialVarianceResult:
    """Private variance estimate of a k-sample user mean."""

    sigma2_hat: float
    k_ref: int
    phi: int = 0
    pairs: int = 0
    bin_exponent: int = 0

    def __post_init__(self) -> None:
        if self.sigma2_hat < 0:
            raise ValueError("sigma2_hat must be nonnegative")


def averaged_moment_ratio_bound(meta_ratio: float) -> float:
    """Moment-ratio bound for k-averaged user means.

    If the per-user-mean family has absolute-third-moment ratio
    rho / sigma^3 <= meta_ratio, the k-sample user mean has ratio at most
    8 (3 sqrt(3) + meta_ratio) for every k >= 2.
    """
    if meta_ratio < 0:
        raise ValueError("meta_ratio must be nonnegative")
    return 8.0 * (3.0 * math.sqrt(3.0) + meta_ratio)


@dataclass(frozen=True)
class VarianceEstimatorConfig:
    """Constants for the block-pairing variance estimator.

    ``berry_esseen_gamma`` is the universal CLT convergence constant and
    ``moment_ratio_bound`` bounds rho/sigma^3 of the inputs; together they
    size the block length.  The defaults are the analytically safe values;
    they imply astronomically long blocks, so experiment configurations
    usually substitute smaller documented constants.
    """

    berry_esseen_gamma: float = 0.56
    moment_ratio_bound: float | None = None
    meta_third_moment_ratio: float | None = None
    min_sample_constant: float = 1.0
    histogram_path: str = "stability"

    def resolved_moment_bound(self) -> float:
        if self.moment_ratio_bound is not None:
            return self.moment_ratio_bound
        if self.meta_third_moment_ratio is not None:
            return averaged_moment_ratio_bound(self.meta_third_moment_ratio)
        raise ValueError(
            "set moment_ratio_bound or meta_third_moment_ratio on the config"
        )


def block_length(config: VarianceEstimatorConfig) -> int:
    """Block length phi = ceil((600 * gamma * rho_bar)^2)."""
    product = 600.0 * config.berry_esseen_gamma * config.resolved_moment_bound()
    return int(math.ceil(product**2))


def dp_variance_initial(
    top_user_means,
    k: int,
    budget: PrivacyBudget,
    sigma_bounds: tuple[float, float],
    beta: float,
    rng: RandomSource | np.random.Generator,
    config: VarianceEstimatorConfig | None = None,
) -> InitialVarianceResult:
    """Estimate Var of a k-sample user mean from means of exactly k samples.

    Inputs are grouped into blocks of length phi, block means are differenced
    in non-overlapping pairs, and a private histogram over geometrically
    growing magnitude bins locates the scale of the differences.  The output
    lands in [sigma^2, 8 sigma^2] with high probability when the inputs meet
    the configured moment bound and the sample-size threshold.
    """
    config = config or VarianceEstimatorConfig()
    values = np.asarray(top_user_means, dtype=float)
    n = values.size
    if n < 1:
        raise ValueError("variance estimator needs at least one input")
    if k < 1:
        raise ValueError("k must be >= 1")
    sigma_min, sigma_max = sigma_bounds
    if not 0.0 < sigma_min < sigma_max:
        raise ValueError("need 0 < sigma_min < sigma_max")
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")

    phi = block_length(config)
    eps = budget.epsilon
    term_range = math.log(max(math.log(sigma_max / sigma_min), 1e-12) / beta)
    term_delta = (
        math.log(1.0 / (budget.delta * beta)) if budget.delta > 0 else math.inf
    )
    threshold = config.min_sample_constant * phi * min(term_range, term_delta) / eps
    if n < threshold:
        raise SampleSizeTooSmallError(
            f"{n} inputs < required {threshold:.1f} for phi={phi}"
        )

    n_blocks = n // phi
    pairs = n_blocks // 2
    if pairs < 1:
        raise SampleSizeTooSmallError(f"{n} inputs form no block pairs at phi={phi}")
    block_means = values[: n_blocks * phi].reshape(n_blocks, phi).mean(axis=1)
    diffs = np.abs(block_means[1 : 2 * pairs : 2] - block_means[0 : 2 * pairs : 2])

    j_max = math.ceil(math.log2(sigma_max / math.sqrt(phi))) + 1
    j_min = math.floor(math.log2(sigma_min / math.sqrt(phi))) - 2
    bins = GeometricBins(j_min=j_min, j_max=j_max)
    if not (bins.index(diffs) != np.iinfo(np.int64).min).any():
        raise DegenerateSpreadError(
            "no block difference landed inside the configured scale range"
        )
    hist = dp_histogram(diffs, bins, budget, rng, path=config.histogram_path)
    if hist.argmax_bin is None:
        raise DegenerateSpreadError("every histogram bin was suppressed")
    level = int(hist.argmax_bin)
    # Bin exponent chosen so sigma_hat lands in [sigma, sqrt(8) sigma] when the
    # argmax bin is within one of the modal bin of |block difference|.
    sigma_hat = 2.0 ** (level + 1) * math.sqrt(phi)
    return InitialVarianceResult(
        sigma2_hat=sigma_hat**2,
        k_ref=k,
        phi=phi,
        pairs=pairs,
        bin_exponent=level,
    )
