"""Closed-form variance oracles and the prior-work baseline estimator.

These formulas predict what the Monte Carlo harness should measure: the
variance-minimizing per-user sample cap, the achievable variance when all
users share one mean, a minimax floor no unbiased estimator can beat (up to
polylog factors), and the median-truncation reduction used by prior work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Population, PrivacyBudget
from .estimators import EstimateReport
from .initial import InitialMeanResult
from .mechanisms import PtrOutcome, sample_laplace
from .rng import RandomSource, as_generator

__all__ = [
    "VariancePrediction",
    "LowerBound",
    "optimal_sample_cap",
    "constant_mean_variance",
    "minimax_lower_bound",
    "median_truncation_baseline",
]


@dataclass(frozen=True)
class VariancePrediction:
    """Variance split into a sampling term and a privacy-noise term."""

    nonprivate_term: float
    privacy_term: float
    total: float
    cap: int

    def __post_init__(self) -> None:
        if self.total != self.nonprivate_term + self.privacy_term:
            raise ValueError("total must equal the sum of its terms exactly")


def _capped_sums(ks: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For every cap k in 1..k_max: sum min(k_i, k) and sum min(k_i, sqrt(k_i k)).

    Returns (caps, sum_min, sum_geom) using prefix sums over the sorted counts,
    O(n + k_max).
    """
    ks_sorted = np.sort(ks)
    k_max = int(ks_sorted[-1])
    caps = np.arange(1, k_max + 1)
    below = np.searchsorted(ks_sorted, caps, side="right")
    prefix = np.concatenate(([0.0], np.cumsum(ks_sorted.astype(float))))
    prefix_sqrt = np.concatenate(([0.0], np.cumsum(np.sqrt(ks_sorted.astype(float)))))
    total_sqrt = prefix_sqrt[-1]
    sum_min = prefix[below] + caps * (ks_sorted.size - below)
    sum_geom = prefix[below] + np.sqrt(caps) * (total_sqrt - prefix_sqrt[below])
    return caps, sum_min, sum_geom


def optimal_sample_cap(ks, epsilon: float) -> int:
    """Cap minimizing (k/eps^2 + sum min(k_i, k)) / (sum min(k_i, k))^2.

    Scans every cap in 1..max(ks) with prefix sums; ties resolve to the
    smallest cap.
    """
    arr = np.asarray(ks, dtype=np.int64)
    if arr.size == 0:
        raise ValueError("ks must be nonempty")
    if (arr < 1).any():
        raise ValueError("all counts must be >= 1")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    caps, sum_min, _ = _capped_sums(arr)
    inv_eps2 = 0.0 if math.isinf(epsilon) else 1.0 / epsilon**2
    objective = (caps * inv_eps2 + sum_min) / sum_min**2
    return int(caps[int(np.argmin(objective))])


def constant_mean_variance(
    ks, p: float, epsilon: float, beta: float
) -> VariancePrediction:
    """Achievable variance when every user shares the same mean p.

    Evaluates, at its minimizing cap k,

        [p(1-p) sum_i min(k_i, k) + 6 p ln(2/beta) k / eps^2]
        / (sum_i min(k_i, sqrt(k_i k)))^2.
    """
    arr = np.asarray(ks, dtype=np.int64)
    if arr.size == 0:
        raise ValueError("ks must be nonempty")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    caps, sum_min, sum_geom = _capped_sums(arr)
    inv_eps2 = 0.0 if math.isinf(epsilon) else 1.0 / epsilon**2
    stat = p * (1.0 - p) * sum_min / sum_geom**2
    priv = 6.0 * p * math.log(2.0 / beta) * caps * inv_eps2 / sum_geom**2
    total = stat + priv
    best = int(np.argmin(total))
    return VariancePrediction(
        nonprivate_term=float(stat[best]),
        privacy_term=float(priv[best]),
        total=float(stat[best]) + float(priv[best]),
        cap=int(caps[best]),
    )


@dataclass(frozen=True)
class LowerBound:
    value: float
    branch: str  # "capped_counts" or "mean_spread"
    cap: int


def minimax_lower_bound(ks, sigma_sq: float, epsilon: float, n: int) -> LowerBound:
    """Minimax variance floor (up to polylog factors) for unbiased estimators.

    Minimum of the capped-counts expression evaluated at the optimal cap and
    the mean-spread floor sigma_sq / n.  With sigma_sq = 0 the spread branch
    is vacuous and the capped-counts branch is returned by convention.
    """
    arr = np.asarray(ks, dtype=np.int64)
    if arr.size != n:
        raise ValueError("n must equal len(ks)")
    if sigma_sq < 0:
        raise ValueError("sigma_sq must be nonnegative")
    cap = optimal_sample_cap(arr, epsilon)
    caps, sum_min, sum_geom = _capped_sums(arr)
    inv_eps2 = 0.0 if math.isinf(epsilon) else 1.0 / epsilon**2
    idx = cap - 1
    first = (cap * inv_eps2 + float(sum_min[idx])) / float(sum_geom[idx]) ** 2
    spread = sigma_sq / n
    if sigma_sq > 0 and spread < first:
        return LowerBound(value=spread, branch="mean_spread", cap=cap)
    return LowerBound(value=first, branch="capped_counts", cap=cap)


def median_truncation_baseline(
    pop: Population,
    budget: PrivacyBudget,
    rng: RandomSource | np.random.Generator,
) -> EstimateReport:
    """Prior-work reduction: discard the data-poor half, cut the rest to the
    median count, average, and add Laplace noise at the uniform-weight
    sensitivity 1/(m epsilon)."""
    if pop.n < 2:
        raise ValueError("baseline needs at least two users")
    gen = as_generator(rng)
    half = pop.n // 2
    k_med = int(pop.ks[half - 1])
    means = pop.common_k_means(half, k_med)
    value = float(means.mean())
    scale = 1.0 / (half * budget.epsilon)
    noise = float(sample_laplace(scale, gen))
    return EstimateReport(
        estimate=value + noise,
        pre_noise=value,
        noise=noise,
        plan=None,
        initial_mean=InitialMeanResult(
            p_initial=value,
            alpha=0.0,
            p_initial_raw=value,
            group_size=half,
            noise_scale=scale,
        ),
        initial_variance=None,
        noise_scale=scale,
        ptr=PtrOutcome.NOT_APPLICABLE,
        budget_spent=PrivacyBudget(budget.epsilon, 0.0),
        clamped_users=0,
        diagnostics={"k_med": k_med, "kept_users": half},
    )
