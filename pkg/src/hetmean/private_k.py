"""Estimator that also protects each user's sample count.

The influence cap becomes a private order statistic of the counts, the
normalizer is released with a downward-shifted Laplace draw, and the final
weighted mean goes through propose-test-release: a certified lower bound on
the distance to any high-local-sensitivity dataset gates the noisy release.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .concentration import ConcentrationQuery, truncation_interval, user_tail_radius
from .core import DEFAULT_HALF_WIDTH_W, MetaKind, Population, PrivacyBudget
from .estimators import (
    ConditionWarning,
    EstimateReport,
    EstimatorConfig,
    GroupSizeError,
    _group_bounds,
    _VARIANCE_FLOOR,
    default_variance_group,
)
from .initial import InitialVarianceResult, dp_mean_initial, dp_variance_initial
from .mechanisms import (
    NeighbourRelation,
    PtrOutcome,
    SensitivityBound,
    SensitivityKind,
    private_order_statistic,
    propose_test_release,
    sample_laplace,
)
from .rng import RandomSource, as_generator

__all__ = [
    "TruncatedCoreParams",
    "PtrCertificate",
    "truncated_weighted_mean",
    "certify_kappa",
    "estimate_private_k",
]


@dataclass(frozen=True)
class TruncatedCoreParams:
    """Data-independent parameters of the truncated weighted mean.

    Everything here is either public or previously privatized, so the core
    statistic's sensitivity analysis can treat it as fixed.
    """

    k_cap: int
    group_size: int
    center: float
    sigma_sq: float
    alpha: float
    beta: float
    meta_kind: MetaKind
    half_width_w: float = DEFAULT_HALF_WIDTH_W

    def __post_init__(self) -> None:
        if self.k_cap < 1:
            raise ValueError("k_cap must be >= 1")
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if not 0.0 <= self.center <= 1.0:
            raise ValueError("center must lie in [0, 1]")

    def capped_variance(self, k: int) -> float:
        """Variance proxy at capped count min(k, k_cap)."""
        kk = min(int(k), self.k_cap)
        return max(
            self.center * (1.0 - self.center) / kk
            + (1.0 - 1.0 / kk) * self.sigma_sq,
            _VARIANCE_FLOOR,
        )

    def radius(self, k: int) -> float:
        """Clamping radius for a user holding min(k, k_cap) effective samples."""
        kk = min(int(k), self.k_cap)
        query = ConcentrationQuery(
            k=kk,
            n=self.group_size,
            sigma_sq=self.sigma_sq,
            beta=self.beta,
            p_ref=self.center,
        )
        return user_tail_radius(query, self.meta_kind, self.half_width_w)

    def interval(self, k: int) -> tuple[float, float]:
        return truncation_interval(self.center, self.alpha, self.radius(k))

    def half_extent(self, k: int) -> float:
        """Largest distance of a clamped value from the center."""
        lo, hi = self.interval(k)
        return max(self.center - lo, hi - self.center)


def _core_components(
    p_hats: np.ndarray, ks: np.ndarray, params: TruncatedCoreParams
) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized weights and clamped values for the core statistic."""
    v = np.empty(len(ks))
    clamped = np.empty(len(ks))
    cache: dict[int, tuple[float, float, float]] = {}
    for i, (p_hat, k) in enumerate(zip(p_hats, ks)):
        kk = min(int(k), params.k_cap)
        if kk not in cache:
            lo, hi = params.interval(kk)
            cache[kk] = (1.0 / params.capped_variance(kk), lo, hi)
        weight, lo, hi = cache[kk]
        v[i] = weight
        clamped[i] = min(max(float(p_hat), lo), hi)
    return v, clamped


def truncated_weighted_mean(
    p_hats, ks, params: TruncatedCoreParams
) -> float:
    """Deterministic core: capped inverse-variance weighted clamped mean.

    Counts are capped at k_cap before both the variance proxy and the
    clamping radius, so one user's record can shift the output only within
    certified bounds.  No noise is added here.
    """
    p_arr = np.asarray(p_hats, dtype=float)
    k_arr = np.asarray(ks, dtype=np.int64)
    if p_arr.size == 0:
        raise ValueError("group must be nonempty")
    if p_arr.size != k_arr.size:
        raise ValueError("p_hats and ks must have equal length")
    v, clamped = _core_components(p_arr, k_arr, params)
    return float(np.dot(v, clamped) / v.sum())


@dataclass(frozen=True)
class PtrCertificate:
    """Record of the analytic bound chain behind a certified radius.

    For any dataset E differing from the observed one on at most kappa
    records, and any single-record change E -> E', the core moves by at most

        |M(E') - M(E)| <= 2 (U + v_max * A_max) / S_lb(kappa + 1)

    where U bounds v(k) * half-extent(k) over k in [1, k_cap], A_max is the
    widest half-extent (k = 1), and S_lb(j) = S - j (v_max - v_min) lower
    bounds the weight normalizer after j records change adversarially.
    kappa_star is the largest kappa keeping that bound at or below the
    proposed sensitivity.
    """

    proposed: float
    kappa_star: int
    noisy_normalizer: float
    sigma_min_sq: float
    v_min: float
    v_max: float
    total_weight: float
    weighted_extent_bound: float  # U
    widest_half_extent: float  # A_max


def _weighted_extent_bound(params: TruncatedCoreParams) -> float:
    """Sound upper bound on max over k in [1, k_cap] of v(k) * half_extent(k).

    v is nondecreasing and the half-extent nonincreasing in k, so on each
    segment [a, b] of a geometric k-grid the product is at most
    v(b) * half_extent(a).
    """
    grid = [1]
    while grid[-1] < params.k_cap:
        grid.append(min(params.k_cap, grid[-1] * 2))
    bound = 0.0
    for a, b in zip(grid, grid[1:] or [params.k_cap]):
        v_hi = 1.0 / params.capped_variance(b)
        bound = max(bound, v_hi * params.half_extent(a))
    if len(grid) == 1:
        bound = params.half_extent(1) / params.capped_variance(1)
    return bound


def certify_kappa(
    p_hats, ks, params: TruncatedCoreParams, proposed: float
) -> tuple[int, PtrCertificate]:
    """Certified lower bound on the largest radius of bounded local sensitivity.

    Returns the largest kappa such that the analytic change-one bound stays at
    or below ``proposed`` for every dataset within kappa record changes of the
    observed one (and hence a valid, conservative distance for PTR: a smaller
    certified radius only raises the fallback rate, never weakens privacy).
    """
    if proposed <= 0:
        raise ValueError("proposed sensitivity must be positive")
    p_arr = np.asarray(p_hats, dtype=float)
    k_arr = np.asarray(ks, dtype=np.int64)
    m = p_arr.size
    v, _ = _core_components(p_arr, k_arr, params)
    total = float(v.sum())
    v_max = 1.0 / params.capped_variance(params.k_cap)
    v_min = 1.0 / params.capped_variance(1)
    a_max = params.half_extent(1)
    u_bound = _weighted_extent_bound(params)
    numerator = 2.0 * (u_bound + v_max * a_max)

    def bound(kappa: int) -> float:
        s_lb = total - (kappa + 1) * (v_max - v_min)
        if s_lb <= 0:
            return math.inf
        return numerator / s_lb

    cert = lambda kappa_star: PtrCertificate(  # noqa: E731 - tiny local factory
        proposed=proposed,
        kappa_star=kappa_star,
        noisy_normalizer=math.nan,
        sigma_min_sq=params.capped_variance(params.k_cap),
        v_min=v_min,
        v_max=v_max,
        total_weight=total,
        weighted_extent_bound=u_bound,
        widest_half_extent=a_max,
    )

    if bound(0) > proposed:
        return 0, cert(0)
    if bound(m) <= proposed:
        return m, cert(m)
    lo, hi = 0, m  # invariant: bound(lo) <= proposed < bound(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if bound(mid) <= proposed:
            lo = mid
        else:
            hi = mid
    return lo, cert(lo)


def estimate_private_k(
    pop: Population,
    budget: PrivacyBudget,
    beta: float,
    config: EstimatorConfig,
    rng: RandomSource | np.random.Generator,
) -> EstimateReport:
    """User-level DP estimator with private sample counts.

    The influence cap is a private order statistic of the counts, the weight
    normalizer is released with a downward shift so it understates the truth
    with probability 1 - delta, and the final truncated weighted mean is
    released through propose-test-release (falling back to the initial mean
    when the certified distance test fails).  Total cost: (3 epsilon,
    2 delta).
    """
    if budget.delta <= 0:
        raise ValueError("private-count estimation requires delta > 0")
    gen = as_generator(rng)
    n = pop.n
    eps = budget.epsilon
    L = config.L if config.L is not None else default_variance_group(n, config, eps)
    if L < 1:
        raise GroupSizeError("the order-statistic rank L must be >= 1")
    lo, hi = _group_bounds(n, L)
    k_max = config.k_max
    if k_max is None:
        raise ValueError("config.k_max is required for private-count estimation")
    if k_max < int(pop.ks[0]):
        raise ValueError("k_max must bound every user's sample count")
    needed = (math.log(k_max) + math.log(1.0 / beta)) / (2.0 * eps)
    if L < needed:
        warnings.warn(
            f"L={L} below {needed:.1f}; the order-statistic cap may truncate "
            "far from the intended rank",
            ConditionWarning,
            stacklevel=2,
        )

    mean_fn = config.mean_estimator or dp_mean_initial
    init = mean_fn(pop.first_samples(hi, n), eps, beta, gen)
    alpha = config.alpha_override if config.alpha_override is not None else init.alpha

    if config.known_sigma_sq is not None:
        var_res = InitialVarianceResult(sigma2_hat=config.known_sigma_sq, k_ref=1)
    else:
        k_ref = int(pop.ks[L - 1])
        variance_fn = config.variance_estimator or dp_variance_initial
        var_res = variance_fn(
            pop.common_k_means(L, k_ref),
            k_ref,
            budget,
            config.sigma_bounds,
            beta,
            gen,
            config.variance,
        )
    sigma_p_sq = var_res.sigma2_hat

    k_cap = private_order_statistic(pop.ks, L, k_max, eps, gen)
    params = TruncatedCoreParams(
        k_cap=k_cap,
        group_size=hi - lo,
        center=init.p_initial,
        sigma_sq=sigma_p_sq,
        alpha=alpha,
        beta=beta,
        meta_kind=config.meta_kind,
        half_width_w=config.half_width_w,
    )
    p_mid = pop.p_hats[lo:hi]
    ks_mid = pop.ks[lo:hi]
    v, _ = _core_components(p_mid, ks_mid, params)

    sigma_min_sq = params.capped_variance(k_cap)
    norm_scale = 1.0 / (eps * sigma_min_sq)
    shift = math.log(2.0 / budget.delta) / (eps * sigma_min_sq)
    noisy_norm = float(v.sum() + sample_laplace(norm_scale, gen)) - shift

    radius_k = k_max if config.lambda_radius_at == "k_max" else k_cap
    cap_query = ConcentrationQuery(
        k=int(radius_k),
        n=hi - lo,
        sigma_sq=sigma_p_sq,
        beta=beta,
        p_ref=init.p_initial,
    )
    cap_radius = user_tail_radius(cap_query, config.meta_kind, config.half_width_w)

    budget_spent = PrivacyBudget(3.0 * eps, min(1.0, 2.0 * budget.delta))
    if noisy_norm <= 0:
        # The released normalizer certifies nothing; fall back immediately.
        return EstimateReport(
            estimate=init.p_initial,
            pre_noise=init.p_initial,
            noise=0.0,
            plan=None,
            initial_mean=init,
            initial_variance=var_res,
            noise_scale=0.0,
            ptr=PtrOutcome.FALLBACK,
            budget_spent=budget_spent,
            clamped_users=0,
            diagnostics={"k_cap": k_cap, "noisy_normalizer": noisy_norm},
        )

    lam = 12.0 * cap_radius / (sigma_min_sq * noisy_norm)
    proposed = SensitivityBound(
        lam,
        NeighbourRelation.USER_LEVEL_PRIVATE_K,
        SensitivityKind.LOCAL_PROPOSED,
    )
    certificate_holder: dict = {}

    def core(dataset) -> float:
        p_vals, k_vals = dataset
        return truncated_weighted_mean(p_vals, k_vals, params)

    def distance(dataset, bound_value: float) -> float:
        p_vals, k_vals = dataset
        kappa, certificate = certify_kappa(p_vals, k_vals, params, bound_value)
        certificate_holder["certificate"] = certificate
        return float(kappa)

    result = propose_test_release(
        (p_mid, ks_mid), core, proposed, distance, budget, gen
    )
    diagnostics = {
        "k_cap": k_cap,
        "noisy_normalizer": noisy_norm,
        "lambda": lam,
        "kappa_star": result.kappa_star,
        "kappa_tilde": result.kappa_tilde,
        "certificate": certificate_holder.get("certificate"),
    }
    if result.outcome is PtrOutcome.FALLBACK:
        return EstimateReport(
            estimate=init.p_initial,
            pre_noise=init.p_initial,
            noise=0.0,
            plan=None,
            initial_mean=init,
            initial_variance=var_res,
            noise_scale=result.noise_scale,
            ptr=PtrOutcome.FALLBACK,
            budget_spent=budget_spent,
            clamped_users=0,
            diagnostics=diagnostics,
        )
    pre_noise = truncated_weighted_mean(p_mid, ks_mid, params)
    return EstimateReport(
        estimate=float(result.value),
        pre_noise=pre_noise,
        noise=float(result.value) - pre_noise,
        plan=None,
        initial_mean=init,
        initial_variance=var_res,
        noise_scale=result.noise_scale,
        ptr=PtrOutcome.RELEASED,
        budget_spent=budget_spent,
        clamped_users=0,
        diagnostics=diagnostics,
    )
