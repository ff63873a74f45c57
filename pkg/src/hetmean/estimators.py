"""Weighted-mean estimators: non-private, oracle-ideal, and public-size DP.

All estimators share one shape: per-user variance proxies turn into
inverse-variance weights (capped by a threshold T on any single user's
influence), user estimates are clamped into concentration intervals, and the
private paths add Laplace noise scaled to the largest weight-times-width
product.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .concentration import (
    ConcentrationQuery,
    truncation_interval,
    user_tail_radius,
)
from .core import (
    DEFAULT_HALF_WIDTH_W,
    MetaKind,
    Population,
    PrivacyBudget,
    variance_of_dk,
)
from .initial import (
    InitialMeanResult,
    InitialVarianceResult,
    VarianceEstimatorConfig,
    block_length,
    dp_mean_initial,
    dp_variance_initial,
)
from .mechanisms import PtrOutcome, sample_laplace
from .rng import RandomSource, as_generator

__all__ = [
    "WeightPlan",
    "EstimateReport",
    "EstimatorConfig",
    "GroupSizeError",
    "ConditionWarning",
    "ideal_weights",
    "optimize_threshold",
    "threshold_objective",
    "estimate_nonprivate",
    "estimate_ideal_private",
    "estimate_public_k",
]

_VARIANCE_FLOOR = 1e-18


class GroupSizeError(ValueError):
    """The population cannot be split into the required user groups."""


class ConditionWarning(UserWarning):
    """A stated applicability condition failed; results may degrade."""


@dataclass(frozen=True)
class WeightPlan:
    """Deterministic core of an estimate.

    ``weights`` sum to 1 over the participating users (index_range into the
    population's descending-k order).  For private plans, ``sensitivity`` is
    exactly max_i weights[i] * interval width and ``noise_scale`` is
    sensitivity / epsilon.
    """

    weights: np.ndarray
    threshold: float
    sigma_sq: np.ndarray
    intervals: np.ndarray | None  # shape (m, 2); None for the non-private path
    sensitivity: float
    noise_scale: float
    index_range: tuple[int, int]

    def __post_init__(self) -> None:
        total = float(np.sum(self.weights))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {total}, not 1")
        if self.sensitivity < 0 or self.noise_scale < 0:
            raise ValueError("sensitivity and noise scale must be nonnegative")
        if self.intervals is not None:
            widths = self.intervals[:, 1] - self.intervals[:, 0]
            lam = float(np.max(self.weights * widths))
            if not math.isclose(lam, self.sensitivity, rel_tol=1e-12, abs_tol=1e-15):
                raise ValueError("sensitivity must equal max weight * width")


@dataclass(frozen=True)
class EstimateReport:
    """One estimator run, reconstructible from its logged parts."""

    estimate: float
    pre_noise: float
    noise: float
    plan: WeightPlan | None
    initial_mean: InitialMeanResult | None
    initial_variance: InitialVarianceResult | None
    noise_scale: float
    ptr: PtrOutcome
    budget_spent: PrivacyBudget | None
    clamped_users: int
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs shared by the realizable private estimators.

    ``meta_kind`` tells the concentration layer which tail family to use
    (the shape of the per-user-mean distribution is assumed known, its
    parameters are not).  ``alpha_override`` replaces the initial-mean
    accuracy radius, mainly to run oracle experiments with alpha = 0.
    """

    meta_kind: MetaKind
    half_width_w: float = DEFAULT_HALF_WIDTH_W
    L: int | None = None
    alpha_override: float | None = None
    known_sigma_sq: float | None = None
    sigma_bounds: tuple[float, float] = (1e-3, 1.0)
    variance: VarianceEstimatorConfig = field(default_factory=VarianceEstimatorConfig)
    k_max: int | None = None  # private-k path only
    lambda_radius_at: str = "k_max"  # or "k_hat_L"
    mean_estimator: Callable | None = None
    variance_estimator: Callable | None = None


def ideal_weights(sigmas: np.ndarray, threshold: float) -> np.ndarray:
    """Normalized min(1/sigma^2, T/sigma) weights.

    With T >= max_i 1/sigma_i the cap never binds and the weights reduce to
    plain inverse-variance weighting.
    """
    sig = np.asarray(sigmas, dtype=float)
    if (sig <= 0).any():
        raise ValueError("all sigmas must be positive")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    raw = np.minimum(1.0 / sig**2, threshold / sig)
    return raw / raw.sum()


def threshold_objective(
    sigmas: np.ndarray, widths: np.ndarray, epsilon: float, threshold: float
) -> float:
    """Variance proxy minimized by optimize_threshold, evaluated directly."""
    sig = np.asarray(sigmas, dtype=float)
    wid = np.asarray(widths, dtype=float)
    t = threshold
    stat = np.minimum(1.0 / sig**2, t**2).sum()
    if math.isinf(epsilon):
        priv = 0.0
    else:
        priv = np.max(np.minimum(1.0 / sig**4, t**2 / sig**2) * wid**2) / epsilon**2
    den = np.minimum(1.0 / sig**2, t / sig).sum()
    return (stat + priv) / den**2


def optimize_threshold(
    sigmas: np.ndarray, widths: np.ndarray, epsilon: float
) -> float:
    """Influence cap T minimizing the weighted-variance-plus-noise proxy

        J(T) = [sum_i min(1/s_i^2, T^2)
                + max_i min(1/s_i^4, T^2/s_i^2) w_i^2 / eps^2]
               / (sum_i min(1/s_i^2, T/s_i))^2.

    J is piecewise smooth with breakpoints at T = 1/s_i; candidates are the
    breakpoints, a 64-point geometric refinement of each gap, the max-term
    crossover inside each gap, and the closed-form stationary point of each
    smooth rational piece.  Ties resolve to the smaller T.
    """
    sig = np.asarray(sigmas, dtype=float)
    wid = np.asarray(widths, dtype=float)
    if sig.size == 0 or sig.size != wid.size:
        raise ValueError("sigmas and widths must be nonempty and equally long")
    if (sig <= 0).any():
        raise ValueError("all sigmas must be positive")
    if (wid < 0).any():
        raise ValueError("widths must be nonnegative")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")

    order = np.argsort(sig)
    s = sig[order]
    w = wid[order]
    n = s.size
    inv_eps2 = 0.0 if math.isinf(epsilon) else 1.0 / epsilon**2

    # Users are clamped (weight T/s instead of 1/s^2) exactly when T < 1/s;
    # in ascending-s order the clamped set is a prefix.
    inv = 1.0 / s
    inv2 = inv**2
    prefix_inv = np.concatenate(([0.0], np.cumsum(inv)))  # over clamped prefix
    suffix_inv2 = np.concatenate((np.cumsum(inv2[::-1])[::-1], [0.0]))
    ratio2 = w**2 * inv2  # w^2 / s^2, relevant for clamped users
    ratio4 = w**2 * inv2**2  # w^2 / s^4, relevant for unclamped users
    prefix_max2 = np.concatenate(([0.0], np.maximum.accumulate(ratio2)))
    suffix_max4 = np.concatenate(
        (np.maximum.accumulate(ratio4[::-1])[::-1], [0.0])
    )
    breaks_desc = inv  # descending as s ascends? no: inv is descending in s order
    # inv is descending (s ascending); keep an ascending copy for counting.
    breaks_asc = inv[::-1].copy()

    def clamp_count(ts: np.ndarray) -> np.ndarray:
        # number of users with 1/s_i > T
        return n - np.searchsorted(breaks_asc, ts, side="right")

    bp = np.unique(inv)  # ascending distinct breakpoints

    candidates = [bp, np.asarray([bp[0] / 4.0])]
    for lo, hi in zip(bp[:-1], bp[1:]):
        interior = np.geomspace(lo, hi, 66)[1:-1]
        candidates.append(interior)
        mid = math.sqrt(lo * hi)
        c = int(clamp_count(np.asarray([mid]))[0])
        s4 = suffix_max4[c]
        p2 = prefix_max2[c]
        e = suffix_inv2[c]
        f = prefix_inv[c]
        cross = math.sqrt(s4 / p2) if p2 > 0 and s4 > 0 else None
        pieces = [(lo, hi)]
        if cross is not None and lo < cross < hi:
            candidates.append(np.asarray([cross]))
            pieces = [(lo, cross), (cross, hi)]
        for p_lo, p_hi in pieces:
            p_mid = math.sqrt(p_lo * p_hi)
            if s4 >= p2 * p_mid**2:
                a_num = e + s4 * inv_eps2
                b_num = float(c)
            else:
                a_num = e
                b_num = c + p2 * inv_eps2
            # d/dT [(a + b T^2) / (e + f T)^2] = 0  at  T = a f / (b e)
            if b_num > 0 and e > 0 and f > 0:
                t_crit = a_num * f / (b_num * e)
                if p_lo < t_crit < p_hi:
                    candidates.append(np.asarray([t_crit]))

    ts = np.unique(np.concatenate(candidates))
    cs = clamp_count(ts)
    stat = suffix_inv2[cs] + cs * ts**2
    priv = np.maximum(suffix_max4[cs], prefix_max2[cs] * ts**2) * inv_eps2
    den = suffix_inv2[cs] + prefix_inv[cs] * ts
    objective = (stat + priv) / den**2
    best = int(np.argmin(objective))  # first occurrence wins: smaller T
    return float(ts[best])


def _radius_table(
    ks: np.ndarray,
    n: int,
    sigma_sq: float,
    beta: float,
    p_ref: float,
    kind: MetaKind,
    w: float,
) -> np.ndarray:
    """user_tail_radius per entry of ks, computed once per distinct k."""
    radii = {}
    for k in np.unique(ks).tolist():
        query = ConcentrationQuery(k=int(k), n=n, sigma_sq=sigma_sq, beta=beta, p_ref=p_ref)
        radii[int(k)] = user_tail_radius(query, kind, w)
    return np.asarray([radii[int(k)] for k in ks])


def _interval_arrays(
    center: float, alpha: float, radii: np.ndarray
) -> np.ndarray:
    lohi = np.empty((radii.size, 2))
    for i, r in enumerate(radii):
        lohi[i] = truncation_interval(center, alpha, float(r))
    return lohi


def _weighted_clamped_sum(
    p_hats: np.ndarray, weights: np.ndarray, intervals: np.ndarray
) -> tuple[float, int]:
    clamped = np.clip(p_hats, intervals[:, 0], intervals[:, 1])
    n_clamped = int(np.count_nonzero(clamped != p_hats))
    return float(np.dot(weights, clamped)), n_clamped


def _group_bounds(n: int, top: int) -> tuple[int, int]:
    """Middle-group slice [top, n - floor(n/10)) in descending-k order.

    top = 0 is allowed when no variance-estimation cohort is needed.
    """
    bottom = n // 10
    lo, hi = top, n - bottom
    if bottom < 1 or top < 0 or hi <= lo:
        raise GroupSizeError(
            f"cannot split n={n} into top={top}, middle, and bottom={bottom}"
        )
    return lo, hi


def estimate_nonprivate(pop: Population) -> EstimateReport:
    """Inverse-variance weighted mean with plug-in initial estimates, no noise.

    The bottom decile contributes one sample each for the initial mean; the
    data-richest ~ln(n) users provide a pairwise-difference variance estimate;
    the middle group carries the weighted mean.
    """
    n = pop.n
    if n < 20:
        raise GroupSizeError("non-private estimator needs n >= 20")
    m_top = max(2, round(math.log(n)))
    lo, hi = _group_bounds(n, m_top)

    bottom = pop.first_samples(hi, n)
    p_init = float(bottom.sum()) / bottom.size

    top = pop.p_hats[:m_top]
    # Mean squared difference over ordered pairs estimates twice the variance.
    diffs = top[:, None] - top[None, :]
    m = m_top
    sigma_p_sq = float((diffs**2).sum() / (m * (m - 1))) / 2.0

    ks_mid = pop.ks[lo:hi]
    sigma_sq = np.maximum(
        p_init * (1.0 - p_init) / ks_mid + (1.0 - 1.0 / ks_mid) * sigma_p_sq,
        _VARIANCE_FLOOR,
    )
    raw = 1.0 / sigma_sq
    weights = raw / raw.sum()
    estimate = float(np.dot(weights, pop.p_hats[lo:hi]))

    plan = WeightPlan(
        weights=weights,
        threshold=math.inf,
        sigma_sq=sigma_sq,
        intervals=None,
        sensitivity=0.0,
        noise_scale=0.0,
        index_range=(lo, hi),
    )
    return EstimateReport(
        estimate=estimate,
        pre_noise=estimate,
        noise=0.0,
        plan=plan,
        initial_mean=InitialMeanResult(
            p_initial=p_init,
            alpha=0.0,
            p_initial_raw=p_init,
            group_size=bottom.size,
            noise_scale=0.0,
        ),
        initial_variance=InitialVarianceResult(sigma2_hat=sigma_p_sq, k_ref=int(pop.ks[m_top - 1])),
        noise_scale=0.0,
        ptr=PtrOutcome.NOT_APPLICABLE,
        budget_spent=None,
        clamped_users=0,
    )


def estimate_ideal_private(
    pop: Population,
    true_p: float,
    true_sigma_sq: float,
    epsilon: float,
    beta: float,
    rng: RandomSource | np.random.Generator,
    meta_kind: MetaKind,
    half_width_w: float = DEFAULT_HALF_WIDTH_W,
) -> EstimateReport:
    """Oracle-assisted private estimator: knows the true mean and variance.

    Diagnostic only; it clamps every user into intervals centered at the true
    mean, weights by true per-user variances with the optimized cap, and adds
    Laplace noise.  The report carries the closed-form variance prediction
    sum w_i^2 sigma_i^2 + 2 (max_i w_i width_i / epsilon)^2.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    gen = as_generator(rng)
    n = pop.n
    ks = pop.ks
    sigma_sq = np.asarray(
        [variance_of_dk(true_p, true_sigma_sq, int(k)) for k in np.unique(ks)]
    )
    lookup = dict(zip(np.unique(ks).tolist(), sigma_sq.tolist()))
    sig2 = np.maximum(np.asarray([lookup[int(k)] for k in ks]), _VARIANCE_FLOOR)
    sig = np.sqrt(sig2)

    radii = _radius_table(ks, n, true_sigma_sq, beta, true_p, meta_kind, half_width_w)
    intervals = _interval_arrays(true_p, 0.0, radii)
    widths = intervals[:, 1] - intervals[:, 0]

    threshold = optimize_threshold(sig, widths, epsilon)
    weights = ideal_weights(sig, threshold)
    lam = float(np.max(weights * widths))
    scale = lam / epsilon
    noise = float(sample_laplace(scale, gen))
    pre_noise, n_clamped = _weighted_clamped_sum(pop.p_hats, weights, intervals)

    stat_term = float(np.dot(weights**2, sig2))
    noise_term = 2.0 * scale**2
    plan = WeightPlan(
        weights=weights,
        threshold=threshold,
        sigma_sq=sig2,
        intervals=intervals,
        sensitivity=lam,
        noise_scale=scale,
        index_range=(0, n),
    )
    return EstimateReport(
        estimate=pre_noise + noise,
        pre_noise=pre_noise,
        noise=noise,
        plan=plan,
        initial_mean=None,
        initial_variance=None,
        noise_scale=scale,
        ptr=PtrOutcome.NOT_APPLICABLE,
        budget_spent=PrivacyBudget(epsilon, 0.0),
        clamped_users=n_clamped,
        diagnostics={
            "predicted_variance": stat_term + noise_term,
            "predicted_stat_term": stat_term,
            "predicted_noise_term": noise_term,
        },
    )


def default_variance_group(n: int, config: EstimatorConfig, epsilon: float) -> int:
    """Group size for the variance estimator when the config leaves L unset."""
    phi = block_length(config.variance)
    wanted = max(2 * phi * 40, math.ceil(math.log(max(n, 2)) / epsilon))
    return max(2, min(n // 4, wanted))


def check_k_ratio(ks: np.ndarray, L: int) -> bool:
    """Condition k_1 / k_{n/2} <= (n/2 - L) / L behind the variance bound."""
    if L == 0:
        return True
    n = ks.size
    k_med = float(ks[max(n // 2 - 1, 0)])
    if L < 0 or n / 2 - L <= 0:
        return False
    return float(ks[0]) / k_med <= (n / 2 - L) / L


def estimate_public_k(
    pop: Population,
    budget: PrivacyBudget,
    beta: float,
    config: EstimatorConfig,
    rng: RandomSource | np.random.Generator,
) -> EstimateReport:
    """Realizable user-level DP estimator when sample counts are public.

    Initial mean from the bottom decile, initial variance from the top-L
    users, then capped inverse-variance weights over the middle group with
    clamping intervals widened by the initial-mean accuracy radius alpha, and
    Laplace noise scaled to the largest weight-times-width.  Parallel
    composition across the three disjoint cohorts keeps the total privacy
    cost at (epsilon, delta).
    """
    gen = as_generator(rng)
    n = pop.n
    eps = budget.epsilon
    if config.known_sigma_sq is not None:
        L = config.L if config.L is not None else 0
    else:
        L = config.L if config.L is not None else default_variance_group(n, config, eps)
    lo, hi = _group_bounds(n, L)

    if not check_k_ratio(pop.ks, L):
        warnings.warn(
            "count ratio k_1/k_med exceeds (n/2 - L)/L; the variance "
            "comparability guarantee does not apply",
            ConditionWarning,
            stacklevel=2,
        )
        ratio_ok = False
    else:
        ratio_ok = True

    mean_fn = config.mean_estimator or dp_mean_initial
    init = mean_fn(pop.first_samples(hi, n), eps, beta, gen)
    alpha = config.alpha_override if config.alpha_override is not None else init.alpha

    if config.known_sigma_sq is not None:
        var_res = InitialVarianceResult(
            sigma2_hat=config.known_sigma_sq, k_ref=1
        )
    else:
        if L < 1:
            raise GroupSizeError("variance estimation needs a top group (L >= 1)")
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

    p_c = init.p_initial
    ks_mid = pop.ks[lo:hi]
    sig2 = np.maximum(
        p_c * (1.0 - p_c) / ks_mid + (1.0 - 1.0 / ks_mid) * sigma_p_sq,
        _VARIANCE_FLOOR,
    )
    sig = np.sqrt(sig2)
    radii = _radius_table(
        ks_mid, n, sigma_p_sq, beta, p_c, config.meta_kind, config.half_width_w
    )
    intervals = _interval_arrays(p_c, alpha, radii)
    widths = intervals[:, 1] - intervals[:, 0]

    threshold = optimize_threshold(sig, widths, eps)
    weights = ideal_weights(sig, threshold)
    lam = float(np.max(weights * widths))
    scale = lam / eps
    noise = float(sample_laplace(scale, gen))
    pre_noise, n_clamped = _weighted_clamped_sum(pop.p_hats[lo:hi], weights, intervals)

    plan = WeightPlan(
        weights=weights,
        threshold=threshold,
        sigma_sq=sig2,
        intervals=intervals,
        sensitivity=lam,
        noise_scale=scale,
        index_range=(lo, hi),
    )
    return EstimateReport(
        estimate=pre_noise + noise,
        pre_noise=pre_noise,
        noise=noise,
        plan=plan,
        initial_mean=init,
        initial_variance=var_res,
        noise_scale=scale,
        ptr=PtrOutcome.NOT_APPLICABLE,
        budget_spent=PrivacyBudget(eps, budget.delta),
        clamped_users=n_clamped,
        diagnostics={"k_ratio_condition": ratio_ok, "alpha": alpha, "L": L},
    )
