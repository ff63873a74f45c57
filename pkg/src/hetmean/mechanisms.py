"""Reusable differential-privacy primitives.

Each mechanism carries an explicit neighbouring relation through its
SensitivityBound argument, draws noise by inverse-CDF sampling from the shared
random stream (for reproducibility), and records the scale it used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .core import PrivacyBudget
from .rng import RandomSource, as_generator

__all__ = [
    "NeighbourRelation",
    "SensitivityKind",
    "SensitivityBound",
    "LaplaceRelease",
    "sample_laplace",
    "laplace_mechanism",
    "IntervalBins",
    "GeometricBins",
    "HistogramResult",
    "dp_histogram",
    "order_statistic_intervals",
    "private_order_statistic",
    "PtrOutcome",
    "PtrResult",
    "propose_test_release",
]


class NeighbourRelation(Enum):
    EVENT_LEVEL = "event_level"
    USER_LEVEL_PUBLIC_SIZE = "user_level_public_size"
    USER_LEVEL_PRIVATE_K = "user_level_private_k"


class SensitivityKind(Enum):
    GLOBAL = "global"
    LOCAL_PROPOSED = "local_proposed"


@dataclass(frozen=True)
class SensitivityBound:
    """A sensitivity value tied to the neighbouring relation it was derived under."""

    value: float
    relation: NeighbourRelation
    kind: SensitivityKind = SensitivityKind.GLOBAL

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError("sensitivity must be nonnegative")


def sample_laplace(scale: float, gen: np.random.Generator, size=None) -> np.ndarray:
    """Laplace(0, scale) via inverse CDF on a uniform draw."""
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    u = gen.random(size) - 0.5
    if scale == 0.0:
        return np.zeros_like(u) if size is not None else 0.0 * u
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


@dataclass(frozen=True)
class LaplaceRelease:
    """Noisy value plus the exact noise scale that produced it."""

    value: float
    scale: float
    noise: float


def laplace_mechanism(
    value: float,
    sensitivity: SensitivityBound,
    epsilon: float,
    rng: RandomSource | np.random.Generator,
) -> LaplaceRelease:
    """Release value + Laplace(sensitivity / epsilon)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if sensitivity.kind is not SensitivityKind.GLOBAL:
        raise ValueError("laplace_mechanism requires a global sensitivity bound")
    gen = as_generator(rng)
    scale = sensitivity.value / epsilon
    noise = float(sample_laplace(scale, gen))
    return LaplaceRelease(value=value + noise, scale=scale, noise=noise)


@dataclass(frozen=True)
class IntervalBins:
    """A finite list of disjoint half-open bins (lo, hi]."""

    bins: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        ordered = sorted(self.bins)
        for (lo, hi) in ordered:
            if not lo < hi:
                raise ValueError("each bin needs lo < hi")
        for (_, hi), (lo, _) in zip(ordered, ordered[1:]):
            if lo < hi:
                raise ValueError("bins must be disjoint")

    @property
    def finite(self) -> bool:
        return True

    def keys(self) -> list[int]:
        return list(range(len(self.bins)))

    def index(self, values: np.ndarray) -> np.ndarray:
        out = np.full(len(values), -1, dtype=np.int64)
        for j, (lo, hi) in enumerate(self.bins):
            out[(values > lo) & (values <= hi)] = j
        return out


@dataclass(frozen=True)
class GeometricBins:
    """Bins (base**j, base**(j+1)] keyed by integer exponent j.

    With both exponent bounds given the family is finite; otherwise it is
    unbounded and only the stability histogram path can be used.
    """

    j_min: int | None = None
    j_max: int | None = None
    base: float = 2.0

    def __post_init__(self) -> None:
        if self.base <= 1.0:
            raise ValueError("base must exceed 1")
        if self.j_min is not None and self.j_max is not None and self.j_min > self.j_max:
            raise ValueError("j_min must not exceed j_max")

    @property
    def finite(self) -> bool:
        return self.j_min is not None and self.j_max is not None

    def keys(self) -> list[int]:
        if not self.finite:
            raise ValueError("unbounded bin family has no finite key list")
        return list(range(self.j_min, self.j_max + 1))

    def index(self, values: np.ndarray) -> np.ndarray:
        out = np.full(len(values), np.iinfo(np.int64).min, dtype=np.int64)
        pos = values > 0
        with np.errstate(divide="ignore"):
            j = np.floor(np.log(values[pos]) / math.log(self.base)).astype(np.int64)
        # Left-open bins: a value exactly at a bin edge base**m belongs to bin m-1.
        edge = np.isclose(values[pos], np.power(self.base, j.astype(float) + 1.0))
        j = np.where(edge, j + 1, j)
        at_edge = np.isclose(values[pos], np.power(self.base, j.astype(float)))
        j = np.where(at_edge, j - 1, j)
        out[pos] = j
        lo = -(2**62) if self.j_min is None else self.j_min
        hi = 2**62 if self.j_max is None else self.j_max
        out[(out < lo) | (out > hi)] = np.iinfo(np.int64).min
        return out


@dataclass(frozen=True)
class HistogramResult:
    noisy_counts: dict
    noisy_probs: dict
    argmax_bin: object | None
    n: int


def dp_histogram(
    values: Sequence[float],
    bins: IntervalBins | GeometricBins,
    budget: PrivacyBudget,
    rng: RandomSource | np.random.Generator,
    path: str = "stability",
) -> HistogramResult:
    """Noisy histogram counts plus the argmax bin.

    ``path="laplace"`` adds Laplace(2/epsilon) to every bin of a finite family
    (pure epsilon-DP).  ``path="stability"`` adds the same noise to occupied
    bins only and suppresses noisy counts below 1 + 2 ln(2/delta) / epsilon,
    which allows unbounded bin families at the cost of delta > 0.  A value
    swap moves two bin counts by one each, hence the scale 2/epsilon.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("histogram needs at least one value")
    gen = as_generator(rng)
    scale = 2.0 / budget.epsilon
    idx = bins.index(arr)
    sentinel = np.iinfo(np.int64).min

    if path == "laplace":
        if not bins.finite:
            raise ValueError("laplace path requires a finite bin family")
        keys = bins.keys()
        counts = {key: 0 for key in keys}
        valid = idx != sentinel if isinstance(bins, GeometricBins) else idx >= 0
        uniq, cnt = np.unique(idx[valid], return_counts=True)
        for key, c in zip(uniq.tolist(), cnt.tolist()):
            counts[key] = int(c)
        noise = sample_laplace(scale, gen, size=len(keys))
        noisy = {key: counts[key] + float(z) for key, z in zip(keys, noise)}
    elif path == "stability":
        if budget.delta <= 0:
            raise ValueError("stability histogram requires delta > 0")
        valid = idx != sentinel if isinstance(bins, GeometricBins) else idx >= 0
        uniq, cnt = np.unique(idx[valid], return_counts=True)
        threshold = 1.0 + 2.0 * math.log(2.0 / budget.delta) / budget.epsilon
        noise = sample_laplace(scale, gen, size=len(uniq))
        noisy = {}
        for key, c, z in zip(uniq.tolist(), cnt.tolist(), np.atleast_1d(noise)):
            val = c + float(z)
            if val >= threshold:
                noisy[key] = val
    else:
        raise ValueError(f"unknown histogram path {path!r}")

    argmax = max(noisy, key=noisy.get) if noisy else None
    probs = {key: val / arr.size for key, val in noisy.items()}
    return HistogramResult(
        noisy_counts=noisy, noisy_probs=probs, argmax_bin=argmax, n=int(arr.size)
    )


def order_statistic_intervals(
    counts: Sequence[int], rank: int, k_max: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Collapse {1..k_max} into maximal intervals of constant rank.

    Returns (lows, highs, utilities) where rank(k) = #{i : k_i >= k} is
    constant on each [low, high] and utility = -|rank(k) - rank|.
    """
    ks = np.asarray(counts, dtype=np.int64)
    n = ks.size
    if n == 0:
        raise ValueError("counts must be nonempty")
    if not 1 <= rank <= n:
        raise ValueError("rank must lie in [1, n]")
    if (ks < 1).any():
        raise ValueError("all counts must be >= 1")
    if (ks > k_max).any():
        raise ValueError("all counts must be <= k_max")
    ks_sorted = np.sort(ks)
    distinct = np.unique(ks_sorted)
    lows, highs, ranks = [], [], []
    lo = 1
    for d in distinct.tolist():
        # On (previous distinct, d] the count of users with k_i >= k equals
        # the count of users with k_i >= d.
        lows.append(lo)
        highs.append(d)
        ranks.append(n - int(np.searchsorted(ks_sorted, d, side="left")))
        lo = d + 1
    if lo <= k_max:
        lows.append(lo)
        highs.append(k_max)
        ranks.append(0)
    utilities = -np.abs(np.asarray(ranks, dtype=float) - rank)
    return np.asarray(lows), np.asarray(highs), utilities


def private_order_statistic(
    counts: Sequence[int],
    rank: int,
    k_max: int,
    epsilon: float,
    rng: RandomSource | np.random.Generator,
) -> int:
    """Exponential-mechanism estimate of the rank-th largest count.

    Samples k in {1..k_max} with probability proportional to
    exp(-(epsilon/2) * |#{i: k_i >= k} - rank|); the rank utility has
    sensitivity 1 under a single-user change.  Sampling collapses the integer
    domain to intervals of constant rank, weighting each by its width.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    gen = as_generator(rng)
    lows, highs, utilities = order_statistic_intervals(counts, rank, k_max)
    widths = (highs - lows + 1).astype(float)
    log_weights = np.log(widths) + 0.5 * epsilon * utilities
    log_weights -= log_weights.max()
    probs = np.exp(log_weights)
    probs /= probs.sum()
    total = float(probs.sum())
    if abs(total - 1.0) > 1e-12:  # pragma: no cover - normalized directly above
        raise AssertionError("interval probabilities failed to normalize")
    j = int(gen.choice(len(probs), p=probs))
    return int(gen.integers(lows[j], highs[j] + 1))


class PtrOutcome(Enum):
    NOT_APPLICABLE = "not_applicable"
    RELEASED = "released"
    FALLBACK = "fallback"


@dataclass(frozen=True)
class PtrResult:
    outcome: PtrOutcome
    value: float | None
    kappa_star: float
    kappa_tilde: float
    threshold: float
    noise_scale: float


def propose_test_release(
    dataset,
    core: Callable[[object], float],
    proposed: SensitivityBound,
    distance_fn: Callable[[object, float], float],
    budget: PrivacyBudget,
    rng: RandomSource | np.random.Generator,
) -> PtrResult:
    """Propose-test-release around a deterministic core statistic.

    ``distance_fn(dataset, bound)`` must return a certified lower bound on the
    largest kappa such that every kappa-neighbour of the dataset has local
    sensitivity at most ``proposed.value`` (math.inf means the bound holds
    everywhere).  The test adds Laplace(1/epsilon) to that distance and falls
    back when the noisy distance is below ln(1/delta)/epsilon; otherwise the
    core value is released with Laplace(proposed/epsilon) noise.
    """
    if budget.delta <= 0:
        raise ValueError("propose-test-release requires delta > 0")
    if proposed.kind is not SensitivityKind.LOCAL_PROPOSED:
        raise ValueError("PTR consumes a LOCAL_PROPOSED sensitivity bound")
    gen = as_generator(rng)
    threshold = math.log(1.0 / budget.delta) / budget.epsilon
    kappa_star = float(distance_fn(dataset, proposed.value))
    if math.isinf(kappa_star):
        kappa_tilde = math.inf
    else:
        kappa_tilde = kappa_star + float(sample_laplace(1.0 / budget.epsilon, gen))
    noise_scale = proposed.value / budget.epsilon
    if kappa_tilde < threshold:
        return PtrResult(
            outcome=PtrOutcome.FALLBACK,
            value=None,
            kappa_star=kappa_star,
            kappa_tilde=kappa_tilde,
            threshold=threshold,
            noise_scale=noise_scale,
        )
    value = core(dataset) + float(sample_laplace(noise_scale, gen))
    return PtrResult(
        outcome=PtrOutcome.RELEASED,
        value=value,
        kappa_star=kappa_star,
        kappa_tilde=kappa_tilde,
        threshold=threshold,
        noise_scale=noise_scale,
    )
