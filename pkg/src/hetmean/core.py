"""Domain types and synthetic population generation.

A population holds n users; user i carries k_i Bernoulli samples drawn with a
per-user success rate p_i, where p_i itself is drawn from a meta-distribution
on [0, 1] with mean ``p`` and variance ``sigma_p**2``.  Users are kept sorted
by descending sample count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np
from scipy.stats import norm

from .rng import RandomSource, as_generator

__all__ = [
    "PrivacyBudget",
    "MetaKind",
    "PointMass",
    "TruncatedGaussian",
    "TwoPoint",
    "MetaDistribution",
    "Constant",
    "PowerLaw",
    "HeavyTail",
    "Explicit",
    "KProfile",
    "UserRecord",
    "Population",
    "PopulationDiagnostics",
    "generate_population",
    "user_mean",
    "variance_of_dk",
    "write_population",
    "read_population",
    "DEFAULT_HALF_WIDTH_W",
]

# Default truncation half-width parameter for the truncated Gaussian, in
# base-scale units.  Must keep the retained mass >= 9/10 and the variance
# deflation factor lambda <= 1/2; W = 2 gives mass ~0.954 and lambda ~0.226.
DEFAULT_HALF_WIDTH_W = 2.0


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) privacy budget.

    Pure mechanisms ignore ``delta``; mechanisms that need delta > 0 reject a
    zero value explicitly.
    """

    epsilon: float
    delta: float = 0.0

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")


class MetaKind(str, Enum):
    """Shape family of the meta-distribution over per-user means."""

    POINT_MASS = "point_mass"
    TRUNCATED_GAUSSIAN = "truncated_gaussian"
    TWO_POINT = "two_point"


def _gaussian_truncation_constants(w: float) -> tuple[float, float]:
    """Return (retained mass gamma, variance deflation lambda) for cut +-w."""
    gamma = norm.cdf(w) - norm.cdf(-w)
    lam = 2.0 * w * norm.pdf(w) / gamma
    return gamma, lam


def gaussian_support_ratio(w: float = DEFAULT_HALF_WIDTH_W) -> float:
    """Support half-width of the truncated Gaussian in units of its std dev."""
    _, lam = _gaussian_truncation_constants(w)
    return w / math.sqrt(1.0 - lam)


@dataclass(frozen=True)
class PointMass:
    """All users share the same mean; sigma_p = 0."""

    p: float

    kind = MetaKind.POINT_MASS

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    @property
    def sigma_p(self) -> float:
        return 0.0

    @property
    def sigma_p2(self) -> float:
        return 0.0

    def support_half_width(self) -> float:
        return 0.0

    def abs_third_central_moment(self) -> float:
        return 0.0

    def sample(self, n: int, rng: RandomSource | np.random.Generator) -> np.ndarray:
        return np.full(n, self.p)


@dataclass(frozen=True)
class TruncatedGaussian:
    """Symmetric truncated Gaussian with exact mean p and variance sigma_p**2.

    The density is proportional to phi((q - p) / s) on [p - s*w, p + s*w]
    where s = sigma_p / sqrt(1 - lambda) and lambda is the variance deflation
    of the truncation, so the truncated variance equals sigma_p**2 exactly.
    Sampling is by rejection from the untruncated Gaussian.
    """

    p: float
    sigma_p: float
    w: float = DEFAULT_HALF_WIDTH_W

    kind = MetaKind.TRUNCATED_GAUSSIAN

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.sigma_p < 0:
            raise ValueError("sigma_p must be nonnegative")
        gamma, lam = _gaussian_truncation_constants(self.w)
        if gamma < 0.9:
            raise ValueError("truncation half-width w retains mass < 9/10")
        if lam > 0.5:
            raise ValueError("truncation half-width w deflates variance by > 1/2")
        if self.sigma_p2 > self.p * (1.0 - self.p) + 1e-15:
            raise ValueError("sigma_p**2 may not exceed p*(1-p)")
        hw = self.support_half_width()
        if self.p - hw < -1e-12 or self.p + hw > 1.0 + 1e-12:
            raise ValueError("support extends outside [0, 1]; shrink sigma_p or w")

    @property
    def sigma_p2(self) -> float:
        return self.sigma_p**2

    def _base_scale(self) -> float:
        _, lam = _gaussian_truncation_constants(self.w)
        return self.sigma_p / math.sqrt(1.0 - lam)

    def support_half_width(self) -> float:
        return self._base_scale() * self.w

    def abs_third_central_moment(self) -> float:
        # E|X - p|^3 = s^3 * (2/gamma) * int_0^w t^3 phi(t) dt, with the
        # antiderivative -phi(t) (t^2 + 2).
        gamma, _ = _gaussian_truncation_constants(self.w)
        s = self._base_scale()
        integral = 2.0 * norm.pdf(0.0) - norm.pdf(self.w) * (self.w**2 + 2.0)
        return s**3 * 2.0 * integral / gamma

    def sample(self, n: int, rng: RandomSource | np.random.Generator) -> np.ndarray:
        gen = as_generator(rng)
        if self.sigma_p == 0.0:
            return np.full(n, self.p)
        s = self._base_scale()
        out = np.empty(n)
        filled = 0
        while filled < n:
            need = n - filled
            # Acceptance rate is gamma >= 0.9; modest oversampling avoids loops.
            draw = gen.normal(self.p, s, size=int(need * 1.2) + 8)
            keep = draw[np.abs(draw - self.p) <= s * self.w]
            take = min(need, keep.size)
            out[filled : filled + take] = keep[:take]
            filled += take
        return out


@dataclass(frozen=True)
class TwoPoint:
    """Equal mass at p - sigma_p and p + sigma_p (exact mean and variance)."""

    p: float
    sigma_p: float

    kind = MetaKind.TWO_POINT

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.sigma_p < 0:
            raise ValueError("sigma_p must be nonnegative")
        if self.p - self.sigma_p < -1e-12 or self.p + self.sigma_p > 1.0 + 1e-12:
            raise ValueError("support extends outside [0, 1]")

    @property
    def sigma_p2(self) -> float:
        return self.sigma_p**2

    def support_half_width(self) -> float:
        return self.sigma_p

    def abs_third_central_moment(self) -> float:
        return self.sigma_p**3

    def sample(self, n: int, rng: RandomSource | np.random.Generator) -> np.ndarray:
        gen = as_generator(rng)
        signs = np.where(gen.random(n) < 0.5, -1.0, 1.0)
        return self.p + signs * self.sigma_p


MetaDistribution = PointMass | TruncatedGaussian | TwoPoint


@dataclass(frozen=True)
class Constant:
    """Every user holds exactly K samples."""

    K: int

    def counts(self, n: int) -> np.ndarray:
        if self.K < 1:
            raise ValueError("K must be >= 1")
        return np.full(n, self.K, dtype=np.int64)


@dataclass(frozen=True)
class PowerLaw:
    """k_i = ceil(n / i): a heavy head of data-rich users, long tail of singles."""

    def counts(self, n: int) -> np.ndarray:
        idx = np.arange(1, n + 1, dtype=np.int64)
        return -(-n // idx)  # ceil division


@dataclass(frozen=True)
class HeavyTail:
    """floor(sqrt(n)) users hold n samples each; everyone else holds one."""

    def counts(self, n: int) -> np.ndarray:
        heavy = int(math.isqrt(n))
        ks = np.ones(n, dtype=np.int64)
        ks[:heavy] = n
        return ks


@dataclass(frozen=True)
class Explicit:
    """Caller-supplied sample counts."""

    ks: tuple[int, ...]

    def counts(self, n: int) -> np.ndarray:
        if len(self.ks) != n:
            raise ValueError(f"explicit profile has {len(self.ks)} counts, need {n}")
        arr = np.asarray(self.ks, dtype=np.int64)
        if (arr < 1).any():
            raise ValueError("all sample counts must be >= 1")
        return arr.copy()


KProfile = Constant | PowerLaw | HeavyTail | Explicit


@dataclass(frozen=True)
class UserRecord:
    """One user's raw data: k binary samples and their mean."""

    k: int
    samples: np.ndarray
    p_hat: float

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if len(self.samples) != self.k:
            raise ValueError("samples length must equal k")


def user_mean(record: UserRecord) -> float:
    """Exact mean of the user's samples."""
    return float(np.asarray(record.samples, dtype=np.int64).sum()) / record.k


@dataclass(frozen=True)
class PopulationDiagnostics:
    """True per-user means, kept out of the estimator-facing view.

    Estimators must never read this; tests enforce that by swapping in a
    poisoned object and re-running the estimation paths.
    """

    true_means: np.ndarray


@dataclass(frozen=True)
class Population:
    """Users sorted by descending sample count, with flat sample storage."""

    ks: np.ndarray  # int64, descending
    p_hats: np.ndarray  # float64, p_hats[i] == samples of user i averaged
    offsets: np.ndarray  # start index of user i's samples in ``samples``
    samples: np.ndarray  # uint8 bits, concatenated in user order
    diagnostics: PopulationDiagnostics | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if len(self.ks) < 1:
            raise ValueError("population must contain at least one user")
        if (np.diff(self.ks) > 0).any():
            raise ValueError("users must be sorted by descending sample count")
        if (self.ks < 1).any():
            raise ValueError("all sample counts must be >= 1")

    @property
    def n(self) -> int:
        return len(self.ks)

    def user(self, i: int) -> UserRecord:
        lo = int(self.offsets[i])
        hi = lo + int(self.ks[i])
        return UserRecord(
            k=int(self.ks[i]), samples=self.samples[lo:hi], p_hat=float(self.p_hats[i])
        )

    @property
    def users(self) -> Iterator[UserRecord]:
        return (self.user(i) for i in range(self.n))

    def first_samples(self, start: int, stop: int) -> np.ndarray:
        """x_i^1 for users in [start, stop): one bit per user."""
        return self.samples[self.offsets[start:stop]].astype(np.int64)

    def common_k_means(self, stop: int, k: int) -> np.ndarray:
        """Means of the first k samples for users [0, stop).

        Requires k <= k_i for each of those users (they are the data-richest).
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if stop < 1 or stop > self.n:
            raise ValueError("stop out of range")
        if int(self.ks[stop - 1]) < k:
            raise ValueError("a selected user holds fewer than k samples")
        starts = self.offsets[:stop]
        bounds = np.empty(2 * stop, dtype=np.int64)
        bounds[0::2] = starts
        bounds[1::2] = starts + k
        sums = np.add.reduceat(self.samples.astype(np.int64), bounds)[0::2]
        return sums / k


def generate_population(
    meta: MetaDistribution,
    profile: KProfile,
    n: int,
    rng: RandomSource | np.random.Generator,
) -> Population:
    """Draw a synthetic population: p_i ~ meta, samples ~ Bernoulli(p_i) i.i.d.

    Sample counts come from the profile and are sorted descending before
    per-user means are drawn, so k_i and p_i are independent.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = as_generator(rng)
    ks = np.sort(profile.counts(n))[::-1].copy()
    true_means = meta.sample(n, gen)
    total = int(ks.sum())
    offsets = np.zeros(n, dtype=np.int64)
    np.cumsum(ks[:-1], out=offsets[1:])
    thresholds = np.repeat(true_means, ks)
    samples = (gen.random(total) < thresholds).astype(np.uint8)
    sums = np.add.reduceat(samples.astype(np.int64), offsets)
    p_hats = sums / ks
    return Population(
        ks=ks,
        p_hats=p_hats,
        offsets=offsets,
        samples=samples,
        diagnostics=PopulationDiagnostics(true_means=true_means),
    )


def variance_of_dk(p: float, sigma_p2: float, k: int) -> float:
    """Variance of a k-sample user mean: p(1-p)/k + (1 - 1/k) * sigma_p**2."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if sigma_p2 < 0:
        raise ValueError("sigma_p2 must be nonnegative")
    if sigma_p2 > p * (1.0 - p) + 1e-15:
        raise ValueError("sigma_p2 may not exceed p*(1-p) for support in [0, 1]")
    if k < 1:
        raise ValueError("k must be >= 1")
    return p * (1.0 - p) / k + (1.0 - 1.0 / k) * sigma_p2


def write_population(pop: Population, path) -> None:
    """Serialize as a header line ``n=<n>`` then one ``k,bit,bit,...`` per user."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"n={pop.n}\n")
        for i in range(pop.n):
            rec = pop.user(i)
            bits = ",".join(str(int(b)) for b in rec.samples)
            fh.write(f"{rec.k},{bits}\n")


def read_population(path) -> Population:
    """Inverse of write_population; validates counts and ordering."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if not header.startswith("n="):
            raise ValueError("missing population header line")
        n = int(header[2:])
        ks = np.empty(n, dtype=np.int64)
        sample_chunks: list[np.ndarray] = []
        for i in range(n):
            line = fh.readline().strip()
            if not line:
                raise ValueError(f"expected {n} user records, found {i}")
            parts = line.split(",")
            k = int(parts[0])
            bits = np.asarray(parts[1:], dtype=np.uint8)
            if len(bits) != k:
                raise ValueError(f"user {i}: {len(bits)} bits but k={k}")
            ks[i] = k
            sample_chunks.append(bits)
    samples = np.concatenate(sample_chunks) if sample_chunks else np.empty(0, np.uint8)
    offsets = np.zeros(n, dtype=np.int64)
    np.cumsum(ks[:-1], out=offsets[1:])
    sums = np.add.reduceat(samples.astype(np.int64), offsets) if n else np.empty(0)
    return Population(ks=ks, p_hats=sums / ks, offsets=offsets, samples=samples)
