"""High-probability deviation radii used to size truncation intervals.

Three layers: a binomial tail radius for one user's sample mean around their
own rate, a spread radius for how far n per-user means stray from the
population mean, and their composition bounding how far a k-sample user
estimate strays from the population mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .core import DEFAULT_HALF_WIDTH_W, MetaKind, gaussian_support_ratio

__all__ = [
    "ConcentrationQuery",
    "binomial_tail_radius",
    "meta_tail_radius",
    "user_tail_radius",
    "truncation_interval",
    "EXACT_BINOMIAL_MAX_K",
    "RADIUS_GRID",
]

# Exact CDF inversion is used up to this k; beyond it the closed-form
# Bernstein bound takes over.
EXACT_BINOMIAL_MAX_K = 100_000

# Radii from the exact path are snapped up to this grid (conservative).
RADIUS_GRID = 1e-6


@dataclass(frozen=True)
class ConcentrationQuery:
    """Inputs for a user-estimate deviation radius.

    ``sigma_sq`` is the (true or plugged-in) variance of the per-user means;
    ``p_ref`` is the reference population mean, true or estimated.
    """

    k: int
    n: int
    sigma_sq: float
    beta: float
    p_ref: float

    def __post_init__(self) -> None:
        if self.k < 1 or self.n < 1:
            raise ValueError("k and n must be >= 1")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.sigma_sq < 0:
            raise ValueError("sigma_sq must be nonnegative")
        if not 0.0 <= self.p_ref <= 1.0:
            raise ValueError("p_ref must lie in [0, 1]")


def _snap_up(x: float, grid: float = RADIUS_GRID) -> float:
    """Round up to the grid; never below x (coverage must stay conservative)."""
    snapped = math.ceil(x / grid - 1e-9) * grid
    if snapped < x:
        snapped += grid
    return snapped


def binomial_tail_radius(k: int, p: float, beta: float) -> float:
    """Smallest deviation radius alpha with Pr(|X/k - p| > alpha) <= beta.

    For k up to EXACT_BINOMIAL_MAX_K this inverts the exact binomial CDF (the
    (1 - beta)-quantile of |X/k - p|, snapped up to a 1e-6 grid); for larger k
    it falls back to the Bernstein bound
    sqrt(2 p (1-p) ln(2/beta) / k) + ln(2/beta) / (3k).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")

    if k > EXACT_BINOMIAL_MAX_K:
        log_term = math.log(2.0 / beta)
        return math.sqrt(2.0 * p * (1.0 - p) * log_term / k) + log_term / (3.0 * k)

    xs = np.arange(k + 1)
    pmf = binom.pmf(xs, k, p)
    dev = np.abs(xs / k - p)
    order = np.argsort(dev, kind="stable")
    cum = np.cumsum(pmf[order])
    # First deviation value whose inclusive CDF reaches 1 - beta.
    idx = int(np.searchsorted(cum, 1.0 - beta - 1e-12, side="left"))
    idx = min(idx, k)
    return _snap_up(float(dev[order][idx]))


def meta_tail_radius(
    kind: MetaKind,
    n: int,
    sigma_sq: float,
    beta: float,
    w: float = DEFAULT_HALF_WIDTH_W,
) -> float:
    """Bound on max_i |p_i - p| over n draws of per-user means.

    Sub-Gaussian tail with a union over the n draws, capped at the support
    half-width implied by the family (per-user means live in a bounded
    interval around p, so the cap always holds).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma_sq < 0:
        raise ValueError("sigma_sq must be nonnegative")
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    kind = MetaKind(kind)
    if kind is MetaKind.POINT_MASS:
        return 0.0
    sub_gaussian = math.sqrt(2.0 * sigma_sq * math.log(2.0 * n / beta))
    if kind is MetaKind.TWO_POINT:
        cap = math.sqrt(sigma_sq)
    elif kind is MetaKind.TRUNCATED_GAUSSIAN:
        cap = math.sqrt(sigma_sq) * gaussian_support_ratio(w)
    else:  # pragma: no cover - MetaKind() above rejects unknown values
        raise ValueError(f"unknown meta kind {kind!r}")
    return min(sub_gaussian, cap)


def user_tail_radius(
    query: ConcentrationQuery,
    kind: MetaKind,
    w: float = DEFAULT_HALF_WIDTH_W,
) -> float:
    """Bound on max_i |p_hat_i - p| for n users each averaging k samples.

    Composes the per-user-mean spread (at budget beta/2) with a binomial tail
    at budget beta/n, evaluated at the variance-maximizing rate p_max.  The
    binomial layer is stated for rates below 1/2; for p_ref above 1/2 the
    bound is applied to the reflected variable 1 - X, which has the same
    deviations and a rate below 1/2.
    """
    spread = meta_tail_radius(kind, query.n, query.sigma_sq, query.beta / 2.0, w)
    p_base = min(query.p_ref, 1.0 - query.p_ref)
    p_max = min(0.5, p_base + spread)
    return spread + binomial_tail_radius(query.k, p_max, query.beta / query.n)


def truncation_interval(
    p_center: float, alpha: float, radius: float
) -> tuple[float, float]:
    """Clamp range [p_center - alpha - radius, p_center + alpha + radius] in [0,1]."""
    if alpha < 0 or radius < 0:
        raise ValueError("alpha and radius must be nonnegative")
    if not 0.0 <= p_center <= 1.0:
        raise ValueError("p_center must lie in [0, 1]")
    lo = max(0.0, p_center - alpha - radius)
    hi = min(1.0, p_center + alpha + radius)
    return lo, hi
