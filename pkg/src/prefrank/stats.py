"""Confidence intervals, stopping limits, budget planning, and post-hoc tests.

Everything here is a pure function of its arguments. Judgments on a pair are
Bernoulli trials; win counts are binomial. Two interval families are used:

* ``anytime_interval`` -- conservative interval that stays valid at every
  sample size simultaneously (union bound over the whole evaluation history),
  used for early stopping.
* ``hoeffding_interval`` -- fixed-sample-size interval, used to derive the
  per-pair judgment cap and to report final accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class InfeasibleBudgetError(ValueError):
    """Budget too small for any tolerance in (0, 0.5] to fit the worst case."""


@dataclass(frozen=True)
class Accuracy:
    """Target accuracy of a winner decision: tolerance bias and error probability."""

    epsilon: float
    delta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon <= 0.5:
            raise ValueError(f"epsilon must be in (0, 0.5], got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class PairTally:
    """Judgment counts for one oriented pair: wins of the left element."""

    wins: int
    received: int

    def __post_init__(self) -> None:
        if self.received < 0 or self.wins < 0:
            raise ValueError("counts must be non-negative")
        if self.wins > self.received:
            raise ValueError(f"wins ({self.wins}) exceed received ({self.received})")

    @property
    def win_rate(self) -> float:
        """Empirical win rate of the left element; 1/2 before any judgment."""
        if self.received == 0:
            return 0.5
        return self.wins / self.received


@dataclass(frozen=True)
class ComplexityBounds:
    """Min and max number of distinct pairs a merge ranking can compare."""

    lower: int
    upper: int

    def __post_init__(self) -> None:
        if self.lower > self.upper:
            raise ValueError("lower bound exceeds upper bound")


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")


def anytime_interval(received: int, delta: float) -> float:
    """Confidence radius valid uniformly over all sample sizes up to `received`.

    Returns 1/2 when no judgment has been received yet. Note the raw value
    exceeds 1/2 for small positive counts; callers that need a radius on a
    probability scale should cap it themselves.
    """
    _check_delta(delta)
    if received < 0:
        raise ValueError("received must be non-negative")
    if received == 0:
        return 0.5
    return math.sqrt(math.log(4.0 * received * received / delta) / (2.0 * received))


def hoeffding_interval(received: int, delta: float) -> float:
    """Fixed-sample confidence radius for a Bernoulli mean at level 1 - delta."""
    _check_delta(delta)
    if received < 1:
        raise ValueError("received must be positive for a fixed-sample interval")
    return math.sqrt(math.log(2.0 / delta) / (2.0 * received))


def error_bias(interval: float, win_rate: float) -> float:
    """Interval radius minus the decision margin |win_rate - 1/2|.

    Non-positive values mean the interval has cleared the decision boundary;
    a winner call at that point carries at most the interval's error mass.
    """
    if interval < 0.0:
        raise ValueError("interval must be non-negative")
    if not 0.0 <= win_rate <= 1.0:
        raise ValueError(f"win_rate must be in [0, 1], got {win_rate}")
    return interval - abs(win_rate - 0.5)


def max_comparisons(accuracy: Accuracy) -> int:
    """Judgment cap per pair that still guarantees the accuracy at a dead tie.

    Ceiling of the real-valued bound: the cap is an integer judgment count and
    must not undershoot the guarantee.
    """
    e, d = accuracy.epsilon, accuracy.delta
    return math.ceil(math.log(2.0 / d) / (2.0 * e * e))


def sort_complexity_bounds(n: int) -> ComplexityBounds:
    """Best/worst number of distinct pairs a merge sort compares ranking n items.

    Both follow the halving recursion with base 0 at a single item; the best
    case adds floor(n/2) comparisons per merge, the worst adds n - 1. For n a
    power of two these close to (n/2)*log2(n) and n*log2(n) - n + 1.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    lower: dict[int, int] = {1: 0}
    upper: dict[int, int] = {1: 0}

    def lo(k: int) -> int:
        if k not in lower:
            lower[k] = lo((k + 1) // 2) + lo(k // 2) + k // 2
        return lower[k]

    def hi(k: int) -> int:
        if k not in upper:
            upper[k] = hi((k + 1) // 2) + hi(k // 2) + k - 1
        return upper[k]

    return ComplexityBounds(lower=lo(n), upper=hi(n))


def plan_epsilon(budget: int, n: int, delta: float) -> float:
    """Smallest tolerance bias whose worst-case judgment volume fits the budget.

    The worst case is max_comparisons * (worst pair count); the smallest
    feasible epsilon therefore targets the largest per-pair cap the budget can
    afford. The float result is nudged upward minimally so that the integer
    ceiling in max_comparisons cannot overshoot the budget.

    Raises InfeasibleBudgetError when no epsilon in (0, 0.5] fits.
    """
    _check_delta(delta)
    if n < 2:
        raise ValueError("planning needs at least 2 targets")
    upper = sort_complexity_bounds(n).upper
    if max_comparisons(Accuracy(0.5, delta)) * upper > budget:
        raise InfeasibleBudgetError(
            f"budget {budget} cannot cover {upper} pairs at any epsilon <= 0.5"
        )
    cap = budget // upper
    epsilon = math.sqrt(math.log(2.0 / delta) / (2.0 * cap))
    while max_comparisons(Accuracy(min(epsilon, 0.5), delta)) * upper > budget:
        epsilon = math.nextafter(epsilon, 1.0)
    return min(epsilon, 0.5)


def _binomial_tail_ge(k: int, n: int) -> float:
    """P[X >= k] for X ~ Binomial(n, 1/2).

    Exact integer arithmetic for small n; log-space summation beyond, where
    big-integer binomials get expensive and float error (~1e-13) is irrelevant.
    """
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    if n <= 200:
        total = sum(math.comb(n, i) for i in range(k, n + 1))
        return total / (1 << n)
    log_half = n * math.log(0.5)
    logs = [
        math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1) + log_half
        for i in range(k, n + 1)
    ]
    m = max(logs)
    return math.exp(m) * sum(math.exp(v - m) for v in logs)


def binomial_test_one_sided(tally: PairTally) -> float:
    """One-sided exact binomial p-value against a fair coin.

    The tail direction follows the observed deviation: win rates at or above
    1/2 test P[X >= wins], below 1/2 test P[X <= wins]. Callers declare
    significance (conventionally at p < 0.05).
    """
    if tally.received < 1:
        raise ValueError("binomial test needs at least one judgment")
    if tally.win_rate >= 0.5:
        return _binomial_tail_ge(tally.wins, tally.received)
    return 1.0 - _binomial_tail_ge(tally.wins + 1, tally.received)


def _log_binom_cdf_terms(n: int) -> list[float]:
    return [math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1) for k in range(n + 1)]


def _binom_cdf(k: int, n: int, p: float, log_coef: list[float]) -> float:
    """P[X <= k] for X ~ Binomial(n, p), computed in log space for stability."""
    if p <= 0.0:
        return 1.0
    if p >= 1.0:
        return 0.0 if k < n else 1.0
    lp, lq = math.log(p), math.log1p(-p)
    logs = [log_coef[i] + i * lp + (n - i) * lq for i in range(k + 1)]
    m = max(logs)
    return math.exp(m) * sum(math.exp(v - m) for v in logs)


def clopper_pearson(tally: PairTally, confidence: float) -> tuple[float, float]:
    """Exact binomial confidence interval with alpha/2 mass in each tail.

    Endpoints are found by bisecting the exact binomial CDF; boundary counts
    pin the corresponding endpoint to 0 or 1. Accurate to better than 1e-6.
    """
    if tally.received < 1:
        raise ValueError("interval needs at least one judgment")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    w, n = tally.wins, tally.received
    half_alpha = (1.0 - confidence) / 2.0
    log_coef = _log_binom_cdf_terms(n)

    def bisect(f, lo: float, hi: float) -> float:
        # f is monotone with f(lo) <= 0 <= f(hi); returns the crossing point.
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if f(mid) <= 0.0:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    if w == 0:
        lower = 0.0
    else:
        # P[X >= w | p] grows in p; find p where it equals alpha/2.
        lower = bisect(lambda p: (1.0 - _binom_cdf(w - 1, n, p, log_coef)) - half_alpha, 0.0, 1.0)
    if w == n:
        upper = 1.0
    else:
        # P[X <= w | p] shrinks in p; crossing expressed as half_alpha - cdf.
        upper = bisect(lambda p: half_alpha - _binom_cdf(w, n, p, log_coef), 0.0, 1.0)
    return lower, upper
