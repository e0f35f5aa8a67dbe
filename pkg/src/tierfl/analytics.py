"""Closed-form calculators: straggler probability, time estimate, MAPE, sampling amplification."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from tierfl.errors import DomainError

EXACT_LIMIT = 64
PRODUCT_LIMIT = 1_000_000


@dataclass(frozen=True)
class StragglerParams:
    k: int
    c: int
    slow: int

    def __post_init__(self):
        if not 1 <= self.c <= self.k:
            raise DomainError(f"need 1 <= c <= k, got c={self.c}, k={self.k}")
        if not 0 <= self.slow <= self.k:
            raise DomainError(f"need 0 <= slow <= k, got slow={self.slow}, k={self.k}")


def straggler_prob(params: StragglerParams) -> float:
    """Probability that a uniform draw of ``c`` out of ``k`` clients hits the slowest level.

    ``1 - C(k - slow, c) / C(k, c)``: exact rationals up to ``k = 64``,
    then a log-space product over the ``c`` factors, then log-gamma.
    """
    k, c, s = params.k, params.c, params.slow
    if s == 0:
        return 0.0
    if c > k - s:
        return 1.0
    if k <= EXACT_LIMIT:
        return float(1 - Fraction(math.comb(k - s, c), math.comb(k, c)))
    if c <= PRODUCT_LIMIT:
        log_ratio = math.fsum(math.log1p(-s / (k - i)) for i in range(c))
    else:
        log_ratio = (
            math.lgamma(k - s + 1) - math.lgamma(k - s - c + 1) - math.lgamma(k + 1) + math.lgamma(k - c + 1)
        )
    return -math.expm1(log_ratio)


def straggler_prob_bound(params: StragglerParams) -> float:
    """Lower bound ``1 - ((k - slow) / k) ** c`` (draws treated as with replacement)."""
    k, c, s = params.k, params.c, params.slow
    if s >= k:
        raise DomainError("bound needs slow < k")
    if s == 0:
        return 0.0
    return -math.expm1(c * math.log1p(-s / k))


def estimate_training_time(tier_latencies: Sequence[float], tier_probs: Sequence[float], rounds: int) -> float:
    """Expected per-round latency under the tier probabilities, times the number of rounds."""
    if len(tier_latencies) != len(tier_probs):
        raise DomainError(f"{len(tier_latencies)} latencies vs {len(tier_probs)} probabilities")
    if abs(math.fsum(tier_probs) - 1.0) > 1e-9:
        raise DomainError("tier probabilities must sum to 1")
    per_round = math.fsum(l * p for l, p in zip(tier_latencies, tier_probs))
    return per_round * rounds


def mape(estimated: float, actual: float) -> float:
    """Absolute percentage error of an estimate."""
    if not actual > 0:
        raise DomainError("actual must be > 0")
    return abs(estimated - actual) / actual * 100.0


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float
    c: int
    k: int
    n_tiers: int
    tier_sizes: tuple[int, ...]
    tier_weights: tuple[float, ...]

    def __post_init__(self):
        if not 0 <= self.delta < 1:
            raise DomainError("delta must lie in [0, 1)")
        if not 1 <= self.c <= self.k:
            raise DomainError("need 1 <= c <= k")
        if len(self.tier_sizes) != self.n_tiers or len(self.tier_weights) != self.n_tiers:
            raise DomainError("tier_sizes and tier_weights need n_tiers entries")
        if any(n <= 0 for n in self.tier_sizes):
            raise DomainError("tier sizes must be positive")
        if any(not w >= 0 for w in self.tier_weights):
            raise DomainError("tier weights must be non-negative")


@dataclass(frozen=True)
class Amplification:
    q_uniform: float
    q_tiers: tuple[float, ...]
    q_max: float
    epsilon: float
    delta: float

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "q_uniform": self.q_uniform,
            "q_tiers": list(self.q_tiers),
            "q_max": self.q_max,
            # the epsilon side is O(q * epsilon) with an unstated constant
            "delta_uniform": self.q_uniform * self.delta,
            "delta_tiered": self.q_max * self.delta,
        }


def privacy_amplification(params: PrivacyParams) -> Amplification:
    """Per-round sampling rates: ``c/k`` for uniform selection, ``(w_j / n_tiers) * c / n_j`` per tier."""
    q_uniform = params.c / params.k
    q = tuple((w / params.n_tiers) * params.c / n for w, n in zip(params.tier_weights, params.tier_sizes))
    bad = [j + 1 for j, v in enumerate(q) if v > 1]
    if bad:
        raise DomainError(f"sampling rate above 1 for tiers {bad}")
    return Amplification(q_uniform, q, max(q), params.epsilon, params.delta)
