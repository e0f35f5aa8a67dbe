"""Client selection: vanilla random, static tier probabilities, adaptive credits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from tierfl.errors import ConfigError, DomainError
from tierfl.tiering import TierTable

PROB_TOL = 1e-9

# Selection probabilities per tier (tier 1 fastest).
PRESETS: dict[str, tuple[float, ...]] = {
    "slow": (0.0, 0.0, 0.0, 0.0, 1.0),
    "uniform": (0.2, 0.2, 0.2, 0.2, 0.2),
    "random": (0.7, 0.1, 0.1, 0.05, 0.05),
    "fast": (1.0, 0.0, 0.0, 0.0, 0.0),
    "fast1": (0.225, 0.225, 0.225, 0.225, 0.1),
    "fast2": (0.2375, 0.2375, 0.2375, 0.2375, 0.05),
    "fast3": (0.25, 0.25, 0.25, 0.25, 0.0),
}
CIFAR_POLICIES = ("vanilla", "slow", "uniform", "random", "fast")
MNIST_POLICIES = ("vanilla", "uniform", "fast1", "fast2", "fast3")


@dataclass(frozen=True)
class Selection:
    tier: int | None
    clients: tuple[int, ...]


@dataclass(frozen=True)
class StaticPolicy:
    tier_probs: tuple[float, ...]
    name: str = "custom"

    def __post_init__(self):
        check_probs(self.tier_probs, "policy.probs")

    @classmethod
    def preset(cls, name: str) -> "StaticPolicy":
        if name not in PRESETS:
            raise ConfigError("policy.name", f"unknown preset {name!r}; known: {sorted(PRESETS)}")
        return cls(PRESETS[name], name)

    def validate(self, table: TierTable, c_count: int) -> None:
        if len(self.tier_probs) != table.m:
            raise ConfigError("policy.probs", f"{len(self.tier_probs)} probabilities for {table.m} tiers")
        table.check_sizes(c_count, [t for t, p in enumerate(self.tier_probs, start=1) if p > 0])


def check_probs(probs: Sequence[float], path: str = "probs") -> None:
    if len(probs) == 0:
        raise ConfigError(path, "empty probability vector")
    if any(not p >= 0 for p in probs):
        raise ConfigError(path, "entries must be non-negative")
    if abs(math.fsum(probs) - 1.0) > PROB_TOL:
        raise ConfigError(path, f"must sum to 1, got {math.fsum(probs)!r}")


def _sample(pool: Sequence[int], c_count: int, rng: np.random.Generator) -> tuple[int, ...]:
    pool = np.asarray(sorted(pool))
    if len(pool) < c_count:
        raise ConfigError("clients_per_round", f"pool of {len(pool)} cannot supply {c_count} clients")
    picked = rng.choice(pool, size=c_count, replace=False)
    return tuple(sorted(int(c) for c in picked))


def _draw_tier(probs: Sequence[float], rng: np.random.Generator) -> int:
    """Draw a 1-based tier index; mass is renormalised first."""
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    # first tier whose cumulative mass exceeds u; zero-mass tiers are skipped
    idx = min(int(np.searchsorted(cdf, u, side="right")), len(probs) - 1)
    while probs[idx] == 0:
        idx -= 1
    return idx + 1


def select_vanilla(pool: Sequence[int], c_count: int, rng: np.random.Generator) -> Selection:
    return Selection(None, _sample(pool, c_count, rng))


def select_static(
    table: TierTable, policy: StaticPolicy, c_count: int, rng: np.random.Generator
) -> Selection:
    tier = _draw_tier(policy.tier_probs, rng)
    return Selection(tier, _sample(table.members(tier), c_count, rng))


def change_probs(tier_accuracies: Sequence[float]) -> tuple[float, ...]:
    """Selection probability proportional to ``1 - accuracy``; uniform if every tier is perfect."""
    miss = [1.0 - a for a in tier_accuracies]
    total = math.fsum(miss)
    if total <= 0:
        return tuple(1.0 / len(miss) for _ in miss)
    return tuple(v / total for v in miss)


def initial_credits(rounds: int, m: int, gamma: float) -> int:
    return math.ceil(gamma * rounds / m)


@dataclass(frozen=True)
class AdaptiveState:
    """Credits and probabilities carried between adaptive rounds.

    ``on_exhaust`` chooses what happens when every tier is out of credits:
    ``"reset"`` restores the initial credits, ``"vanilla"`` falls back to a
    random selection over the whole pool for that round.
    """

    credits: dict[int, int]
    probs: tuple[float, ...]
    interval: int
    initial: dict[int, int]
    last_eval_acc: dict[int, float] = field(default_factory=dict)
    current_tier: int = 1
    on_exhaust: str = "reset"
    resets: int = 0
    fallbacks: int = 0
    updates: int = 0

    @classmethod
    def start(cls, m: int, rounds: int, interval: int, gamma: float = 1.2, on_exhaust: str = "reset"):
        if interval < 1:
            raise ConfigError("policy.interval", "must be >= 1")
        if on_exhaust not in ("reset", "vanilla"):
            raise ConfigError("policy.on_exhaust", "must be 'reset' or 'vanilla'")
        credits = {t: initial_credits(rounds, m, gamma) for t in range(1, m + 1)}
        return cls(
            credits=credits,
            probs=tuple(1.0 / m for _ in range(m)),
            interval=interval,
            initial=dict(credits),
            on_exhaust=on_exhaust,
        )


def adaptive_step(
    state: AdaptiveState,
    round_index: int,
    tier_accuracies: Mapping[int, float] | Sequence[float] | None,
    table: TierTable,
    c_count: int,
    rng: np.random.Generator,
) -> tuple[Selection, AdaptiveState]:
    """One round of adaptive tier selection.

    ``tier_accuracies`` are the latest per-tier accuracies of the global
    model entering this round (tier order). At interval boundaries past the
    first, probabilities are re-derived when the current tier failed to
    improve since the previous boundary. Exactly one credit is spent per
    selection.
    """
    m = table.m
    acc = None
    if tier_accuracies is not None:
        if isinstance(tier_accuracies, Mapping):
            acc = {int(t): float(a) for t, a in tier_accuracies.items()}
        else:
            acc = {t: float(a) for t, a in enumerate(tier_accuracies, start=1)}

    probs = state.probs
    last = dict(state.last_eval_acc)
    updates = state.updates
    if round_index % state.interval == 0 and acc is not None:
        if round_index >= state.interval and state.current_tier in last:
            if acc[state.current_tier] <= last[state.current_tier]:
                probs = change_probs([acc[t] for t in range(1, m + 1)])
                updates += 1
        last = acc

    credits = dict(state.credits)
    resets, fallbacks = state.resets, state.fallbacks
    usable = [t for t in range(1, m + 1) if credits[t] > 0 and len(table.members(t)) >= c_count]
    if not usable:
        if state.on_exhaust == "vanilla":
            selection = select_vanilla(table.pool(), c_count, rng)
            new = replace(state, probs=probs, last_eval_acc=last, updates=updates, fallbacks=fallbacks + 1)
            return selection, new
        credits = dict(state.initial)
        resets += 1
        usable = [t for t in range(1, m + 1) if credits[t] > 0 and len(table.members(t)) >= c_count]
        if not usable:
            raise DomainError("no tier has both credits and enough clients")

    # renormalised draw over credit-positive tiers (same law as redrawing until one has credit)
    gated = [probs[t - 1] if t in usable else 0.0 for t in range(1, m + 1)]
    if math.fsum(gated) <= 0:
        gated = [1.0 if t in usable else 0.0 for t in range(1, m + 1)]
    tier = _draw_tier(gated, rng)
    credits[tier] -= 1
    selection = Selection(tier, _sample(table.members(tier), c_count, rng))
    new = replace(
        state,
        credits=credits,
        probs=probs,
        last_eval_acc=last,
        current_tier=tier,
        resets=resets,
        fallbacks=fallbacks,
        updates=updates,
    )
    return selection, new
