"""Latency profiling and equal-count tier assignment."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from tierfl.errors import ConfigError, DomainError


def stable_mean(values: Sequence[float]) -> float:
    """Mean taken as a shift from the first value; exact when all values are equal."""
    if len(values) == 0:
        raise DomainError("mean of an empty sequence")
    base = values[0]
    return base + math.fsum(v - base for v in values) / len(values)


@dataclass
class ProfileTable:
    accumulated_latency: dict[int, float]
    sync_rounds: int
    t_max: float
    dropouts: frozenset[int] = frozenset()
    per_round: dict[int, list[float]] = field(default_factory=dict, repr=False)

    @property
    def saturation(self) -> float:
        return self.sync_rounds * self.t_max

    def mean_latency(self, client: int) -> float:
        rounds = self.per_round.get(client)
        if rounds:
            return stable_mean(rounds)
        return self.accumulated_latency[client] / self.sync_rounds

    def active(self) -> list[int]:
        return sorted(c for c in self.accumulated_latency if c not in self.dropouts)


def profile_clients(
    clients: Iterable[int],
    sync_rounds: int,
    t_max: float,
    latency_fn: Callable[[int, int], float],
) -> ProfileTable:
    """Run ``sync_rounds`` timed profiling rounds.

    ``latency_fn(client, round)`` gives the true latency. Each round adds
    ``min(latency, t_max)``; clients that reach ``sync_rounds * t_max`` are
    dropouts. Profiling only measures; it never trains.
    """
    clients = sorted(int(c) for c in clients)
    if not clients:
        raise DomainError("cannot profile an empty client set")
    if sync_rounds < 1:
        raise ConfigError("tiering.sync_rounds", "must be >= 1")
    if not t_max > 0:
        raise ConfigError("tiering.t_max", "must be > 0")
    per_round = {c: [] for c in clients}
    for r in range(sync_rounds):
        for c in clients:
            per_round[c].append(min(float(latency_fn(c, r)), t_max))
    acc = {c: math.fsum(v) for c, v in per_round.items()}
    saturation = sync_rounds * t_max
    dropouts = frozenset(c for c, total in acc.items() if total >= saturation)
    return ProfileTable(acc, sync_rounds, t_max, dropouts, per_round)


@dataclass
class TierTable:
    assignment: dict[int, int]
    avg_latency: dict[int, float]
    m: int
    dropouts: frozenset[int] = frozenset()

    def members(self, tier: int) -> list[int]:
        return sorted(c for c, t in self.assignment.items() if t == tier)

    def sizes(self) -> dict[int, int]:
        return {t: len(self.members(t)) for t in range(1, self.m + 1)}

    def latencies(self) -> list[float]:
        return [self.avg_latency[t] for t in range(1, self.m + 1)]

    def pool(self) -> list[int]:
        return sorted(self.assignment)

    def check_sizes(self, c_count: int, tiers: Iterable[int] | None = None) -> None:
        for t in range(1, self.m + 1) if tiers is None else tiers:
            n = len(self.members(t))
            if n < c_count:
                raise ConfigError("tiering.m", f"tier {t} has {n} clients, fewer than clients_per_round={c_count}")

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "assignment": {str(c): t for c, t in sorted(self.assignment.items())},
            "avg_latency_s": {str(t): self.avg_latency[t] for t in range(1, self.m + 1)},
            "sizes": {str(t): n for t, n in self.sizes().items()},
            "dropouts": sorted(self.dropouts),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    @classmethod
    def from_json(cls, data: Mapping) -> "TierTable":
        return cls(
            assignment={int(c): int(t) for c, t in data["assignment"].items()},
            avg_latency={int(t): float(v) for t, v in data["avg_latency_s"].items()},
            m=int(data["m"]),
            dropouts=frozenset(int(c) for c in data.get("dropouts", [])),
        )


def assign_tiers(profile: ProfileTable, m: int) -> TierTable:
    """Sort active clients by accumulated latency (ties by id) and cut into ``m`` near-equal groups."""
    if m < 1:
        raise ConfigError("tiering.m", "must be >= 1")
    active = profile.active()
    if len(active) < m:
        raise ConfigError("tiering.m", f"{len(active)} non-dropout clients cannot fill {m} tiers")
    ranked = sorted(active, key=lambda c: (profile.accumulated_latency[c], c))
    assignment = {}
    avg = {}
    for t, group in enumerate(np.array_split(np.array(ranked), m), start=1):
        group = [int(c) for c in group]
        for c in group:
            assignment[c] = t
        avg[t] = stable_mean([profile.mean_latency(c) for c in group])
    return TierTable(assignment, avg, m, profile.dropouts)


def retier(profile: ProfileTable, m: int) -> TierTable:
    """Re-run tiering on a fresh profile (periodic re-profiling)."""
    return assign_tiers(profile, m)
