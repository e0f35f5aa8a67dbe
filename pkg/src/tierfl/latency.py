"""Client response-latency model.

A client's latency is ``comm_base + per_sample_cost * n_samples / cpu_share``,
optionally multiplied by a lognormal factor with median 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tierfl.errors import ConfigError, DomainError


@dataclass(frozen=True)
class ResourceProfile:
    cpu_share: float
    comm_base: float = 0.5
    per_sample_cost: float = 0.005
    jitter_sd: float = 0.0

    def __post_init__(self):
        if not self.cpu_share > 0:
            raise ConfigError("cpu_share", "must be > 0")
        if not self.comm_base >= 0:
            raise ConfigError("comm_base", "must be >= 0")
        if not self.per_sample_cost > 0:
            raise ConfigError("per_sample_cost", "must be > 0")
        if not self.jitter_sd >= 0:
            raise ConfigError("jitter_sd", "must be >= 0")

    def compute_time(self, n_samples: int) -> float:
        return self.per_sample_cost * n_samples / self.cpu_share


def client_latency(profile: ResourceProfile, n_samples: int, rng: np.random.Generator | None = None) -> float:
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    latency = profile.comm_base + profile.compute_time(n_samples)
    if profile.jitter_sd > 0:
        if rng is None:
            raise DomainError("jitter enabled but no random source given")
        latency *= math.exp(rng.normal(0.0, profile.jitter_sd))
    return latency


def round_latency(latencies: Sequence[float]) -> float:
    """A synchronous round waits for its slowest client."""
    if len(latencies) == 0:
        raise DomainError("round_latency of an empty selection")
    return max(latencies)
