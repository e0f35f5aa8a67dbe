from dataclasses import replace

import pytest

from tierfl.config import DataSpec, GroupSpec, PolicySpec, SimConfig, reference_config
from tierfl.latency import ResourceProfile

REFERENCE_YAML = "configs/reference.yaml"
CPU_SHARES = (4.0, 2.0, 1.0, 0.5, 0.1)


def light_config(policy="uniform", rounds=50, seed=11, **overrides) -> SimConfig:
    """Reference latencies (0.8125 .. 13 s) on a tiny dataset: 10 samples per client."""
    groups = tuple(GroupSpec(10, ResourceProfile(s, 0.5, 0.125, 0.0)) for s in CPU_SHARES)
    cfg = SimConfig(
        seed=seed,
        rounds=rounds,
        clients_per_round=5,
        data=DataSpec(num_classes=5, samples_per_class=125, dim=5, spread=0.5, tier_testset_size=50),
        groups=groups,
        policy=PolicySpec.named(policy),
    )
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


@pytest.fixture
def light():
    return light_config


@pytest.fixture
def reference():
    return reference_config
