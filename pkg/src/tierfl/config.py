"""Experiment configuration: YAML schema, validation and defaults.

Every validation failure raises :class:`ConfigError` whose ``path`` is the
dotted location of the offending field (``groups[2].cpu_share``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from tierfl.datagen import PartitionPlan
from tierfl.errors import ConfigError
from tierfl.latency import ResourceProfile
from tierfl.model import TrainHyper
from tierfl.scheduler import PRESETS, StaticPolicy, check_probs

POLICY_KINDS = ("vanilla", "static", "adaptive")
TIER_EVAL_MODES = ("every_round", "interval")


@dataclass(frozen=True)
class DataSpec:
    num_classes: int = 10
    samples_per_class: int = 1250
    dim: int = 20
    spread: float = 0.5
    holdout_fraction: float = 0.2
    tier_testset_size: int = 500


@dataclass(frozen=True)
class GroupSpec:
    clients: int
    profile: ResourceProfile


@dataclass(frozen=True)
class PolicySpec:
    kind: str = "vanilla"
    name: str = "vanilla"
    probs: tuple[float, ...] = ()
    interval: int = 10
    credits_gamma: float = 1.2
    on_exhaust: str = "reset"

    @classmethod
    def named(cls, name: str, **kw) -> "PolicySpec":
        """Resolve ``vanilla``, ``adaptive`` or a preset name."""
        if name == "vanilla":
            return cls("vanilla", "vanilla", **kw)
        if name == "adaptive":
            return cls("adaptive", "adaptive", **kw)
        if name in PRESETS:
            return cls("static", name, PRESETS[name], **kw)
        raise ConfigError("policy.name", f"unknown policy {name!r}; expected vanilla, adaptive, custom or one of {sorted(PRESETS)}")

    def static(self) -> StaticPolicy:
        if self.kind != "static":
            raise ConfigError("policy", f"{self.name!r} is not a static policy")
        return StaticPolicy(self.probs, self.name)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    rounds: int = 500
    clients_per_round: int = 5
    data: DataSpec = field(default_factory=DataSpec)
    hidden: int = 0
    train: TrainHyper = field(default_factory=TrainHyper)
    groups: tuple[GroupSpec, ...] = ()
    partition: PartitionPlan = field(default_factory=PartitionPlan)
    m: int = 5
    sync_rounds: int = 5
    t_max: float = 60.0
    reprofile_every: int = 0
    policy: PolicySpec = field(default_factory=PolicySpec)
    tier_eval: str = "every_round"

    @property
    def client_count(self) -> int:
        return sum(g.clients for g in self.groups)

    def client_groups(self) -> list[list[int]]:
        out, start = [], 0
        for g in self.groups:
            out.append(list(range(start, start + g.clients)))
            start += g.clients
        return out

    def dims(self) -> tuple[int, ...]:
        if self.hidden:
            return (self.data.dim, self.hidden, self.data.num_classes)
        return (self.data.dim, self.data.num_classes)

    def with_overrides(self, *, seed=None, policy=None, rounds=None) -> "SimConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if rounds is not None:
            cfg = replace(cfg, rounds=int(rounds))
        if policy is not None:
            p = self.policy
            cfg = replace(
                cfg,
                policy=PolicySpec.named(
                    policy, interval=p.interval, credits_gamma=p.credits_gamma, on_exhaust=p.on_exhaust
                ),
            )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        if self.rounds < 1:
            raise ConfigError("rounds", "must be >= 1")
        if self.clients_per_round < 1:
            raise ConfigError("clients_per_round", "must be >= 1")
        if not self.groups:
            raise ConfigError("groups", "at least one client group is required")
        if self.client_count < self.clients_per_round:
            raise ConfigError("clients_per_round", f"exceeds the {self.client_count} configured clients")
        if self.m < 1:
            raise ConfigError("tiering.m", "must be >= 1")
        if self.sync_rounds < 1:
            raise ConfigError("tiering.sync_rounds", "must be >= 1")
        if not self.t_max > 0:
            raise ConfigError("tiering.t_max", "must be > 0")
        if self.reprofile_every < 0:
            raise ConfigError("tiering.reprofile_every", "must be >= 0")
        if self.tier_eval not in TIER_EVAL_MODES:
            raise ConfigError("evaluation.tier_eval", f"must be one of {TIER_EVAL_MODES}")
        self.partition.validate(self.client_count, len(self.groups), self.data.num_classes)
        p = self.policy
        if p.kind not in POLICY_KINDS:
            raise ConfigError("policy.kind", f"must be one of {POLICY_KINDS}")
        if p.kind == "static":
            check_probs(p.probs, "policy.probs")
            if len(p.probs) != self.m:
                raise ConfigError("policy.probs", f"{len(p.probs)} probabilities for m={self.m} tiers")
        if p.kind == "adaptive":
            if p.interval < 1:
                raise ConfigError("policy.interval", "must be >= 1")
            if not p.credits_gamma > 0:
                raise ConfigError("policy.credits_gamma", "must be > 0")
            if p.on_exhaust not in ("reset", "vanilla"):
                raise ConfigError("policy.on_exhaust", "must be 'reset' or 'vanilla'")

    def to_json(self) -> dict:
        d = asdict(self)
        d["groups"] = [{"clients": g.clients, **asdict(g.profile)} for g in self.groups]
        return d


# --- parsing -----------------------------------------------------------------

_MISSING = object()


def _get(node: Mapping, key: str, path: str, kind, default=_MISSING):
    if key not in node:
        if default is _MISSING:
            raise ConfigError(f"{path}{key}", "required field is missing")
        return default
    value = node[key]
    where = f"{path}{key}"
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(where, f"expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(where, f"expected an integer, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(where, f"expected a string, got {value!r}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(where, f"expected a list, got {value!r}")
        return value
    if kind is dict:
        if not isinstance(value, dict):
            raise ConfigError(where, f"expected a mapping, got {value!r}")
        return value
    raise TypeError(kind)


def _check_keys(node: Mapping, allowed, path: str) -> None:
    for key in node:
        if key not in allowed:
            raise ConfigError(f"{path}{key}", "unknown field")


def _floats(values, path: str) -> tuple[float, ...]:
    out = []
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{path}[{i}]", f"expected a number, got {v!r}")
        out.append(float(v))
    return tuple(out)


def _wrap(path: str, fn, *args, **kw):
    """Re-root a ConfigError raised by a component constructor under ``path``."""
    try:
        return fn(*args, **kw)
    except ConfigError as exc:
        raise ConfigError(f"{path}.{exc.path}", str(exc).split(": ", 1)[-1]) from None


def from_dict(raw: Any) -> SimConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    _check_keys(
        raw,
        {"seed", "rounds", "clients_per_round", "data", "model", "train", "latency", "groups",
         "partition", "tiering", "policy", "evaluation"},
        "",
    )

    data_raw = _get(raw, "data", "", dict, {})
    _check_keys(data_raw, set(DataSpec.__dataclass_fields__), "data.")
    dflt = DataSpec()
    data = DataSpec(**{
        name: _get(data_raw, name, "data.", type(getattr(dflt, name)), getattr(dflt, name))
        for name in DataSpec.__dataclass_fields__
    })

    model_raw = _get(raw, "model", "", dict, {})
    _check_keys(model_raw, {"hidden"}, "model.")
    hidden = _get(model_raw, "hidden", "model.", int, 0)
    if hidden < 0:
        raise ConfigError("model.hidden", "must be >= 0")

    train_raw = _get(raw, "train", "", dict, {})
    _check_keys(train_raw, set(TrainHyper.__dataclass_fields__), "train.")
    th = TrainHyper()
    train = _wrap("train", TrainHyper, **{
        name: _get(train_raw, name, "train.", type(getattr(th, name)), getattr(th, name))
        for name in TrainHyper.__dataclass_fields__
    })

    lat_raw = _get(raw, "latency", "", dict, {})
    lat_fields = {"comm_base", "per_sample_cost", "jitter_sd"}
    _check_keys(lat_raw, lat_fields, "latency.")
    lat_default = {k: _get(lat_raw, k, "latency.", float, getattr(ResourceProfile(1.0), k)) for k in lat_fields}

    groups = []
    for i, g in enumerate(_get(raw, "groups", "", list)):
        path = f"groups[{i}]."
        if not isinstance(g, dict):
            raise ConfigError(path[:-1], "expected a mapping")
        _check_keys(g, {"clients", "cpu_share"} | lat_fields, path)
        clients = _get(g, "clients", path, int)
        if clients < 1:
            raise ConfigError(f"{path}clients", "must be >= 1")
        prof = {k: _get(g, k, path, float, lat_default[k]) for k in lat_fields}
        profile = _wrap(path[:-1], ResourceProfile, cpu_share=_get(g, "cpu_share", path, float), **prof)
        groups.append(GroupSpec(clients, profile))

    part_raw = _get(raw, "partition", "", dict, {})
    _check_keys(part_raw, {"mode", "fractions", "classes_per_client", "num_shards"}, "partition.")
    plan = PartitionPlan(
        mode=_get(part_raw, "mode", "partition.", str, "iid"),
        fractions=_floats(_get(part_raw, "fractions", "partition.", list, []), "partition.fractions"),
        classes_per_client=_get(part_raw, "classes_per_client", "partition.", int, 2),
        num_shards=_get(part_raw, "num_shards", "partition.", int, 0),
    )

    tier_raw = _get(raw, "tiering", "", dict, {})
    _check_keys(tier_raw, {"m", "sync_rounds", "t_max", "reprofile_every"}, "tiering.")

    pol_raw = _get(raw, "policy", "", dict, {})
    _check_keys(pol_raw, {"name", "probs", "interval", "credits_gamma", "on_exhaust"}, "policy.")
    name = _get(pol_raw, "name", "policy.", str)
    extra = dict(
        interval=_get(pol_raw, "interval", "policy.", int, 10),
        credits_gamma=_get(pol_raw, "credits_gamma", "policy.", float, 1.2),
        on_exhaust=_get(pol_raw, "on_exhaust", "policy.", str, "reset"),
    )
    if name == "custom" or "probs" in pol_raw:
        probs = _floats(_get(pol_raw, "probs", "policy.", list), "policy.probs")
        policy = PolicySpec("static", name, probs, **extra)
    else:
        policy = PolicySpec.named(name, **extra)

    eval_raw = _get(raw, "evaluation", "", dict, {})
    _check_keys(eval_raw, {"tier_eval"}, "evaluation.")

    cfg = SimConfig(
        seed=_get(raw, "seed", "", int, 0),
        rounds=_get(raw, "rounds", "", int),
        clients_per_round=_get(raw, "clients_per_round", "", int),
        data=data,
        hidden=hidden,
        train=train,
        groups=tuple(groups),
        partition=plan,
        m=_get(tier_raw, "m", "tiering.", int, 5),
        sync_rounds=_get(tier_raw, "sync_rounds", "tiering.", int, 5),
        t_max=_get(tier_raw, "t_max", "tiering.", float, 60.0),
        reprofile_every=_get(tier_raw, "reprofile_every", "tiering.", int, 0),
        policy=policy,
        tier_eval=_get(eval_raw, "tier_eval", "evaluation.", str, "every_round"),
    )
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> SimConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return from_dict(raw)


def reference_config(**overrides) -> SimConfig:
    """50 clients in five CPU groups (4, 2, 1, 0.5, 0.1 shares), IID data, 500 rounds.

    With 200 samples per client the per-tier latencies are
    0.8125, 1.125, 1.75, 3.0 and 13.0 seconds (a 16x span).
    """
    shares = (4.0, 2.0, 1.0, 0.5, 0.1)
    groups = tuple(GroupSpec(10, ResourceProfile(s, 0.5, 0.00625, 0.0)) for s in shares)
    cfg = SimConfig(seed=2024, groups=groups, policy=PolicySpec.named("uniform"))
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg
