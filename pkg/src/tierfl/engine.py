"""Round-by-round simulation: profile, tier, select, train, aggregate, evaluate.

Time is simulated: each round adds the slowest selected client's latency to
the wall clock. All randomness comes from per-purpose streams keyed on the
experiment seed, so results do not depend on evaluation order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from tierfl import analytics, datagen, model
from tierfl.config import SimConfig
from tierfl.errors import DomainError, TierFLError
from tierfl.latency import client_latency, round_latency
from tierfl.scheduler import (
    AdaptiveState,
    StaticPolicy,
    adaptive_step,
    select_static,
    select_vanilla,
)
from tierfl.tiering import ProfileTable, TierTable, assign_tiers, profile_clients

log = logging.getLogger(__name__)

_STREAMS = {
    "data": 1,
    "holdout": 2,
    "partition": 3,
    "init": 4,
    "profile": 5,
    "latency": 6,
    "select": 7,
    "train": 8,
    "testset": 9,
}


def stream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, _STREAMS[purpose], *keys])


def stream_seed(seed: int, purpose: str, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, _STREAMS[purpose], *keys]).generate_state(2, np.uint64)[0])


class RoundError(TierFLError):
    def __init__(self, round_index: int, cause: Exception):
        self.round_index = round_index
        super().__init__(f"round {round_index}: {cause}")


@dataclass
class RoundRecord:
    round: int
    policy: str
    tier: int | None
    clients: tuple[int, ...]
    round_latency: float
    wall_clock: float
    global_acc: float
    tier_acc: list[float] | None
    credits: list[int] | None = None
    probs: list[float] | None = None


@dataclass
class ExperimentResult:
    config: SimConfig
    records: list[RoundRecord]
    params: model.ModelParams
    profile: ProfileTable
    tier_table: TierTable
    total_wall_clock: float
    estimate: float | None = None
    mape: float | None = None
    credit_resets: int = 0
    vanilla_fallbacks: int = 0
    prob_updates: int = 0
    tier_tables: list[TierTable] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].global_acc

    def csv_header(self) -> list[str]:
        m = self.tier_table.m
        return (
            ["round", "policy", "tier", "round_latency_s", "wall_clock_s", "global_acc"]
            + [f"acc_tier_{t}" for t in range(1, m + 1)]
            + [f"credits_{t}" for t in range(1, m + 1)]
            + [f"prob_{t}" for t in range(1, m + 1)]
        )

    def csv_text(self) -> str:
        m = self.tier_table.m
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        blank = [""] * m
        for r in self.records:
            w.writerow(
                [r.round, r.policy, "" if r.tier is None else r.tier, repr(r.round_latency),
                 repr(r.wall_clock), repr(r.global_acc)]
                + (blank if r.tier_acc is None else [repr(a) for a in r.tier_acc])
                + (blank if r.credits is None else [str(c) for c in r.credits])
                + (blank if r.probs is None else [repr(p) for p in r.probs])
            )
        return buf.getvalue()

    def summary(self) -> dict:
        last = self.records[-1]
        return {
            "policy": self.config.policy.name,
            "seed": self.config.seed,
            "rounds": len(self.records),
            "clients": self.config.client_count,
            "clients_per_round": self.config.clients_per_round,
            "tiers": self.tier_table.m,
            "dropouts": sorted(self.profile.dropouts),
            "tier_avg_latency_s": self.tier_table.latencies(),
            "total_wall_clock_s": self.total_wall_clock,
            "final_global_acc": last.global_acc,
            "final_tier_acc": last.tier_acc,
            "estimated_wall_clock_s": self.estimate,
            "estimator_mape_pct": self.mape,
            "credit_resets": self.credit_resets,
            "vanilla_fallbacks": self.vanilla_fallbacks,
            "prob_updates": self.prob_updates,
            "params_sha256": self.params.digest(),
        }

    def summary_text(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def evaluate_tiers(params: model.ModelParams, tier_testsets: dict[int, datagen.Dataset]) -> list[float]:
    return [model.evaluate(params, tier_testsets[t])[0] for t in sorted(tier_testsets)]


def compare_estimator(result: ExperimentResult, tier_table: TierTable, policy, rounds: int) -> float:
    """MAPE of the analytic time estimate against the simulated wall clock."""
    if not isinstance(policy, StaticPolicy):
        raise DomainError("the time estimator needs fixed tier probabilities (static policy)")
    est = analytics.estimate_training_time(tier_table.latencies(), policy.tier_probs, rounds)
    return analytics.mape(est, result.total_wall_clock)


class _World:
    """Data, shards and latency sources shared across the rounds of one run."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        d = cfg.data
        full = datagen.gen_dataset(d.num_classes, d.samples_per_class, d.dim, d.spread, stream_seed(cfg.seed, "data"))
        self.train, self.holdout = datagen.split_holdout(full, d.holdout_fraction, stream_seed(cfg.seed, "holdout"))
        groups = cfg.client_groups()
        idx = datagen.partition(self.train, cfg.partition, groups, stream_seed(cfg.seed, "partition"))
        self.shard_idx = idx
        self.shards = {c: self.train.subset(i) for c, i in idx.items()}
        empty = [c for c, s in self.shards.items() if len(s) == 0]
        if empty:
            raise DomainError(f"clients {empty} received no training data")
        self.profiles = {}
        for g, members in zip(cfg.groups, groups):
            for c in members:
                self.profiles[c] = g.profile

    def latency(self, client: int, purpose: str, *keys: int) -> float:
        rng = stream(self.cfg.seed, purpose, client, *keys)
        return client_latency(self.profiles[client], len(self.shards[client]), rng)

    def profile(self, epoch: int) -> ProfileTable:
        return profile_clients(
            sorted(self.shards), self.cfg.sync_rounds, self.cfg.t_max,
            lambda c, r: self.latency(c, "profile", epoch, r),
        )

    def testsets(self, table: TierTable, epoch: int) -> dict[int, datagen.Dataset]:
        return datagen.build_tier_testsets(
            self.holdout, self.train, table.assignment, self.shard_idx,
            self.cfg.data.tier_testset_size, stream_seed(self.cfg.seed, "testset", epoch),
        )


def _tiering(world: _World, epoch: int):
    cfg = world.cfg
    prof = world.profile(epoch)
    table = assign_tiers(prof, cfg.m)
    if cfg.policy.kind == "static":
        cfg.policy.static().validate(table, cfg.clients_per_round)
    elif cfg.policy.kind == "adaptive":
        # at least one tier must be able to host a round
        if not any(n >= cfg.clients_per_round for n in table.sizes().values()):
            table.check_sizes(cfg.clients_per_round)
    if len(table.pool()) < cfg.clients_per_round:
        raise DomainError(f"only {len(table.pool())} non-dropout clients for {cfg.clients_per_round} per round")
    return prof, table, world.testsets(table, epoch)


def run_experiment(cfg: SimConfig) -> ExperimentResult:
    cfg.validate()
    world = _World(cfg)
    policy = cfg.policy
    static = policy.static() if policy.kind == "static" else None

    epoch = 0
    prof, table, testsets = _tiering(world, epoch)
    first_prof, first_table = prof, table
    tables = [table]
    params = model.init_params(cfg.dims(), stream_seed(cfg.seed, "init"))

    state = None
    tier_acc = None
    if policy.kind == "adaptive":
        state = AdaptiveState.start(cfg.m, cfg.rounds, policy.interval, policy.credits_gamma, policy.on_exhaust)
        tier_acc = evaluate_tiers(params, testsets)
    interval = policy.interval

    wall = Fraction(0)
    records = []
    for r in range(cfg.rounds):
        try:
            if cfg.reprofile_every and r > 0 and r % cfg.reprofile_every == 0:
                epoch += 1
                prof, table, testsets = _tiering(world, epoch)
                tables.append(table)
                if policy.kind == "adaptive":
                    tier_acc = evaluate_tiers(params, testsets)

            rng = stream(cfg.seed, "select", r)
            if policy.kind == "vanilla":
                sel = select_vanilla(table.pool(), cfg.clients_per_round, rng)
            elif policy.kind == "static":
                sel = select_static(table, static, cfg.clients_per_round, rng)
            else:
                sel, state = adaptive_step(state, r, tier_acc, table, cfg.clients_per_round, rng)

            updates = [
                model.local_train(params, world.shards[c], cfg.train, r, stream_seed(cfg.seed, "train", r, c), c)
                for c in sel.clients
            ]
            params = model.aggregate(updates)
            lat = round_latency([world.latency(c, "latency", r) for c in sel.clients])
            wall += Fraction(lat)

            global_acc, _ = model.evaluate(params, world.holdout)
            evaluate_now = cfg.tier_eval == "every_round" or (r + 1) % interval == 0
            tier_acc = evaluate_tiers(params, testsets) if evaluate_now else tier_acc
        except TierFLError as exc:
            raise RoundError(r, exc) from exc

        records.append(
            RoundRecord(
                round=r,
                policy=policy.name,
                tier=sel.tier,
                clients=sel.clients,
                round_latency=lat,
                wall_clock=float(wall),
                global_acc=global_acc,
                tier_acc=list(tier_acc) if evaluate_now else None,
                credits=None if state is None else [state.credits[t] for t in range(1, cfg.m + 1)],
                probs=(
                    list(state.probs) if state is not None
                    else list(static.tier_probs) if static is not None else None
                ),
            )
        )

    result = ExperimentResult(
        config=cfg,
        records=records,
        params=params,
        profile=first_prof,
        tier_table=first_table,
        total_wall_clock=float(wall),
        tier_tables=tables,
    )
    if state is not None:
        result.credit_resets = state.resets
        result.vanilla_fallbacks = state.fallbacks
        result.prob_updates = state.updates
    if static is not None:
        result.estimate = analytics.estimate_training_time(first_table.latencies(), static.tier_probs, cfg.rounds)
        result.mape = compare_estimator(result, first_table, static, cfg.rounds)
    log.info("%s: %d rounds, wall clock %.1f s, final acc %.4f",
             policy.name, cfg.rounds, result.total_wall_clock, result.final_accuracy)
    return result
