"""Synthetic Gaussian-cluster data and client partitioning.

Partitions are returned as ``{client_id: sorted index array}`` into the
dataset they were cut from; ``Dataset.subset`` materialises a shard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from tierfl.errors import ConfigError, DomainError

PARTITION_MODES = ("iid", "quantity", "noniid", "quantity+noniid")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    origin: np.ndarray | None = None  # indices into the parent set, when a subset

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        origin = idx if self.origin is None else self.origin[idx]
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, origin)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class PartitionPlan:
    mode: str = "iid"
    fractions: tuple[float, ...] = ()
    classes_per_client: int = 2
    num_shards: int = 0

    def validate(self, num_clients: int, num_groups: int, num_classes: int) -> None:
        if self.mode not in PARTITION_MODES:
            raise ConfigError("partition.mode", f"unknown mode {self.mode!r}; expected one of {PARTITION_MODES}")
        if "quantity" in self.mode:
            if len(self.fractions) != num_groups:
                raise ConfigError("partition.fractions", f"need {num_groups} entries, got {len(self.fractions)}")
            _check_fractions(self.fractions)
        if "noniid" in self.mode:
            if not 1 <= self.classes_per_client <= num_classes:
                raise ConfigError("partition.classes_per_client", f"must lie in [1, {num_classes}]")
            if self.num_shards and self.num_shards % num_clients:
                raise ConfigError(
                    "partition.num_shards", f"{self.num_shards} not divisible by {num_clients} clients"
                )

    def shards_per_client(self, num_clients: int) -> int:
        if self.num_shards:
            return self.num_shards // num_clients
        return self.classes_per_client


def _check_fractions(fractions) -> None:
    if any(f < 0 for f in fractions):
        raise ConfigError("partition.fractions", "entries must be non-negative")
    if abs(math.fsum(fractions) - 1.0) > 1e-9:
        raise ConfigError("partition.fractions", f"must sum to 1, got {math.fsum(fractions)!r}")


def _class_means(num_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    raw = rng.normal(size=(max(num_classes, dim), dim))
    if num_classes <= dim:
        # orthonormal rows: every pair of means sits sqrt(2) apart
        q, _ = np.linalg.qr(raw[:dim].T)
        return q.T[:num_classes]
    raw = raw[:num_classes]
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def gen_dataset(num_classes: int, samples_per_class: int, dim: int, spread: float, seed: int) -> Dataset:
    """Isotropic Gaussian blobs of std ``spread`` around unit-norm class means."""
    if dim < 1:
        raise ConfigError("data.dim", "must be >= 1")
    if num_classes < 1 or samples_per_class < 1:
        raise ConfigError("data", "num_classes and samples_per_class must be >= 1")
    if not spread > 0:
        raise ConfigError("data.spread", "must be > 0")
    rng = np.random.default_rng(seed)
    means = _class_means(num_classes, dim, rng)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    features = means[labels] + spread * rng.normal(size=(len(labels), dim))
    return Dataset(features, labels, num_classes)


def split_holdout(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/holdout split; every class keeps at least one training sample."""
    if not 0 < fraction < 1:
        raise ConfigError("data.holdout_fraction", "must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, hold = [], []
    for c in range(dataset.num_classes):
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        k = min(int(round(fraction * len(idx))), len(idx) - 1)
        hold.append(idx[:k])
        train.append(idx[k:])
    return dataset.subset(np.sort(np.concatenate(train))), dataset.subset(np.sort(np.concatenate(hold)))


def partition_quantity(
    dataset: Dataset,
    client_groups: Sequence[Sequence[int]],
    fractions: Sequence[float],
    seed: int,
) -> dict[int, np.ndarray]:
    """Give group ``g`` about ``fractions[g] * N`` random samples, split evenly inside the group.

    Rounding leftovers (fewer than the number of groups) go to the last group.
    """
    if len(fractions) != len(client_groups):
        raise ConfigError("partition.fractions", f"need {len(client_groups)} entries, got {len(fractions)}")
    _check_fractions(fractions)
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    sizes = [int(math.floor(f * n)) for f in fractions]
    sizes[-1] += n - sum(sizes)
    out: dict[int, np.ndarray] = {}
    start = 0
    for group, size in zip(client_groups, sizes):
        if not group:
            raise ConfigError("groups", "every group needs at least one client")
        block = order[start : start + size]
        start += size
        for client, part in zip(group, np.array_split(block, len(group))):
            out[int(client)] = np.sort(part)
    return out


def _label_shards(dataset: Dataset, num_shards: int) -> list[np.ndarray]:
    """Cut the label-sorted index list into ``num_shards`` contiguous pieces.

    When there are at least as many shards as present classes, cuts also fall
    on every class boundary so each shard holds one class; shard counts per
    class follow class sizes (largest remainder, at least one each). Otherwise
    the sorted list is cut into equal pieces.
    """
    # stable sort keeps the original order within a label
    by_label = np.argsort(dataset.labels, kind="stable")
    counts = np.bincount(dataset.labels, minlength=dataset.num_classes)
    present = np.flatnonzero(counts)
    if num_shards < len(present):
        return np.array_split(by_label, num_shards)
    per_class = np.ones(len(present), dtype=np.int64)
    if num_shards > len(present):
        per_class += _largest_remainder(counts[present].astype(float), num_shards - len(present))
    if np.any(per_class > counts[present]):
        raise ConfigError("partition.num_shards", f"{num_shards} shards need more samples per class")
    shards = []
    start = 0
    for size, k in zip(counts[present], per_class):
        shards.extend(np.array_split(by_label[start : start + size], k))
        start += size
    return shards


def partition_noniid(
    dataset: Dataset,
    num_clients: int,
    num_shards: int,
    shards_per_client: int,
    seed: int,
    client_ids: Sequence[int] | None = None,
) -> dict[int, np.ndarray]:
    """Label-sorted shard assignment: each client gets ``shards_per_client`` contiguous shards."""
    if num_shards != num_clients * shards_per_client:
        raise ConfigError(
            "partition.num_shards",
            f"{num_shards} shards != {num_clients} clients x {shards_per_client} shards each",
        )
    if num_shards > len(dataset):
        raise ConfigError("partition.num_shards", f"{num_shards} shards exceed {len(dataset)} samples")
    ids = list(range(num_clients)) if client_ids is None else [int(c) for c in client_ids]
    if len(ids) != num_clients:
        raise ConfigError("partition", "client_ids length must equal num_clients")
    rng = np.random.default_rng(seed)
    shards = _label_shards(dataset, num_shards)
    perm = rng.permutation(num_shards)
    out = {}
    for i, client in enumerate(ids):
        picked = perm[i * shards_per_client : (i + 1) * shards_per_client]
        out[client] = np.sort(np.concatenate([shards[s] for s in picked]))
    return out


def partition(
    dataset: Dataset,
    plan: PartitionPlan,
    client_groups: Sequence[Sequence[int]],
    seed: int,
) -> dict[int, np.ndarray]:
    """Dispatch on ``plan.mode``. Groups are only used by the quantity modes."""
    clients = [int(c) for g in client_groups for c in g]
    plan.validate(len(clients), len(client_groups), dataset.num_classes)
    if plan.mode == "iid":
        return partition_quantity(dataset, [clients], [1.0], seed)
    if plan.mode == "quantity":
        return partition_quantity(dataset, client_groups, plan.fractions, seed)
    spc = plan.shards_per_client(len(clients))
    if plan.mode == "noniid":
        return partition_noniid(dataset, len(clients), spc * len(clients), spc, seed, clients)

    return _partition_quantity_noniid(dataset, client_groups, plan.fractions, spc, seed)


def _partition_quantity_noniid(dataset, client_groups, fractions, spc, seed):
    """Quantity-sized shards laid in random order along the label-sorted samples.

    Client quotas follow :func:`partition_quantity`; each quota is cut into
    ``spc`` shards. A shard no larger than a class spans at most two labels.
    """
    n = len(dataset)
    sizes = [int(math.floor(f * n)) for f in fractions]
    sizes[-1] += n - sum(sizes)
    pieces = []  # (client, size)
    for group, total in zip(client_groups, sizes):
        for client, quota in zip(group, _even_sizes(total, len(group))):
            pieces += [(int(client), s) for s in _even_sizes(quota, spc)]
    order = np.random.default_rng(seed).permutation(len(pieces))
    by_label = np.argsort(dataset.labels, kind="stable")
    out: dict[int, list[np.ndarray]] = {int(c): [] for g in client_groups for c in g}
    start = 0
    for i in order:
        client, size = pieces[i]
        out[client].append(by_label[start : start + size])
        start += size
    return {c: np.sort(np.concatenate(parts)) for c, parts in out.items()}


def _even_sizes(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (i < extra) for i in range(parts)]


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    raw = weights / weights.sum() * total
    counts = np.floor(raw).astype(np.int64)
    rest = total - counts.sum()
    if rest:
        # ties go to the lower class index
        order = np.lexsort((np.arange(len(raw)), -(raw - counts)))
        counts[order[:rest]] += 1
    return counts


def build_tier_testsets(
    holdout: Dataset,
    train: Dataset,
    assignment: Mapping[int, int],
    client_shards: Mapping[int, np.ndarray],
    size: int,
    seed: int,
) -> dict[int, Dataset]:
    """Per-tier test sets whose class mixture follows the tier's training data.

    ``assignment`` maps client to tier; ``client_shards`` index into ``train``.
    Samples are drawn from ``holdout`` only, without replacement while a
    class has enough holdout samples.
    """
    tiers = sorted(set(assignment.values()))
    if not tiers:
        raise DomainError("no tiers to build test sets for")
    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(holdout.labels == c) for c in range(holdout.num_classes)]
    out = {}
    for t in tiers:
        members = [c for c, tt in assignment.items() if tt == t]
        if not members:
            raise DomainError(f"tier {t} has no clients")
        hist = np.zeros(holdout.num_classes)
        for c in members:
            hist += np.bincount(train.labels[client_shards[c]], minlength=holdout.num_classes)
        if hist.sum() == 0:
            raise DomainError(f"tier {t} holds no training samples")
        counts = _largest_remainder(hist, size)
        picked = []
        for c, k in enumerate(counts):
            if k == 0:
                continue
            pool = by_class[c]
            if len(pool) == 0:
                raise DomainError(f"holdout has no samples of class {c}")
            picked.append(rng.choice(pool, size=k, replace=k > len(pool)))
        out[t] = holdout.subset(np.sort(np.concatenate(picked)))
    return out
