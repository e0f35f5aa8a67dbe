"""Softmax classifier, local SGD and sample-weighted FedAvg.

Parameters live in one flat float64 vector. ``dims`` lists layer widths from
input to output, e.g. ``(4, 3)`` for plain multinomial logistic regression or
``(20, 16, 10)`` for one tanh hidden layer. Each layer stores its weight
matrix (row-major, ``in x out``) followed by its bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tierfl.errors import ConfigError, DomainError

INIT_SCALE = 0.05


@dataclass(frozen=True)
class ModelParams:
    values: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        expected = param_count(self.dims)
        if self.values.shape != (expected,):
            raise DomainError(
                f"parameter vector has shape {self.values.shape}, dims {self.dims} need ({expected},)"
            )

    def copy(self) -> "ModelParams":
        return ModelParams(self.values.copy(), self.dims)

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256(np.ascontiguousarray(self.values, dtype="<f8").tobytes()).hexdigest()


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 0.01
    decay: float = 0.995
    batch_size: int = 10
    local_epochs: int = 1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate", "must be >= 0")
        if not 0 < self.decay <= 1:
            raise ConfigError("decay", "must lie in (0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs", "must be >= 1")


@dataclass(frozen=True)
class ClientUpdate:
    params: ModelParams
    sample_count: int
    client_id: int = 0

    def __post_init__(self):
        if self.sample_count < 1:
            raise DomainError("sample_count must be >= 1")


def _check_dims(dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise ConfigError("dims", "need at least an input and an output width")
    if any(d < 1 for d in dims):
        raise ConfigError("dims", f"zero-sized layer in {dims}")
    return dims


def param_count(dims: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def unpack(values: np.ndarray, dims: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` per layer into ``values`` (no copies)."""
    layers = []
    offset = 0
    for a, b in zip(dims[:-1], dims[1:]):
        w = values[offset : offset + a * b].reshape(a, b)
        offset += a * b
        bias = values[offset : offset + b]
        offset += b
        layers.append((w, bias))
    return layers


def init_params(dims: Sequence[int], seed: int) -> ModelParams:
    dims = _check_dims(dims)
    rng = np.random.default_rng(seed)
    values = rng.uniform(-INIT_SCALE, INIT_SCALE, size=param_count(dims))
    return ModelParams(values, dims)


def _forward(values, dims, x):
    layers = unpack(values, dims)
    acts = [x]
    h = x
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        h = np.tanh(z) if i < len(layers) - 1 else z
        acts.append(h)
    return acts


def logits(params: ModelParams, x: np.ndarray) -> np.ndarray:
    return _forward(params.values, params.dims, np.asarray(x, dtype=float))[-1]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy."""
    lp = _log_softmax(logits(params, x))
    return float(-lp[np.arange(len(y)), y].mean())


def loss_and_grad(params: ModelParams, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its analytic gradient w.r.t. the flat vector."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    dims = params.dims
    acts = _forward(params.values, dims, x)
    n = len(y)
    lp = _log_softmax(acts[-1])
    value = float(-lp[np.arange(n), y].mean())

    delta = np.exp(lp)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grad = np.empty_like(params.values)
    grads = unpack(grad, dims)
    layers = unpack(params.values, dims)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw, gb = grads[i]
        gw[...] = acts[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w.T) * (1.0 - acts[i] ** 2)
    return value, grad


def local_train(
    params: ModelParams,
    shard,
    hyper: TrainHyper,
    round_index: int,
    seed: int,
    client_id: int = 0,
) -> ClientUpdate:
    """Mini-batch SGD for ``local_epochs`` passes at rate ``lr * decay**round``.

    ``shard`` is any object with ``features`` and ``labels`` arrays.
    """
    shard_x, shard_y = shard.features, shard.labels
    n = len(shard_y)
    if n == 0:
        raise DomainError(f"client {client_id} has an empty shard")
    values = params.values.copy()
    rate = hyper.learning_rate * hyper.decay**round_index
    if rate == 0.0:
        return ClientUpdate(ModelParams(values, params.dims), n, client_id)

    rng = np.random.default_rng(seed)
    work = ModelParams(values, params.dims)
    for _ in range(hyper.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            _, g = loss_and_grad(work, shard_x[idx], shard_y[idx])
            values -= rate * g
    if not np.all(np.isfinite(values)):
        raise DomainError(f"client {client_id}: non-finite parameters after local training")
    return ClientUpdate(ModelParams(values, params.dims), n, client_id)


def aggregate(updates: Sequence[ClientUpdate]) -> ModelParams:
    """Sample-count weighted mean of the client parameter vectors.

    Updates are put in canonical order (client id, then count, then bytes)
    and the weighted deviations from the first one are summed per coordinate
    with ``math.fsum``. Input ordering therefore never changes the result, and
    identical inputs come back bit-exact.
    """
    if not updates:
        raise DomainError("cannot aggregate an empty update list")
    dims = updates[0].params.dims
    if any(u.params.dims != dims for u in updates):
        raise DomainError("updates have mismatched model dims")
    if len(updates) == 1:
        return updates[0].params.copy()

    ordered = sorted(
        updates, key=lambda u: (u.client_id, u.sample_count, u.params.values.tobytes())
    )
    total = sum(u.sample_count for u in ordered)
    ref = ordered[0].params.values
    shifted = np.stack([(u.params.values - ref) * u.sample_count for u in ordered])
    values = ref + np.array([math.fsum(col) for col in shifted.T]) / total
    return ModelParams(values, dims)


def predict(params: ModelParams, x: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(logits(params, x), axis=1)


def evaluate(params: ModelParams, dataset) -> tuple[float, float]:
    """Return ``(accuracy, mean_loss)`` on a labelled set."""
    x, y = dataset.features, dataset.labels
    if len(y) == 0:
        raise DomainError("cannot evaluate on an empty dataset")
    z = logits(params, x)
    pred = np.argmax(z, axis=1)
    lp = _log_softmax(z)
    acc = float(np.count_nonzero(pred == y)) / len(y)
    return acc, float(-lp[np.arange(len(y)), y].mean())
