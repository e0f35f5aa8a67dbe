import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tierfl.errors import ConfigError, DomainError
from tierfl.model import (
    ClientUpdate,
    ModelParams,
    TrainHyper,
    aggregate,
    evaluate,
    init_params,
    local_train,
    loss,
    loss_and_grad,
    param_count,
    unpack,
)


def shard(x, y):
    return SimpleNamespace(features=np.asarray(x, dtype=float), labels=np.asarray(y))


def numeric_grad(params, x, y, h=1e-6):
    g = np.zeros_like(params.values)
    for i in range(len(g)):
        up, down = params.values.copy(), params.values.copy()
        up[i] += h
        down[i] -= h
        g[i] = (loss(ModelParams(up, params.dims), x, y) - loss(ModelParams(down, params.dims), x, y)) / (2 * h)
    return g


def brute_weighted_mean(updates):
    n = len(updates[0].params.values)
    total = sum(u.sample_count for u in updates)
    return [sum(float(u.params.values[i]) * u.sample_count for u in updates) / total for i in range(n)]


def brute_accuracy(params, x, y):
    """Per-sample loop over explicit dot products, lowest-index tie-break."""
    (w, b), = unpack(params.values, params.dims)
    correct = 0
    for xi, yi in zip(x, y):
        scores = [sum(xi[f] * w[f, k] for f in range(len(xi))) + b[k] for k in range(len(b))]
        best = 0
        for k in range(1, len(scores)):
            if scores[k] > scores[best]:
                best = k
        correct += best == yi
    return correct / len(y)


class TestInit:
    def test_deterministic(self):
        a, b = init_params([4, 3], 7), init_params([4, 3], 7)
        assert np.array_equal(a.values, b.values)

    def test_seed_sensitive(self):
        assert not np.array_equal(init_params([4, 3], 7).values, init_params([4, 3], 8).values)

    def test_range(self):
        p = init_params([2, 2], 1)
        assert np.all(np.abs(p.values) <= 0.05)

    def test_length_matches_dims(self):
        assert len(init_params([20, 16, 10], 0).values) == 20 * 16 + 16 + 16 * 10 + 10 == param_count([20, 16, 10])

    @pytest.mark.parametrize("dims", [[4, 0], [0, 3], [5]])
    def test_bad_dims(self, dims):
        with pytest.raises(ConfigError):
            init_params(dims, 0)


class TestGradient:
    @pytest.mark.parametrize("dims", [(3, 4), (3, 5, 2)])
    def test_matches_finite_differences(self, dims):
        rng = np.random.default_rng(5)
        for trial in range(10):
            p = ModelParams(rng.normal(scale=0.5, size=param_count(dims)), dims)
            x = rng.normal(size=(7, dims[0]))
            y = rng.integers(0, dims[-1], size=7)
            _, g = loss_and_grad(p, x, y)
            num = numeric_grad(p, x, y)
            rel = np.linalg.norm(g - num) / max(np.linalg.norm(num), 1e-12)
            assert rel <= 1e-4

    def test_hand_computed_softmax_gradient(self):
        # zero weights: both classes get p = 1/2, so dL/dW[:, j] = x (p_j - [y == j])
        x = np.array([[1.5, -2.0]])
        y = np.array([1])
        p = ModelParams(np.zeros(param_count((2, 2))), (2, 2))
        _, g = loss_and_grad(p, x, y)
        (gw, gb), = unpack(g, (2, 2))
        expected_w = np.array([[1.5 * 0.5, 1.5 * -0.5], [-2.0 * 0.5, -2.0 * -0.5]])
        assert np.allclose(gw, expected_w)
        assert np.allclose(gb, [0.5, -0.5])

        hyper = TrainHyper(learning_rate=0.1, decay=1.0, batch_size=1, local_epochs=1)
        up = local_train(p, shard(x, y), hyper, 0, seed=0)
        step = up.params.values - p.values
        assert np.allclose(step, -0.1 * g)
        assert np.dot(step, g) < 0


class TestLocalTrain:
    def test_zero_rate_is_identity(self):
        p = init_params([3, 2], 4)
        data = shard(np.ones((6, 3)), [0, 1, 0, 1, 0, 1])
        up = local_train(p, data, TrainHyper(learning_rate=0.0), 3, seed=1)
        assert np.array_equal(up.params.values, p.values)
        assert up.sample_count == 6

    def test_descends_on_separable_shard(self):
        rng = np.random.default_rng(0)
        x = np.vstack([rng.normal(-2, 0.3, (20, 2)), rng.normal(2, 0.3, (20, 2))])
        y = np.repeat([0, 1], 20)
        p = init_params([2, 2], 3)
        before = loss(p, x, y)
        up = local_train(p, shard(x, y), TrainHyper(learning_rate=0.05, local_epochs=5), 0, seed=2)
        assert loss(up.params, x, y) <= before

    def test_decay_applies_per_round(self):
        x, y = np.array([[1.0, 0.0]]), np.array([0])
        p = ModelParams(np.zeros(6), (2, 2))
        hyper = TrainHyper(learning_rate=0.1, decay=0.5)
        _, g = loss_and_grad(p, x, y)
        up = local_train(p, shard(x, y), hyper, 2, seed=0)
        assert np.allclose(up.params.values, -0.1 * 0.25 * g)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        data = shard(rng.normal(size=(30, 4)), rng.integers(0, 3, 30))
        p = init_params([4, 3], 0)
        a = local_train(p, data, TrainHyper(), 5, seed=9)
        b = local_train(p, data, TrainHyper(), 5, seed=9)
        assert np.array_equal(a.params.values, b.params.values)

    def test_empty_shard(self):
        with pytest.raises(DomainError):
            local_train(init_params([2, 2], 0), shard(np.zeros((0, 2)), []), TrainHyper(), 0, 0)

    @pytest.mark.parametrize("kw", [dict(learning_rate=-1), dict(decay=0), dict(decay=1.5),
                                    dict(batch_size=0), dict(local_epochs=0)])
    def test_hyper_invariants(self, kw):
        with pytest.raises(ConfigError):
            TrainHyper(**kw)


class TestAggregate:
    def test_weighted_arithmetic(self):
        # (1, 1) dims carry one weight and one bias, both set to the same value
        a = ClientUpdate(ModelParams(np.array([0.0, 0.0]), (1, 1)), 1)
        b = ClientUpdate(ModelParams(np.array([3.0, 3.0]), (1, 1)), 2)
        assert np.array_equal(aggregate([a, b]).values, [2.0, 2.0])

    def test_identical_inputs(self):
        w = init_params([3, 2], 0)
        out = aggregate([ClientUpdate(w, 3, 1), ClientUpdate(w, 17, 2)])
        assert np.array_equal(out.values, w.values)

    def test_single_update_exact(self):
        w = init_params([3, 2], 0)
        assert np.array_equal(aggregate([ClientUpdate(w, 5)]).values, w.values)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            ups = [ClientUpdate(ModelParams(rng.normal(size=8), (3, 2)), int(rng.integers(1, 500)), i)
                   for i in range(5)]
            assert np.allclose(aggregate(ups).values, brute_weighted_mean(ups), rtol=0, atol=1e-12)

    def test_equal_counts_is_plain_mean(self):
        rng = np.random.default_rng(4)
        ups = [ClientUpdate(ModelParams(rng.normal(size=8), (3, 2)), 10, i) for i in range(6)]
        mean = np.mean([u.params.values for u in ups], axis=0)
        assert np.allclose(aggregate(ups).values, mean, rtol=0, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
                              st.integers(1, 1000)), min_size=1, max_size=6),
           st.randoms(use_true_random=False))
    def test_permutation_invariant(self, items, rnd):
        ups = [ClientUpdate(ModelParams(np.array(v), (2, 1)), s) for v, s in items]
        shuffled = list(ups)
        rnd.shuffle(shuffled)
        assert np.array_equal(aggregate(ups).values, aggregate(shuffled).values)
        assert np.all(np.isfinite(aggregate(ups).values))

    def test_errors(self):
        with pytest.raises(DomainError):
            aggregate([])
        a = ClientUpdate(ModelParams(np.zeros(2), (1, 1)), 1)
        b = ClientUpdate(ModelParams(np.zeros(4), (1, 2)), 1)
        with pytest.raises(DomainError):
            aggregate([a, b])


class TestEvaluate:
    def test_constant_logits_pick_class_zero(self):
        p = ModelParams(np.zeros(param_count((2, 3))), (2, 3))
        y = np.array([0, 1, 2, 0, 2, 0, 1])
        acc, loss_value = evaluate(p, shard(np.ones((7, 2)), y))
        assert acc == 3 / 7
        assert math.isclose(loss_value, math.log(3))

    def test_separable_set_reaches_one(self):
        x = np.array([[-1.0, 0.0], [-2.0, 0.5], [1.0, 0.0], [2.0, -0.5]])
        y = np.array([0, 0, 1, 1])
        # logit difference = 2 * x0, positive exactly for class 1
        p = ModelParams(np.array([-1.0, 1.0, 0.0, 0.0, 0.0, 0.0]), (2, 2))
        assert evaluate(p, shard(x, y))[0] == 1.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            p = ModelParams(rng.normal(size=param_count((4, 3))), (4, 3))
            x = rng.normal(size=(40, 4))
            y = rng.integers(0, 3, 40)
            assert evaluate(p, shard(x, y))[0] == brute_accuracy(p, x, y)

    def test_empty(self):
        with pytest.raises(DomainError):
            evaluate(init_params([2, 2], 0), shard(np.zeros((0, 2)), []))
