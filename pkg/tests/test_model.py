import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedcm import model as mc
from fedcm.model import Batch, LayerShape, OptimizerState, WeightVector

from conftest import random_batch


def finite_difference_gradient(w: WeightVector, batch: Batch, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(w.values)
    for i in range(w.values.size):
        plus = w.values.copy()
        plus[i] += h
        minus = w.values.copy()
        minus[i] -= h
        grad[i] = (mc.loss(WeightVector(w.shape, plus), batch)
                   - mc.loss(WeightVector(w.shape, minus), batch)) / (2 * h)
    return grad


class TestLayerShape:
    def test_parameter_count(self):
        assert LayerShape(2, (3,), 2).parameter_count == 2 * 3 + 3 + 3 * 2 + 2

    def test_no_hidden_layers(self):
        assert LayerShape(4, (), 3).parameter_count == 4 * 3 + 3

    def test_rejects_nonpositive_dims(self):
        with pytest.raises(ValueError):
            LayerShape(0, (3,), 2)
        with pytest.raises(ValueError):
            LayerShape(2, (0,), 2)


class TestWeightVector:
    def test_length_must_match_shape(self, small_shape):
        with pytest.raises(ValueError):
            WeightVector(small_shape, np.zeros(small_shape.parameter_count + 1))

    def test_rejects_non_finite(self, small_shape):
        values = np.zeros(small_shape.parameter_count)
        values[0] = np.nan
        with pytest.raises(ValueError):
            WeightVector(small_shape, values)


class TestInitWeights:
    def test_deterministic(self, small_shape):
        a = mc.init_weights(small_shape, seed=7)
        b = mc.init_weights(small_shape, seed=7)
        assert np.array_equal(a.values, b.values)

    def test_length(self, small_shape):
        assert mc.init_weights(small_shape, seed=0).values.size == 17

    def test_different_seeds_differ(self, small_shape):
        a = mc.init_weights(small_shape, seed=1)
        b = mc.init_weights(small_shape, seed=2)
        assert not np.array_equal(a.values, b.values)

    def test_he_uniform_bounds_and_zero_biases(self):
        shape = LayerShape(4, (8,), 3)
        w = mc.init_weights(shape, seed=3)
        first = w.values[:32]
        assert np.all(np.abs(first) <= np.sqrt(6.0 / 4))
        assert np.array_equal(w.values[32:40], np.zeros(8))


class TestForward:
    def test_rows_sum_to_one(self, small_weights):
        x = np.random.default_rng(0).normal(size=(11, 2))
        probs = mc.forward(small_weights, x)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(probs > 0) and np.all(probs < 1)

    def test_zero_weights_uniform(self, small_shape):
        w = WeightVector(small_shape, np.zeros(small_shape.parameter_count))
        probs = mc.forward(w, np.ones((4, 2)))
        assert np.allclose(probs, 0.5)

    def test_duplicate_rows_identical(self, small_weights):
        x = np.array([[1.0, -2.0], [1.0, -2.0]])
        probs = mc.forward(small_weights, x)
        assert np.array_equal(probs[0], probs[1])

    def test_dimension_mismatch(self, small_weights):
        with pytest.raises(ValueError):
            mc.forward(small_weights, np.zeros((3, 5)))


class TestLoss:
    def test_zero_weights_is_log_c(self, small_shape):
        w = WeightVector(small_shape, np.zeros(small_shape.parameter_count))
        batch = Batch(np.ones((6, 2)), np.zeros(6, dtype=np.int64))
        assert abs(mc.loss(w, batch) - np.log(2)) < 1e-9

    def test_single_sample_equals_own_cross_entropy(self, small_weights):
        batch = random_batch(small_weights.shape, 1, seed=5)
        probs = mc.forward(small_weights, batch.inputs)
        expected = -np.log(probs[0, batch.labels[0]])
        assert abs(mc.loss(small_weights, batch) - expected) < 1e-12

    def test_label_out_of_range(self, small_weights):
        with pytest.raises(ValueError):
            mc.loss(small_weights, Batch(np.zeros((1, 2)), np.array([9])))

    def test_nonnegative_and_finite(self, small_weights):
        batch = random_batch(small_weights.shape, 32, seed=1)
        value = mc.loss(small_weights, batch)
        assert np.isfinite(value) and value >= 0


class TestGradient:
    def test_matches_finite_differences(self, small_weights):
        batch = random_batch(small_weights.shape, 8, seed=2)
        analytic = mc.gradient(small_weights, batch).values
        numeric = finite_difference_gradient(small_weights, batch)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-6)
        assert rel.max() <= 1e-4

    def test_duplicated_batch_unchanged(self, small_weights):
        batch = random_batch(small_weights.shape, 5, seed=3)
        doubled = Batch(np.vstack([batch.inputs, batch.inputs]),
                        np.concatenate([batch.labels, batch.labels]))
        g1 = mc.gradient(small_weights, batch).values
        g2 = mc.gradient(small_weights, doubled).values
        assert np.allclose(g1, g2, atol=1e-14)

    def test_zero_inputs_kill_first_layer_weight_grads(self, small_weights):
        batch = Batch(np.zeros((4, 2)), np.array([0, 1, 0, 1]))
        grad = mc.gradient(small_weights, batch).values
        assert np.array_equal(grad[:6], np.zeros(6))  # first-layer matrix block

    def test_descent_direction(self, small_weights):
        batch = random_batch(small_weights.shape, 16, seed=4)
        grad = mc.gradient(small_weights, batch)
        stepped = WeightVector(small_weights.shape,
                               small_weights.values - 1e-3 * grad.values)
        assert mc.loss(stepped, batch) <= mc.loss(small_weights, batch) + 1e-9


class TestAdam:
    def test_step_count_increments(self, small_weights):
        opt = OptimizerState.fresh(small_weights.values.size)
        grad = WeightVector(small_weights.shape, np.ones_like(small_weights.values))
        mc.adam_step(small_weights, grad, opt)
        assert opt.step_count == 1
        mc.adam_step(small_weights, grad, opt)
        assert opt.step_count == 2

    def test_first_step_size(self, small_weights):
        opt = OptimizerState.fresh(small_weights.values.size, learning_rate=0.5,
                                   epsilon=0.0)
        grad = WeightVector(small_weights.shape, np.ones_like(small_weights.values))
        new = mc.adam_step(small_weights, grad, opt)
        # With bias correction the first step is exactly lr * sign(gradient).
        assert np.allclose(small_weights.values - new.values, 0.5)


class TestTrain:
    def test_zero_lr_keeps_weights(self, small_weights):
        batch = random_batch(small_weights.shape, 10, seed=6)
        opt = OptimizerState.fresh(small_weights.values.size, learning_rate=0.0)
        w, _ = mc.train(small_weights, batch, opt, epochs=1, minibatch_size=4,
                        patience=3, holdout_fraction=0.0, seed=0)
        assert np.array_equal(w.values, small_weights.values)

    def test_rejects_zero_epochs(self, small_weights):
        batch = random_batch(small_weights.shape, 10, seed=6)
        opt = OptimizerState.fresh(small_weights.values.size)
        with pytest.raises(ValueError):
            mc.train(small_weights, batch, opt, epochs=0, minibatch_size=4,
                     patience=3, holdout_fraction=0.0, seed=0)

    def test_separable_blobs_learned(self):
        shape = LayerShape(2, (8,), 2)
        rng = np.random.default_rng(0)
        x = np.vstack([rng.normal(loc=(-3, 0), scale=0.3, size=(60, 2)),
                       rng.normal(loc=(3, 0), scale=0.3, size=(60, 2))])
        y = np.array([0] * 60 + [1] * 60)
        batch = Batch(x, y)
        opt = OptimizerState.fresh(shape.parameter_count, learning_rate=0.01)
        w, _ = mc.train(mc.init_weights(shape, 1), batch, opt, epochs=15,
                        minibatch_size=16, patience=3, holdout_fraction=0.1,
                        seed=2)
        assert mc.accuracy(w, batch) >= 0.95

    def test_deterministic(self, small_weights):
        batch = random_batch(small_weights.shape, 40, seed=8)
        results = []
        for _ in range(2):
            opt = OptimizerState.fresh(small_weights.values.size)
            w, _ = mc.train(small_weights, batch, opt, epochs=3,
                            minibatch_size=8, patience=3,
                            holdout_fraction=0.1, seed=9)
            results.append(w.values)
        assert np.array_equal(results[0], results[1])


class TestAccuracy:
    def test_single_class_tiebreak(self, small_shape):
        w = WeightVector(small_shape, np.zeros(small_shape.parameter_count))
        batch = Batch(np.ones((5, 2)), np.zeros(5, dtype=np.int64))
        assert mc.accuracy(w, batch) == 1.0

    def test_all_wrong(self, small_shape):
        w = WeightVector(small_shape, np.zeros(small_shape.parameter_count))
        batch = Batch(np.ones((5, 2)), np.ones(5, dtype=np.int64))
        assert mc.accuracy(w, batch) == 0.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 20))
def test_softmax_rows_sum_to_one_property(seed, n):
    shape = LayerShape(3, (4,), 3)
    w = mc.init_weights(shape, seed)
    x = np.random.default_rng(seed).normal(scale=5.0, size=(n, 3))
    probs = mc.forward(w, x)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
