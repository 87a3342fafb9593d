import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfkit.mlr import (
    TrainConfig,
    cross_entropy,
    gradient,
    init_model,
    logits,
    new_sag_state,
    posterior,
    sag_epoch,
    train,
)
from rfkit.rng import stream
from tests.conftest import make_separable


def random_instance(seed, n=10, d=4, c=3):
    rng = stream(seed, "test-mlr")
    X = rng.normal(size=(n, d))
    y = rng.integers(0, c, size=n)
    model = init_model(d, c)
    model.weights[:] = rng.normal(0, 0.5, size=model.weights.shape)
    return model, X, y


class TestInitModel:
    def test_uniform_posterior(self):
        model = init_model(5, 10)
        p = posterior(model, np.ones((3, 5)))
        assert np.allclose(p, 0.1)

    def test_initial_cross_entropy_is_log_c(self):
        model = init_model(4, 7)
        X = stream(0, "t").normal(size=(6, 4))
        y = np.arange(6) % 7
        assert cross_entropy(model, X, y) == pytest.approx(np.log(7))

    def test_initial_perplexity_is_c(self):
        from rfkit.metrics import perplexity

        model = init_model(4, 7)
        X = stream(0, "t").normal(size=(6, 4))
        y = np.arange(6) % 7
        assert perplexity(posterior(model, X), y) == pytest.approx(7.0)

    def test_rejects_single_class(self):
        with pytest.raises(ValueError):
            init_model(4, 1)


class TestLogits:
    def test_zero_model(self):
        model = init_model(3, 2)
        assert np.all(logits(model, np.ones((4, 3))) == 0.0)

    def test_single_feature_with_bias(self):
        model = init_model(1, 2)
        model.weights[0] = [2.0, 3.0]  # w * 1 + b = 5
        assert logits(model, np.array([[1.0]]))[0, 0] == 5.0

    def test_matches_naive_loop(self):
        model, X, y = random_instance(1)
        expected = np.empty((len(X), model.num_classes))
        for n, x in enumerate(X):
            for c in range(model.num_classes):
                expected[n, c] = model.weights[c, :-1] @ x + model.weights[c, -1]
        assert np.allclose(logits(model, X), expected, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            logits(init_model(3, 2), np.ones((4, 5)))


class TestPosterior:
    def test_uniform_at_zero_logits(self):
        p = posterior(init_model(2, 10), np.zeros((1, 2)))
        assert np.allclose(p, 0.1)

    def test_analytic_softmax(self):
        model = init_model(1, 2)
        model.weights[0, 0] = np.log(2.0)  # logits (ln2 * x, 0)
        p = posterior(model, np.array([[1.0]]))
        assert np.allclose(p, [[2 / 3, 1 / 3]])

    def test_shift_invariance(self):
        model, X, _ = random_instance(2)
        shifted = logits(model, X) + 1000.0
        from rfkit.mlr import softmax

        assert np.allclose(softmax(shifted), posterior(model, X), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6))
    def test_rows_sum_to_one(self, seed):
        model, X, _ = random_instance(seed)
        p = posterior(model, X)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p > 0) and np.all(p < 1)


class TestCrossEntropy:
    def test_perfect_posteriors_near_zero(self):
        model = init_model(1, 2)
        model.weights[0, 0] = 50.0
        X = np.ones((4, 1))
        y = np.zeros(4, dtype=int)
        assert cross_entropy(model, X, y) < 1e-9

    def test_uniform_gives_log_c(self):
        model = init_model(3, 5)
        assert cross_entropy(model, np.ones((2, 3)), np.array([0, 4])) == pytest.approx(np.log(5))

    def test_exp_equals_perplexity(self):
        from rfkit.metrics import perplexity

        model, X, y = random_instance(3)
        ce = cross_entropy(model, X, y)
        assert np.exp(ce) == pytest.approx(perplexity(posterior(model, X), y), rel=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(init_model(2, 3), np.ones((1, 2)), np.array([3]))


class TestGradient:
    def test_zero_at_perfect_fit(self):
        model = init_model(1, 2)
        model.weights[0, 0] = 500.0
        g = gradient(model, np.array([[1.0]]), np.array([0]))
        assert np.all(np.abs(g) < 1e-12)

    def test_central_finite_differences(self):
        model, X, y = random_instance(4, n=5, d=4, c=3)
        g = gradient(model, X, y)
        eps = 1e-5
        for c in range(model.num_classes):
            for j in range(model.feature_dim + 1):
                w_plus = model.weights.copy()
                w_minus = model.weights.copy()
                w_plus[c, j] += eps
                w_minus[c, j] -= eps
                model_p = init_model(model.feature_dim, model.num_classes)
                model_m = init_model(model.feature_dim, model.num_classes)
                model_p.weights[:] = w_plus
                model_m.weights[:] = w_minus
                fd = (cross_entropy(model_p, X, y) - cross_entropy(model_m, X, y)) / (2 * eps)
                assert abs(g[c, j] - fd) <= 1e-5 * max(1.0, abs(fd))

    def test_bias_only_two_samples(self):
        # zero features: gradient reduces to averaged (p - onehot) in the bias column
        model = init_model(1, 2)
        X = np.zeros((2, 1))
        y = np.array([0, 1])
        g = gradient(model, X, y)
        assert np.allclose(g[:, 0], 0.0)
        assert np.allclose(g[:, 1], [0.0, 0.0])  # p - y averages cancel at uniform
        model.weights[:, 1] = [1.0, 0.0]
        g = gradient(model, X, y)
        p1 = np.exp(1) / (np.exp(1) + 1)
        expected = np.array([(p1 - 1) + p1, (1 - p1) + (1 - p1 - 1)]) / 2
        assert np.allclose(g[:, 1], expected, atol=1e-12)


class TestSagEpoch:
    def test_single_sample_equals_gradient_descent(self):
        X = np.array([[0.4, -0.2]])
        y = np.array([1])
        step = 0.3
        model = init_model(2, 2)
        state = new_sag_state(1, 2, 2, seed=0)
        gd_weights = np.zeros((2, 3))
        for _ in range(10):
            model, state = sag_epoch(model, state, X, y, step)
            gd_model = init_model(2, 2)
            gd_model.weights[:] = gd_weights
            gd_weights = gd_weights - step * gradient(gd_model, X, y)
            assert np.allclose(model.weights, gd_weights, atol=1e-12)

    def test_aggregate_consistency_invariant(self):
        rng = stream(5, "test-sag")
        X = rng.normal(size=(40, 6))
        y = rng.integers(0, 4, size=40)
        model = init_model(6, 4)
        state = new_sag_state(40, 4, 6, seed=1)
        for _ in range(3):
            model, state = sag_epoch(model, state, X, y, 0.05)
            recomputed = state.recompute_aggregate(X)
            denom = max(np.abs(recomputed).max(), 1.0)
            assert np.abs(state.aggregate_grad - recomputed).max() / denom < 1e-8

    def test_matches_full_batch_gd_on_separable_toy(self):
        X, y = make_separable(0, n=100, d=2)
        model = init_model(2, 2)
        state = new_sag_state(100, 2, 2, seed=2)
        for _ in range(50):
            model, state = sag_epoch(model, state, X, y, 0.5)
        sag_loss = cross_entropy(model, X, y)

        gd = init_model(2, 2)
        for _ in range(5000):
            gd.weights -= 0.5 * gradient(gd, X, y)
        gd_loss = cross_entropy(gd, X, y)
        assert sag_loss <= gd_loss + 1e-3

    def test_minibatch_preserves_invariant(self):
        rng = stream(6, "t")
        X = rng.normal(size=(30, 4))
        y = rng.integers(0, 3, size=30)
        model = init_model(4, 3)
        state = new_sag_state(30, 3, 4, seed=3)
        model, state = sag_epoch(model, state, X, y, 0.05, minibatch=7)
        recomputed = state.recompute_aggregate(X)
        assert np.allclose(state.aggregate_grad, recomputed, atol=1e-10)

    def test_inconsistent_state_rejected(self):
        model = init_model(4, 3)
        state = new_sag_state(10, 3, 4, seed=0)
        with pytest.raises(ValueError):
            sag_epoch(model, state, np.zeros((11, 4)), np.zeros(11, dtype=int), 0.1)


class TestConvexity:
    def test_midpoint_inequality_along_random_segments(self):
        rng = stream(7, "test-convex")
        X = rng.normal(size=(15, 5))
        y = rng.integers(0, 3, size=15)

        def loss_at(w):
            m = init_model(5, 3)
            m.weights[:] = w
            return cross_entropy(m, X, y)

        for _ in range(20):
            a = rng.normal(size=(3, 6))
            b = rng.normal(size=(3, 6))
            mid = loss_at((a + b) / 2)
            assert mid <= (loss_at(a) + loss_at(b)) / 2 + 1e-10


class TestTrain:
    def test_zero_epochs_returns_init(self):
        X, y = make_separable(1, n=50)
        config = TrainConfig(step_size=0.1, max_epochs=0)
        model, history = train(config, X[:40], y[:40], X[40:], y[40:])
        assert history == []
        assert np.all(model.weights == 0.0)

    def test_separable_reaches_full_accuracy(self):
        X, y = make_separable(2, n=200, d=2, margin=1.5)
        config = TrainConfig(step_size=0.1, max_epochs=20, early_stop_patience=20)
        model, history = train(config, X[:150], y[:150], X[150:], y[150:])
        assert history[-1].heldout_accuracy == 1.0

    def test_epoch_zero_baseline_perplexity_is_c(self):
        X, y = make_separable(3, n=60)
        config = TrainConfig(step_size=0.1, max_epochs=3)
        _, history = train(config, X[:50], y[:50], X[50:], y[50:])
        assert history[0].epoch == 0
        assert history[0].heldout_perplexity == pytest.approx(2.0)

    def test_returns_argmin_perplexity_snapshot(self):
        rng = stream(8, "t")
        X = rng.normal(size=(80, 3))
        y = rng.integers(0, 2, size=80)  # pure noise: perplexity wanders
        config = TrainConfig(step_size=2.0, max_epochs=15, early_stop_patience=15)
        model, history = train(config, X[:60], y[:60], X[60:], y[60:])
        best = min(h.heldout_perplexity for h in history)
        from rfkit.metrics import perplexity

        achieved = perplexity(posterior(model, X[60:]), y[60:])
        assert achieved == pytest.approx(best, rel=1e-12)

    def test_empty_training_set_rejected(self):
        config = TrainConfig(step_size=0.1)
        with pytest.raises(ValueError):
            train(config, np.zeros((0, 3)), np.zeros(0, dtype=int), np.zeros((2, 3)), np.array([0, 1]))

    def test_early_stopping_stops(self):
        rng = stream(9, "t")
        X = rng.normal(size=(50, 3))
        y = rng.integers(0, 2, size=50)
        config = TrainConfig(step_size=5.0, max_epochs=200, early_stop_patience=3)
        _, history = train(config, X[:40], y[:40], X[40:], y[40:])
        assert len(history) < 200
