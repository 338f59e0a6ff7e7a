"""Tests for the dense network, its pinball objective and the Adam trainer."""

import numpy as np
import pytest

from hytemp.errors import InputError, NumericalError
from hytemp.network import (
    Adam,
    DenseNetwork,
    TrainingHistory,
    TrainSettings,
    init_network,
    loss_and_gradients,
    pinball_objective,
    train_network,
)

LEVELS = np.array([0.1, 0.5, 0.9])


def small_network(activation: str = "tanh", seed: int = 0) -> DenseNetwork:
    return init_network(2, (4,), 2, len(LEVELS), activation, np.random.default_rng(seed))


class TestDenseNetwork:
    """Tests for DenseNetwork construction and prediction."""

    def test_output_width_must_be_rooms_times_levels(self) -> None:
        with pytest.raises(InputError, match="rooms x levels"):
            DenseNetwork((np.zeros((2, 5)),), (np.zeros(5),), "identity", 2, 3)

    def test_unknown_activation(self) -> None:
        with pytest.raises(InputError, match="activation"):
            DenseNetwork((np.zeros((2, 6)),), (np.zeros(6),), "softsign", 2, 3)

    def test_layer_shapes_must_chain(self) -> None:
        with pytest.raises(InputError):
            DenseNetwork((np.zeros((2, 4)), np.zeros((5, 6))), (np.zeros(4), np.zeros(6)), "relu", 2, 3)

    def test_predict_shape_and_layout(self) -> None:
        biases = np.arange(6, dtype=float)
        net = DenseNetwork((np.zeros((2, 6)),), (biases,), "identity", 2, 3)
        out = net.predict(np.ones((4, 2)))
        assert out.shape == (4, 2, 3)
        np.testing.assert_array_equal(out[0, 1], [3.0, 4.0, 5.0])

    def test_predict_checks_width(self) -> None:
        with pytest.raises(InputError, match="trained on 2"):
            small_network().predict(np.ones((3, 5)))

    def test_weights_are_read_only(self) -> None:
        net = small_network()
        assert not net.weights[0].flags.writeable
        assert net.hidden_sizes == (4,)
        assert net.parameter_count == 2 * 4 + 4 + 4 * 6 + 6


class TestPinballObjective:
    """Tests for the weighted pinball objective."""

    def test_single_value(self) -> None:
        predictions = np.zeros((1, 1, 3))
        total, terms, _ = pinball_objective(predictions, [(np.ones((1, 1)), 1.0)], LEVELS)
        assert total == pytest.approx(np.mean(LEVELS))
        assert terms == [pytest.approx(np.mean(LEVELS))]

    def test_zero_weight_term_is_reported_but_ignored(self) -> None:
        rng = np.random.default_rng(2)
        predictions = rng.normal(size=(8, 2, 3))
        y = rng.normal(size=(8, 2))
        physics = rng.normal(size=(8, 2))
        alone = pinball_objective(predictions, [(y, 1.0)], LEVELS)
        both = pinball_objective(predictions, [(y, 1.0), (physics, 0.0)], LEVELS)
        assert both[0] == alone[0]
        np.testing.assert_array_equal(both[2], alone[2])
        assert len(both[1]) == 2
        assert both[1][1] > 0.0

    def test_weighted_sum(self) -> None:
        rng = np.random.default_rng(3)
        predictions = rng.normal(size=(5, 1, 3))
        y = rng.normal(size=(5, 1))
        physics = rng.normal(size=(5, 1))
        total, terms, _ = pinball_objective(predictions, [(y, 1.0), (physics, 0.5)], LEVELS)
        assert total == pytest.approx(terms[0] + 0.5 * terms[1])


class TestGradients:
    """Backpropagation against central differences."""

    @pytest.mark.parametrize("activation", ["tanh", "sigmoid", "identity"])
    def test_matches_finite_differences(self, activation: str) -> None:
        rng = np.random.default_rng(7)
        net = small_network(activation, seed=1)
        x = rng.normal(size=(6, 2))
        targets = [(rng.normal(size=(6, 2)), 1.0), (rng.normal(size=(6, 2)), 0.5)]
        _, grads = loss_and_gradients(net, x, targets, LEVELS)
        params = [p.copy() for p in net.parameters()]
        eps = 1e-6
        for i, p in enumerate(params):
            numeric = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                shifted = [q.copy() for q in params]
                shifted[i][idx] += eps
                up = loss_and_gradients(net.with_parameters(shifted), x, targets, LEVELS)[0]
                shifted[i][idx] -= 2 * eps
                down = loss_and_gradients(net.with_parameters(shifted), x, targets, LEVELS)[0]
                numeric[idx] = (up - down) / (2 * eps)
            np.testing.assert_allclose(grads[i], numeric, rtol=1e-4, atol=1e-7)


class TestAdam:
    """Tests for the Adam optimizer."""

    def test_minimizes_quadratic(self) -> None:
        params = [np.array([5.0, -3.0])]
        optimizer = Adam(params)
        for _ in range(5000):
            optimizer.step(params, [2.0 * params[0]], 0.01)
        assert np.all(np.abs(params[0]) < 0.05)
        assert optimizer.t == 5000


class TestTrainNetwork:
    """Tests for train_network."""

    def test_zero_epochs_returns_start(self) -> None:
        net = small_network()
        x = np.ones((4, 2))
        out, history = train_network(net, x, [(np.zeros((4, 2)), 1.0)], LEVELS, TrainSettings(max_epochs=0))
        np.testing.assert_array_equal(out.weights[0], net.weights[0])
        assert history.epochs == 0
        assert history.best_epoch == 0

    def test_loss_never_worse_than_start(self) -> None:
        rng = np.random.default_rng(4)
        x = rng.normal(size=(64, 2))
        y = np.column_stack([x[:, 0] + 0.1 * rng.normal(size=64), -x[:, 1]])
        settings = TrainSettings(learning_rate=0.01, max_epochs=200, patience=20, batch_size=16)
        _, history = train_network(small_network(), x, [(y, 1.0)], LEVELS, settings)
        assert history.validation_loss[history.best_epoch] <= history.validation_loss[0]
        assert history.validation_loss[history.best_epoch] < 0.5 * history.validation_loss[0]
        assert len(history.train_loss) == history.epochs + 1

    def test_same_seed_same_weights(self) -> None:
        rng = np.random.default_rng(5)
        x = rng.normal(size=(40, 2))
        y = rng.normal(size=(40, 2))
        settings = TrainSettings(max_epochs=5, batch_size=8, seed=3)
        a, _ = train_network(small_network(), x, [(y, 1.0)], LEVELS, settings)
        b, _ = train_network(small_network(), x, [(y, 1.0)], LEVELS, settings)
        for wa, wb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(wa, wb)

    def test_non_finite_loss_names_epoch(self) -> None:
        x = np.ones((4, 2))
        x[0, 0] = np.nan
        with pytest.raises(NumericalError, match="epoch 1"):
            train_network(small_network(), x, [(np.zeros((4, 2)), 1.0)], LEVELS, TrainSettings(max_epochs=3))

    def test_empty_training_set(self) -> None:
        with pytest.raises(InputError, match="zero rows"):
            train_network(small_network(), np.empty((0, 2)), [(np.empty((0, 2)), 1.0)], LEVELS, TrainSettings())

    def test_history_arrays_round_trip(self) -> None:
        history = TrainingHistory(train_loss=[1.0, 0.5], data_loss=[1.0, 0.5], physics_loss=[np.nan, np.nan],
                                  validation_loss=[1.0, 0.6], learning_rate=[0.1, 0.1], best_epoch=1)
        back = TrainingHistory.from_arrays(history.to_arrays())
        assert back.train_loss == [1.0, 0.5]
        assert back.best_epoch == 1
        assert not back.stopped_early
