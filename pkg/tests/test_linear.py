"""Tests for linear quantile regression."""

import numpy as np
import pytest

from hytemp.errors import InputError
from hytemp.linear import LinearQuantileModel, fit_linear, least_squares_start
from hytemp.models import TrainConfig
from hytemp.network import pinball_objective
from hytemp.quantiles import QuantileGrid

GRID = QuantileGrid((0.1, 0.5, 0.9))
CONFIG = TrainConfig(linear_max_epochs=200, patience=10)


def linear_data(n: int = 2000, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    y = np.column_stack(
        [
            2.0 * x[:, 0] - x[:, 1] + rng.uniform(-1, 1, n),
            0.5 * x[:, 1] + 3.0 + rng.normal(0, 0.5, n),
        ]
    )
    return x, y


class TestLeastSquaresStart:
    """Tests for the least squares starting point."""

    def test_quantiles_cover_their_levels(self) -> None:
        x, y = linear_data()
        net = least_squares_start(x, y, GRID)
        pred = net.predict(x)
        coverage = (y[:, :, None] <= pred).mean(axis=0)
        np.testing.assert_allclose(coverage, np.tile(GRID.as_array(), (2, 1)), atol=0.01)

    def test_shared_slopes(self) -> None:
        x, y = linear_data()
        model = LinearQuantileModel(least_squares_start(x, y, GRID), history=None)  # type: ignore[arg-type]
        coef = model.coefficients
        assert coef.shape == (2, 2, 3)
        np.testing.assert_allclose(coef[:, :, 0], coef[:, :, 2])
        assert coef[0, 0, 1] == pytest.approx(2.0, abs=0.05)
        assert np.all(np.diff(model.intercepts, axis=1) > 0)


class TestFitLinear:
    """Tests for fit_linear."""

    def test_recovers_slopes_and_coverage(self) -> None:
        x, y = linear_data(n=10_000)
        model = fit_linear(x, y, GRID, CONFIG)
        assert model.coefficients[0, 0, 1] == pytest.approx(2.0, abs=0.05)
        assert model.coefficients[1, 0, 1] == pytest.approx(-1.0, abs=0.05)
        assert model.intercepts[1, 1] == pytest.approx(3.0, abs=0.05)
        coverage = (y[:, :, None] <= model.predict(x)).mean(axis=0)
        np.testing.assert_allclose(coverage, np.tile(GRID.as_array(), (2, 1)), atol=0.02)

    def test_noiseless_line_is_exact_at_every_level(self) -> None:
        x = np.linspace(-3, 3, 500)[:, None]
        model = fit_linear(x, 2.0 * x + 1.0, GRID, CONFIG)
        np.testing.assert_allclose(model.coefficients[0, 0], 2.0, atol=1e-2)
        np.testing.assert_allclose(model.intercepts[0], 1.0, atol=1e-2)

    def test_no_single_weight_change_lowers_the_loss(self) -> None:
        x, y = linear_data(n=10_000, seed=3)
        model = fit_linear(x, y, GRID, TrainConfig(linear_max_epochs=2000, patience=10))
        net = model.network
        levels = GRID.as_array()
        base, _, _ = pinball_objective(net.predict(x), [(y, 1.0)], levels)
        for which in range(2):
            for index in np.ndindex(net.parameters()[which].shape):
                for step in (-1e-2, 1e-2):
                    params = [p.copy() for p in net.parameters()]
                    params[which][index] += step
                    moved = net.with_parameters(params).predict(x)
                    assert pinball_objective(moved, [(y, 1.0)], levels)[0] >= base - 1e-9

    def test_needs_more_rows_than_features(self) -> None:
        with pytest.raises(InputError, match="more rows than features"):
            fit_linear(np.ones((3, 3)), np.ones((3, 1)), GRID, CONFIG)

    def test_training_never_loses_to_start(self) -> None:
        x, y = linear_data(n=300, seed=1)
        model = fit_linear(x, y, GRID, CONFIG)
        history = model.history
        assert history.validation_loss[history.best_epoch] <= history.validation_loss[0]
        assert model.weight_count == (2 + 1) * 2 * 3

    def test_physics_term_pulls_towards_target(self) -> None:
        x, y = linear_data(n=500, seed=2)
        shifted = y + 5.0
        plain = fit_linear(x, y, GRID, CONFIG)
        fast = TrainConfig(linear_max_epochs=200, linear_learning_rate=0.05)
        pulled = fit_linear(x, y, GRID, fast, extra_targets=[(shifted, 5.0)])
        assert pulled.intercepts[:, 1].mean() > plain.intercepts[:, 1].mean() + 1.0

    def test_rejects_empty_and_mismatched(self) -> None:
        with pytest.raises(InputError):
            fit_linear(np.empty((0, 2)), np.empty((0, 1)), GRID, CONFIG)
        with pytest.raises(InputError, match="rows"):
            fit_linear(np.ones((5, 2)), np.ones((4, 1)), GRID, CONFIG)

    def test_rejects_hidden_layers(self) -> None:
        from hytemp.network import init_network

        net = init_network(2, (3,), 1, 3, "relu", np.random.default_rng(0))
        with pytest.raises(InputError, match="hidden"):
            LinearQuantileModel(net, history=None)  # type: ignore[arg-type]
