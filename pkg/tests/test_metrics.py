"""Tests for the probabilistic scores."""

import numpy as np
import pytest
from scipy.stats import norm

from hytemp.errors import InputError
from hytemp.metrics import (
    DEFAULT_CONFIDENCES,
    ace,
    coverage,
    evaluate,
    interval_width,
    pbl,
    reliability_curve,
    winkler,
    window_open_pbl,
)
from hytemp.quantiles import QuantileForecast, QuantileGrid
from tests.factories import constant_forecast, interval_forecast


def oracle_forecast(n: int, seed: int = 0) -> tuple[QuantileForecast, np.ndarray]:
    """Standard normal outcomes and their true quantiles on the default grid."""
    grid = QuantileGrid.default()
    y = np.random.default_rng(seed).normal(size=(n, 1))
    values = np.broadcast_to(norm.ppf(grid.as_array()), (n, 1, len(grid)))
    return QuantileForecast(values, grid, ("r0",)), y


class TestPinball:
    """Tests for pbl."""

    def test_exact_forecast_scores_zero(self) -> None:
        y = np.array([[20.0, 21.0], [22.0, 23.0]])
        forecast = constant_forecast(y, QuantileGrid((0.1, 0.5, 0.9)))
        np.testing.assert_array_equal(pbl(forecast, y).per_room, [0.0, 0.0])

    def test_constant_offset(self) -> None:
        forecast = constant_forecast(np.full((4, 1), 21.0), QuantileGrid((0.1, 0.5, 0.9)))
        scores = pbl(forecast, np.full((4, 1), 22.0))
        assert scores.per_room[0] == pytest.approx(0.5, abs=1e-12)
        np.testing.assert_allclose(scores.by_level[0], [0.1, 0.5, 0.9], atol=1e-12)

    def test_two_point_symmetry(self) -> None:
        forecast = constant_forecast(np.full((2, 1), 22.0), QuantileGrid((0.5,)))
        assert pbl(forecast, np.array([[20.0], [24.0]])).per_room[0] == pytest.approx(1.0, abs=1e-12)

    def test_alignment(self) -> None:
        forecast = constant_forecast(np.zeros((3, 1)), QuantileGrid((0.5,)))
        with pytest.raises(InputError, match="aligned"):
            pbl(forecast, np.zeros((2, 1)))

    def test_oracle_curve_peaks_at_median(self) -> None:
        forecast, y = oracle_forecast(5000)
        curve = pbl(forecast, y).by_level[0]
        grid = forecast.grid
        assert curve[grid.index_of(0.01)] < curve[grid.index_of(0.5)]
        assert curve[grid.index_of(0.99)] < curve[grid.index_of(0.5)]


class TestIntervalScores:
    """Tests for ace, winkler and interval_width."""

    def inside_fraction(self, inside: int) -> tuple[QuantileForecast, np.ndarray]:
        forecast = interval_forecast(np.zeros((100, 1)), np.ones((100, 1)))
        y = np.full((100, 1), 2.0)
        y[:inside] = 0.5
        return forecast, y

    @pytest.mark.parametrize(("inside", "expected"), [(90, 0.0), (100, 0.1), (0, -0.9)])
    def test_ace_examples(self, inside: int, expected: float) -> None:
        forecast, y = self.inside_fraction(inside)
        assert ace(forecast, y, 0.1)[0] == pytest.approx(expected, abs=1e-12)

    def test_boundary_counts_as_covered(self) -> None:
        forecast = interval_forecast(np.zeros((2, 1)), np.ones((2, 1)))
        assert coverage(forecast, np.array([[0.0], [1.0]]), 0.1)[0] == 1.0

    @pytest.mark.parametrize(("y", "expected"), [(2.0, 2.0), (0.0, 22.0), (4.0, 22.0)])
    def test_winkler_examples(self, y: float, expected: float) -> None:
        forecast = interval_forecast(np.array([[1.0]]), np.array([[3.0]]))
        assert winkler(forecast, np.array([[y]]), 0.1)[0] == pytest.approx(expected, abs=1e-12)

    def test_winkler_decomposition(self) -> None:
        rng = np.random.default_rng(4)
        lower = rng.normal(size=(200, 3))
        upper = lower + rng.random((200, 3))
        y = rng.normal(size=(200, 3))
        forecast = interval_forecast(lower, upper)
        exceedance = np.maximum(lower - y, 0) + np.maximum(y - upper, 0)
        expected = interval_width(forecast, 0.1) + (2 / 0.1) * exceedance.mean(axis=0)
        np.testing.assert_allclose(winkler(forecast, y, 0.1), expected, atol=1e-10)
        assert np.all(winkler(forecast, y, 0.1) >= interval_width(forecast, 0.1))

    def test_ace_bounds(self) -> None:
        rng = np.random.default_rng(5)
        lower = rng.normal(size=(50, 4))
        forecast = interval_forecast(lower, lower + rng.random((50, 4)))
        values = ace(forecast, rng.normal(size=(50, 4)), 0.1)
        assert np.all(values >= -0.9) and np.all(values <= 0.1)

    def test_levels_must_be_on_grid(self) -> None:
        forecast = interval_forecast(np.zeros((2, 1)), np.ones((2, 1)))
        with pytest.raises(InputError, match="not on the grid"):
            ace(forecast, np.zeros((2, 1)), 0.2)


class TestReliability:
    """Tests for reliability_curve."""

    def test_oracle_is_calibrated(self) -> None:
        forecast, y = oracle_forecast(10_000, seed=1)
        curve = reliability_curve(forecast, y)[0]
        assert np.all(np.abs(curve - np.array(DEFAULT_CONFIDENCES)) <= 0.02)

    def test_degenerate_forecast_covers_nothing(self) -> None:
        grid = QuantileGrid.default()
        forecast = constant_forecast(np.zeros((100, 1)), grid)
        y = np.random.default_rng(2).normal(size=(100, 1))
        assert np.all(reliability_curve(forecast, y) == 0.0)

    def test_widening_never_reduces_coverage(self) -> None:
        forecast, y = oracle_forecast(500, seed=3)
        spread = forecast.with_values(forecast.values * 1.5)
        assert np.all(reliability_curve(spread, y) >= reliability_curve(forecast, y))


class TestWindowOpenPbl:
    """Tests for window_open_pbl."""

    def test_only_open_rows_count(self) -> None:
        forecast = constant_forecast(np.zeros((4, 2)), QuantileGrid((0.5,)))
        y = np.array([[1.0, 0.0], [3.0, 0.0], [100.0, 0.0], [100.0, 0.0]])
        window = np.array([[1, 0], [1, 0], [0, 0], [0, 0]])
        out = window_open_pbl(forecast, y, window)
        assert out[0] == pytest.approx(1.0)
        assert np.isnan(out[1])


class TestEvaluate:
    """Tests for evaluate and EvaluationReport."""

    def test_small_grid_without_reliability(self) -> None:
        forecast = interval_forecast(np.zeros((10, 2)), np.ones((10, 2)))
        report = evaluate(forecast, np.full((10, 2), 0.5), [0.1], confidences=None)
        assert report.reliability is None
        np.testing.assert_allclose(report.ace[0.1], [0.1, 0.1])
        data = report.to_dict()
        assert data["ace"]["0.1"]["mean"] == pytest.approx(0.1)
        assert data["rooms"] == ["r0", "r1"]
        assert "reliability" not in data

    def test_default_grid_report(self) -> None:
        forecast, y = oracle_forecast(200)
        window = np.zeros((200, 1))
        report = evaluate(forecast, y, [0.1, 0.5], window=window)
        assert report.reliability.shape == (1, len(DEFAULT_CONFIDENCES))
        assert report.mean_pbl > 0
        assert np.isnan(report.window_pbl[0])
        assert np.isnan(report.to_dict()["window_open_pbl"]["mean"])
