"""Small datasets shared by the tests."""

import numpy as np
import pandas as pd

from hytemp.dataset import STEP, FeatureSchema, TimeSeriesDataset, room_feature
from hytemp.quantiles import QuantileForecast, QuantileGrid


def toy_dataset(
    n: int = 400,
    rooms: tuple[str, ...] = ("a", "b"),
    seed: int = 0,
    physics_bias: float = 0.5,
    noise: float = 0.1,
) -> TimeSeriesDataset:
    """Temperatures that depend linearly on weather and window state.

    The physics channel is the noise-free signal plus ``physics_bias``.
    """
    rng = np.random.default_rng(seed)
    timestamps = pd.date_range("2024-01-01", periods=n, freq=STEP)
    phase = 2 * np.pi * np.arange(n) / 96
    t_out = 10 + 5 * np.sin(phase) + rng.normal(0, 1, n)
    solar = np.clip(500 * np.sin(phase), 0, None)
    windows = (rng.random((n, len(rooms))) < 0.1).astype(float)
    names = ["weather_drybulb", "weather_solar_direct", *[room_feature(r, "window") for r in rooms]]
    features = np.column_stack([t_out, solar, windows])
    signal = 20 + 0.3 * (t_out - 10)[:, None] + 0.002 * solar[:, None] - 2 * windows + 0.5 * np.arange(len(rooms))
    temperatures = signal + noise * rng.standard_normal((n, len(rooms)))
    return TimeSeriesDataset(
        timestamps=timestamps,
        features=features,
        schema=FeatureSchema.from_names(names),
        temperatures=temperatures,
        room_ids=rooms,
        physics=signal + physics_bias,
    )


def constant_forecast(values: np.ndarray, grid: QuantileGrid, rooms: tuple[str, ...] | None = None) -> QuantileForecast:
    """Forecast with the same (N, K) value at every level."""
    base = np.asarray(values, dtype=float)
    stacked = np.repeat(base[:, :, None], len(grid), axis=2)
    return QuantileForecast(stacked, grid, rooms or tuple(f"r{k}" for k in range(base.shape[1])))


def interval_forecast(lower: np.ndarray, upper: np.ndarray, alpha: float = 0.1) -> QuantileForecast:
    """Three-level forecast (α/2, 0.5, 1-α/2) with the given bounds and midpoint median."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    grid = QuantileGrid((alpha / 2, 0.5, 1 - alpha / 2))
    values = np.stack([lo, 0.5 * (lo + hi), hi], axis=-1)
    return QuantileForecast(values, grid, tuple(f"r{k}" for k in range(lo.shape[1])))
