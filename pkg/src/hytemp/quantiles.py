"""Quantile grids, forecasts, the pinball loss and the empirical-quantile convention.

Empirical quantiles use one order-statistic convention everywhere in the
package: the level-p quantile of n sorted values is the k-th smallest value
with ``k = ceil(p * n)`` clipped to ``[1, n]``.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from hytemp.errors import InputError

# Absorbs float error in p * n (0.07 * 100 == 7.000000000000001).
ORDER_EPS = 1e-9
LEVEL_TOL = 1e-9


@dataclass(frozen=True)
class QuantileGrid:
    """Ordered probability levels in the open interval (0, 1).

    Attributes:
        levels: Strictly increasing quantile levels.
    """

    levels: tuple[float, ...]

    def __post_init__(self) -> None:
        levels = tuple(float(q) for q in self.levels)
        if not levels:
            raise InputError("quantile grid must contain at least one level")
        for q in levels:
            if not 0.0 < q < 1.0:
                raise InputError(f"quantile level {q} is outside (0, 1)")
        for a, b in zip(levels, levels[1:]):
            if not b > a:
                raise InputError(f"quantile levels must be strictly increasing ({a} >= {b})")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def default(cls) -> QuantileGrid:
        """The 99-level grid {0.01, 0.02, ..., 0.99}."""
        return cls.uniform(99)

    @classmethod
    def uniform(cls, count: int) -> QuantileGrid:
        """Grid of ``count`` equally spaced levels i / (count + 1)."""
        if count < 1:
            raise InputError(f"quantile count must be positive, got {count}")
        return cls(tuple(round(i / (count + 1), 12) for i in range(1, count + 1)))

    def __len__(self) -> int:
        return len(self.levels)

    def as_array(self) -> np.ndarray:
        """Levels as a float array."""
        return np.asarray(self.levels, dtype=float)

    def index_of(self, level: float) -> int:
        """Return the position of ``level`` on the grid (exact lookup, no interpolation).

        Raises:
            InputError: If the level is not on the grid.
        """
        for i, q in enumerate(self.levels):
            if abs(q - level) <= LEVEL_TOL:
                return i
        raise InputError(f"quantile level {level:g} is not on the grid")

    def interval_indices(self, alpha: float) -> tuple[int, int]:
        """Grid positions of the α/2 and 1-α/2 levels of a (1-α) interval."""
        if not 0.0 < alpha < 1.0:
            raise InputError(f"alpha must lie in (0, 1), got {alpha}")
        return self.index_of(alpha / 2), self.index_of(1 - alpha / 2)

    def symmetric_alphas(self) -> list[float]:
        """Every α whose interval levels (q, 1-q) both lie on the grid, q < 0.5."""
        alphas = []
        for q in self.levels:
            if q >= 0.5 - LEVEL_TOL:
                break
            try:
                self.index_of(1 - q)
            except InputError:
                continue
            alphas.append(round(2 * q, 12))
        return alphas


def order_statistic_index(p: float, n: int) -> int:
    """One-based order-statistic index ``ceil(p * n)`` clipped to ``[1, n]``."""
    if n < 1:
        raise InputError("cannot take a quantile of an empty sample")
    k = math.ceil(p * n - ORDER_EPS)
    return min(max(k, 1), n)


def empirical_quantile(values: np.ndarray | Sequence[float], p: float) -> float:
    """Level-p empirical quantile using the package's order-statistic convention."""
    data = np.sort(np.asarray(values, dtype=float).ravel())
    k = order_statistic_index(p, data.size)
    return float(data[k - 1])


def empirical_quantiles(values: np.ndarray, levels: np.ndarray, axis: int = 0) -> np.ndarray:
    """Empirical quantiles of ``values`` along ``axis`` at every level.

    The level axis is appended as the last axis of the result.
    """
    data = np.sort(np.asarray(values, dtype=float), axis=axis)
    n = data.shape[axis]
    idx = np.array([order_statistic_index(float(p), n) - 1 for p in levels])
    picked = np.take(data, idx, axis=axis)
    return np.moveaxis(picked, axis, -1)


def pinball_loss(
    q: float | np.ndarray, y: float | np.ndarray, y_hat: float | np.ndarray
) -> float | np.ndarray:
    """Pinball (quantile) loss, elementwise.

    ``q * (y - y_hat)`` when ``y >= y_hat``, else ``(q - 1) * (y - y_hat)``.

    Raises:
        InputError: If any level lies outside (0, 1).
    """
    q_arr = np.asarray(q, dtype=float)
    if np.any((q_arr <= 0.0) | (q_arr >= 1.0)):
        raise InputError("quantile level must lie in (0, 1)")
    diff = np.asarray(y, dtype=float) - np.asarray(y_hat, dtype=float)
    loss = np.where(diff >= 0, q_arr * diff, (q_arr - 1.0) * diff)
    if loss.ndim == 0:
        return float(loss)
    return loss


@dataclass(frozen=True)
class QuantileForecast:
    """Predicted temperature quantiles.

    Attributes:
        values: Array of shape (N, K, Q) in °C.
        grid: Quantile levels of the last axis.
        room_ids: Identifiers of the K rooms.
    """

    values: np.ndarray
    grid: QuantileGrid
    room_ids: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 3:
            raise InputError(f"forecast values must be (N, K, Q), got shape {values.shape}")
        if values.shape[2] != len(self.grid):
            raise InputError(
                f"forecast has {values.shape[2]} levels but the grid has {len(self.grid)}"
            )
        room_ids = tuple(self.room_ids) or tuple(f"room{k}" for k in range(values.shape[1]))
        if len(room_ids) != values.shape[1]:
            raise InputError(
                f"forecast has {values.shape[1]} rooms but {len(room_ids)} room ids"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "room_ids", room_ids)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_rooms(self) -> int:
        return self.values.shape[1]

    def level(self, q: float) -> np.ndarray:
        """(N, K) predictions at level ``q``."""
        return self.values[:, :, self.grid.index_of(q)]

    def interval(self, alpha: float) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper (N, K) bounds of the (1-α) interval."""
        lo, hi = self.grid.interval_indices(alpha)
        return self.values[:, :, lo], self.values[:, :, hi]

    def with_values(self, values: np.ndarray) -> QuantileForecast:
        """Copy of this forecast with new values on the same grid and rooms."""
        return QuantileForecast(np.array(values, dtype=float), self.grid, self.room_ids)

    def rows(self, index: np.ndarray) -> QuantileForecast:
        """Forecast restricted to the given rows."""
        return self.with_values(self.values[index])

    def is_monotone(self) -> bool:
        """True if values are non-decreasing along the level axis."""
        return bool(np.all(np.diff(self.values, axis=2) >= 0))


def sort_quantiles(forecast: QuantileForecast) -> QuantileForecast:
    """Sort each (row, room) quantile vector ascending to remove quantile crossings."""
    return forecast.with_values(np.sort(forecast.values, axis=2))
