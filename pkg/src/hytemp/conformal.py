"""Conformalized quantile regression on a held-out calibration set."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
from scipy.stats import ks_2samp

from hytemp.errors import InputError, UsageError
from hytemp.quantiles import QuantileForecast, empirical_quantile

logger = logging.getLogger(__name__)

POOLED = "*"


def _alpha_key(alpha: float) -> float:
    return round(float(alpha), 9)


def nonconformity_scores(lower: np.ndarray, upper: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Signed distance of each outcome outside its interval, ``max(L - y, y - U)``.

    Negative exactly when y lies strictly inside [L, U].
    """
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    obs = np.asarray(y, dtype=float)
    if not lo.shape == hi.shape == obs.shape:
        raise InputError(f"misaligned scores inputs: lower {lo.shape}, upper {hi.shape}, y {obs.shape}")
    return np.maximum(lo - obs, obs - hi)


def compute_delta_q(scores: np.ndarray | Sequence[float], alpha: float) -> float:
    """Correction Δq: the ``(n+1)(1-α)/n`` empirical quantile of the scores.

    When that level exceeds 1 the largest score is used.

    Raises:
        InputError: For an empty score set or α outside (0, 1).
    """
    values = np.asarray(scores, dtype=float).ravel()
    n = values.size
    if n == 0:
        raise InputError("cannot calibrate on an empty score set")
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    level = (n + 1) * (1.0 - alpha) / n
    if level > 1.0:
        return float(values.max())
    return empirical_quantile(values, level)


@dataclass(frozen=True)
class ConformalCalibrator:
    """Δq and score count per (room, α); room ``"*"`` holds pooled corrections.

    Corrections for different α are stored as computed, monotone or not.
    """

    corrections: dict[tuple[str, float], float] = field(default_factory=dict)
    counts: dict[tuple[str, float], int] = field(default_factory=dict)
    pooled: bool = False

    def __post_init__(self) -> None:
        for key, delta in self.corrections.items():
            if not np.isfinite(delta):
                raise InputError(f"non-finite correction for {key}")
            if self.counts.get(key, 0) < 1:
                raise InputError(f"correction for {key} has no scores")

    def delta(self, room: str, alpha: float) -> float:
        """Correction for one room and α.

        Raises:
            UsageError: If the calibrator was not fitted for that pair.
        """
        key = (POOLED if self.pooled else room, _alpha_key(alpha))
        if key not in self.corrections:
            raise UsageError(f"no conformal correction for room {room} at alpha {alpha}")
        return self.corrections[key]

    @property
    def alphas(self) -> list[float]:
        return sorted({alpha for _, alpha in self.corrections})

    def to_dict(self) -> dict[str, Any]:
        entries = [
            {"room": room, "alpha": alpha, "delta_q": self.corrections[(room, alpha)], "n": self.counts[(room, alpha)]}
            for room, alpha in sorted(self.corrections)
        ]
        return {"pooled": self.pooled, "entries": entries}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ConformalCalibrator:
        corrections = {(e["room"], _alpha_key(e["alpha"])): float(e["delta_q"]) for e in data["entries"]}
        counts = {(e["room"], _alpha_key(e["alpha"])): int(e["n"]) for e in data["entries"]}
        return cls(corrections, counts, bool(data["pooled"]))


def calibration_alphas(forecast: QuantileForecast, alphas: Sequence[float], full_grid: bool = False) -> list[float]:
    """Requested α values, or every symmetric level pair of the grid in full-grid mode."""
    if full_grid:
        return forecast.grid.symmetric_alphas()
    return [float(a) for a in alphas]


def fit_calibrator(
    forecast: QuantileForecast,
    y: np.ndarray,
    alphas: Sequence[float],
    pooled: bool = False,
    full_grid: bool = False,
) -> ConformalCalibrator:
    """Compute Δq for every room and α from a sorted calibration-set forecast.

    Args:
        forecast: Sorted forecast of the calibration rows.
        y: (N, K) calibration temperatures.
        alphas: Miscoverage levels; each needs levels α/2 and 1-α/2 on the grid.
        pooled: One correction per α from the scores of all rooms.
        full_grid: Calibrate every symmetric pair (q, 1-q), q < 0.5, instead of ``alphas``.
    """
    obs = np.asarray(y, dtype=float)
    if obs.shape != forecast.values.shape[:2]:
        raise InputError(f"calibration targets {obs.shape} do not match forecast {forecast.values.shape[:2]}")
    corrections: dict[tuple[str, float], float] = {}
    counts: dict[tuple[str, float], int] = {}
    for alpha in calibration_alphas(forecast, alphas, full_grid):
        lower, upper = forecast.interval(alpha)
        scores = nonconformity_scores(lower, upper, obs)
        key_alpha = _alpha_key(alpha)
        if pooled:
            corrections[(POOLED, key_alpha)] = compute_delta_q(scores, alpha)
            counts[(POOLED, key_alpha)] = scores.size
            continue
        for k, room in enumerate(forecast.room_ids):
            corrections[(room, key_alpha)] = compute_delta_q(scores[:, k], alpha)
            counts[(room, key_alpha)] = scores.shape[0]
    logger.debug(f"Fitted {len(corrections)} conformal corrections on {obs.shape[0]} rows")
    return ConformalCalibrator(corrections, counts, pooled)


def conformalize(forecast: QuantileForecast, calibrator: ConformalCalibrator, alphas: Sequence[float]) -> QuantileForecast:
    """Widen (or narrow) each (1-α) interval by its Δq and re-sort the levels.

    Only the columns of levels α/2 and 1-α/2 change before the final sort; the
    corrections of all α are applied to the uncorrected forecast.

    Raises:
        UsageError: If a (room, α) pair has no correction.
    """
    values = np.array(forecast.values)
    for alpha in alphas:
        lo, hi = forecast.grid.interval_indices(alpha)
        deltas = np.array([calibrator.delta(room, alpha) for room in forecast.room_ids])
        values[:, :, lo] = forecast.values[:, :, lo] - deltas
        values[:, :, hi] = forecast.values[:, :, hi] + deltas
    return forecast.with_values(np.sort(values, axis=2))


def distribution_shift(calibration: np.ndarray, test: np.ndarray, room_ids: Sequence[str]) -> dict[str, float]:
    """Two-sample Kolmogorov-Smirnov distance between calibration and test temperatures per room."""
    cal = np.asarray(calibration, dtype=float)
    tst = np.asarray(test, dtype=float)
    return {room: float(ks_2samp(cal[:, k], tst[:, k]).statistic) for k, room in enumerate(room_ids)}


def ecdf_table(calibration: np.ndarray, test: np.ndarray, room: str, points: int = 101) -> pd.DataFrame:
    """Empirical CDFs of calibration and test temperatures of one room on a shared grid."""
    cal = np.sort(np.asarray(calibration, dtype=float))
    tst = np.sort(np.asarray(test, dtype=float))
    grid = np.linspace(min(cal[0], tst[0]), max(cal[-1], tst[-1]), points)
    return pd.DataFrame(
        {
            "room": room,
            "temperature": grid,
            "calibration": np.searchsorted(cal, grid, side="right") / cal.size,
            "test": np.searchsorted(tst, grid, side="right") / tst.size,
        }
    )
