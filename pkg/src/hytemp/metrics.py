"""Probabilistic scores: pinball loss, coverage error, Winkler score and reliability."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from hytemp.errors import InputError
from hytemp.quantiles import QuantileForecast

DEFAULT_CONFIDENCES = tuple(round(0.02 * i, 2) for i in range(1, 50))


def _targets(forecast: QuantileForecast, y: np.ndarray) -> np.ndarray:
    obs = np.asarray(y, dtype=float)
    if obs.shape != forecast.values.shape[:2]:
        raise InputError(f"targets of shape {obs.shape} are not aligned with forecast {forecast.values.shape[:2]}")
    return obs


class PinballScores(NamedTuple):
    """Mean pinball loss per room and its per-level curve (K, Q)."""

    per_room: np.ndarray
    by_level: np.ndarray


def pbl(forecast: QuantileForecast, y: np.ndarray) -> PinballScores:
    """Pinball loss averaged over rows and levels, per room; plus the per-level means."""
    obs = _targets(forecast, y)
    levels = forecast.grid.as_array()
    diff = obs[:, :, None] - forecast.values
    loss = np.where(diff >= 0, levels * diff, (levels - 1.0) * diff)
    by_level = loss.mean(axis=0)
    return PinballScores(by_level.mean(axis=1), by_level)


def coverage(forecast: QuantileForecast, y: np.ndarray, alpha: float) -> np.ndarray:
    """Per-room share of outcomes inside the closed (1-α) interval."""
    obs = _targets(forecast, y)
    lower, upper = forecast.interval(alpha)
    return ((obs >= lower) & (obs <= upper)).mean(axis=0)


def ace(forecast: QuantileForecast, y: np.ndarray, alpha: float) -> np.ndarray:
    """Average coverage error per room: empirical coverage minus 1-α."""
    return coverage(forecast, y, alpha) - (1.0 - alpha)


def winkler(forecast: QuantileForecast, y: np.ndarray, alpha: float) -> np.ndarray:
    """Mean Winkler score per room: width plus 2/α times any exceedance."""
    obs = _targets(forecast, y)
    lower, upper = forecast.interval(alpha)
    width = upper - lower
    below = np.where(obs < lower, lower - obs, 0.0)
    above = np.where(obs > upper, obs - upper, 0.0)
    return (width + (2.0 / alpha) * (below + above)).mean(axis=0)


def interval_width(forecast: QuantileForecast, alpha: float) -> np.ndarray:
    """Mean (1-α) interval width per room."""
    lower, upper = forecast.interval(alpha)
    return (upper - lower).mean(axis=0)


def reliability_curve(
    forecast: QuantileForecast, y: np.ndarray, confidences: Sequence[float] = DEFAULT_CONFIDENCES
) -> np.ndarray:
    """(K, C) empirical coverage of the central interval of each nominal confidence."""
    return np.column_stack([coverage(forecast, y, round(1.0 - c, 12)) for c in confidences])


def window_open_pbl(forecast: QuantileForecast, y: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Per-room pinball loss over the rows where that room's window is open (NaN if none)."""
    obs = _targets(forecast, y)
    open_rows = np.asarray(window) >= 0.5
    if open_rows.shape != obs.shape:
        raise InputError(f"window states {open_rows.shape} are not aligned with targets {obs.shape}")
    levels = forecast.grid.as_array()
    out = np.full(obs.shape[1], np.nan)
    for k in range(obs.shape[1]):
        rows = open_rows[:, k]
        if rows.any():
            diff = obs[rows, k, None] - forecast.values[rows, k, :]
            out[k] = float(np.mean(np.where(diff >= 0, levels * diff, (levels - 1.0) * diff)))
    return out


@dataclass
class EvaluationReport:
    """Scores of one forecast on one set of rows.

    Interval scores are keyed by α. Every per-room array follows ``room_ids``.
    """

    room_ids: tuple[str, ...]
    levels: tuple[float, ...]
    pbl: np.ndarray
    pbl_by_level: np.ndarray
    ace: dict[float, np.ndarray] = field(default_factory=dict)
    wks: dict[float, np.ndarray] = field(default_factory=dict)
    width: dict[float, np.ndarray] = field(default_factory=dict)
    confidences: tuple[float, ...] = DEFAULT_CONFIDENCES
    reliability: np.ndarray | None = None
    window_pbl: np.ndarray | None = None

    @property
    def mean_pbl(self) -> float:
        return float(np.mean(self.pbl))

    def to_dict(self) -> dict[str, Any]:
        def per_room(values: np.ndarray) -> dict[str, float]:
            out = {room: float(v) for room, v in zip(self.room_ids, values)}
            out["mean"] = float(np.nanmean(values)) if np.any(np.isfinite(values)) else float("nan")
            return out

        data: dict[str, Any] = {
            "rooms": list(self.room_ids),
            "pbl": per_room(self.pbl),
            "pbl_by_level": {room: self.pbl_by_level[k].tolist() for k, room in enumerate(self.room_ids)},
            "levels": list(self.levels),
            "ace": {f"{a:g}": per_room(v) for a, v in sorted(self.ace.items())},
            "wks": {f"{a:g}": per_room(v) for a, v in sorted(self.wks.items())},
            "width": {f"{a:g}": per_room(v) for a, v in sorted(self.width.items())},
        }
        if self.reliability is not None:
            data["reliability"] = {
                "confidences": list(self.confidences),
                "coverage": {room: self.reliability[k].tolist() for k, room in enumerate(self.room_ids)},
            }
        if self.window_pbl is not None:
            data["window_open_pbl"] = per_room(self.window_pbl)
        return data


def evaluate(
    forecast: QuantileForecast,
    y: np.ndarray,
    alphas: Sequence[float],
    window: np.ndarray | None = None,
    confidences: Sequence[float] | None = DEFAULT_CONFIDENCES,
) -> EvaluationReport:
    """Compute every score of a sorted forecast against outcomes ``y``."""
    scores = pbl(forecast, y)
    report = EvaluationReport(
        room_ids=forecast.room_ids,
        levels=forecast.grid.levels,
        pbl=scores.per_room,
        pbl_by_level=scores.by_level,
    )
    for alpha in alphas:
        report.ace[float(alpha)] = ace(forecast, y, alpha)
        report.wks[float(alpha)] = winkler(forecast, y, alpha)
        report.width[float(alpha)] = interval_width(forecast, alpha)
    if confidences is not None:
        report.confidences = tuple(confidences)
        report.reliability = reliability_curve(forecast, y, confidences)
    if window is not None:
        report.window_pbl = window_open_pbl(forecast, y, window)
    return report
