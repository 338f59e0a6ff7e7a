"""Ingestion: gap imputation and aggregation to the 15-minute cadence."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from hytemp.dataset import (
    DATETIME_FEATURES,
    PHYSICS_PREFIX,
    STEP,
    TEMP_PREFIX,
    FeatureSchema,
    TimeSeriesDataset,
    datetime_features,
)
from hytemp.errors import InputError

logger = logging.getLogger(__name__)

MAX_GAP_FRACTION = 0.5


def _check_index(frame: pd.DataFrame) -> pd.DataFrame:
    if not isinstance(frame.index, pd.DatetimeIndex):
        try:
            frame = frame.set_axis(pd.DatetimeIndex(pd.to_datetime(frame.index)), axis=0)
        except (TypeError, ValueError) as e:
            raise InputError(f"timestamps could not be parsed: {e}") from e
    index = frame.index
    if len(index) > 1 and not (index.is_monotonic_increasing and index.is_unique):
        raise InputError("raw timestamps must be sorted and unique")
    return frame


def interpolate_gaps(frame: pd.DataFrame) -> pd.DataFrame:
    """Fill missing values by linear interpolation in time on the raw grid.

    Leading and trailing gaps hold the nearest observed value constant.

    Raises:
        InputError: If a channel is entirely missing or at least half missing.
    """
    frame = _check_index(frame)
    for name in frame.columns:
        missing = frame[name].isna()
        if missing.all():
            raise InputError(f"channel {name!r} is entirely missing")
        fraction = float(missing.mean())
        if fraction >= MAX_GAP_FRACTION:
            raise InputError(f"channel {name!r} is {fraction:.0%} missing")
    filled = frame.astype(float).interpolate(method="time", limit_area="inside")
    return filled.ffill().bfill()


def _boolean_columns(columns: list[str]) -> list[str]:
    features = [c for c in columns if not c.startswith((TEMP_PREFIX, PHYSICS_PREFIX))]
    schema = FeatureSchema.from_names(features)
    return [c for c in features if c in schema.boolean]


def resample_and_impute(frame: pd.DataFrame, step: pd.Timedelta | str = STEP) -> TimeSeriesDataset:
    """Turn a raw multi-channel series into a 15-minute ``TimeSeriesDataset``.

    Gaps are linearly interpolated on the raw grid first; values are then
    averaged into left-labelled bins. Boolean channels are averaged and
    thresholded at 0.5 (majority vote, ties count as on). Datetime features
    are derived from the bin timestamps when the frame lacks them.

    Args:
        frame: Raw series indexed by timestamp, with feature columns,
            ``temp_<room>`` targets and optional ``ep_<room>`` physics columns.
        step: Target cadence.

    Returns:
        The aggregated dataset.

    Raises:
        InputError: For unsorted timestamps, missing channels or malformed columns.
    """
    frame = interpolate_gaps(frame)
    step = pd.Timedelta(step)
    binned = frame.resample(step, label="left", closed="left").mean()
    if binned.isna().to_numpy().any():
        # bins without raw samples
        binned = binned.interpolate(method="time", limit_area="inside").ffill().bfill()

    columns = list(binned.columns)
    bools = _boolean_columns(columns)
    if bools:
        binned[bools] = (binned[bools] >= 0.5).astype(float)

    missing_time = [c for c in DATETIME_FEATURES if c not in binned.columns]
    if missing_time:
        derived = datetime_features(pd.DatetimeIndex(binned.index))
        binned = pd.concat([derived[missing_time], binned], axis=1)

    room_ids = [c[len(TEMP_PREFIX) :] for c in binned.columns if c.startswith(TEMP_PREFIX)]
    if not room_ids:
        raise InputError(f"no target columns (expected at least one '{TEMP_PREFIX}<room>')")
    ep_rooms = [c[len(PHYSICS_PREFIX) :] for c in binned.columns if c.startswith(PHYSICS_PREFIX)]
    if ep_rooms and sorted(ep_rooms) != sorted(room_ids):
        raise InputError(
            f"physics columns {sorted(ep_rooms)} do not match target rooms {sorted(room_ids)}"
        )
    feature_names = [
        c for c in binned.columns if not c.startswith((TEMP_PREFIX, PHYSICS_PREFIX))
    ]
    physics = None
    if ep_rooms:
        physics = binned[[f"{PHYSICS_PREFIX}{r}" for r in room_ids]].to_numpy()
    dataset = TimeSeriesDataset(
        timestamps=pd.DatetimeIndex(binned.index),
        features=binned[feature_names].to_numpy(),
        schema=FeatureSchema.from_names(feature_names),
        temperatures=binned[[f"{TEMP_PREFIX}{r}" for r in room_ids]].to_numpy(),
        room_ids=tuple(room_ids),
        physics=physics,
    )
    dataset.validate_finite()
    logger.info(
        f"Resampled {len(frame)} raw rows to {len(dataset)} rows of {step} "
        f"({len(feature_names)} features, {len(room_ids)} rooms)"
    )
    return dataset


def ingest_csv(path: Path | str, step: pd.Timedelta | str = STEP) -> TimeSeriesDataset:
    """Read a dataset file in the ingestion format and resample it.

    Raises:
        InputError: If the file is malformed.
        OSError: If the file cannot be read.
    """
    try:
        frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip", index_col=0)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise InputError(f"cannot parse {path}: {e}") from e
    try:
        frame.index = pd.DatetimeIndex(pd.to_datetime(frame.index, format="ISO8601"))
    except (TypeError, ValueError) as e:
        raise InputError(f"first column of {path} is not an ISO-8601 timestamp: {e}") from e
    non_numeric = [c for c in frame.columns if not np.issubdtype(frame[c].dtype, np.number)]
    if non_numeric:
        raise InputError(f"non-numeric columns in {path}: {', '.join(map(str, non_numeric))}")
    return resample_and_impute(frame, step)
