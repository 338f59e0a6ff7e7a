"""Dataset representation, feature schema and train/calibration/test splits."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from hytemp.errors import InputError
from hytemp.files import atomic_output

logger = logging.getLogger(__name__)

STEP = pd.Timedelta(minutes=15)
ROWS_PER_DAY = 96

GROUPS = ("datetime", "weather", "building", "room")
GROUP_PREFIXES = {
    "time_": "datetime",
    "weather_": "weather",
    "building_": "building",
    "room_": "room",
}

DATETIME_FEATURES = (
    "time_winter",
    "time_spring",
    "time_summer",
    "time_autumn",
    "time_weekend",
    "time_morning",
    "time_afternoon",
    "time_evening",
    "time_night",
)
WEATHER_FEATURES = (
    "weather_drybulb",
    "weather_dewpoint",
    "weather_solar_direct",
    "weather_solar_diffuse",
    "weather_humidity",
    "weather_wind_direction",
    "weather_wind_speed",
)
BUILDING_FEATURES = (
    "building_heating_flow",
    "building_cooling_flow",
    "building_supply_temp",
    "building_ac_mode",
)
ROOM_QUANTITIES = ("mass_flow", "setpoint", "occupancy", "window", "blinds")

_BOOLEAN_BUILDING = {"building_ac_mode"}
_BOOLEAN_ROOM_QUANTITIES = {"window", "blinds"}

TEMP_PREFIX = "temp_"
PHYSICS_PREFIX = "ep_"
TIMESTAMP_COLUMN = "timestamp"


def room_feature(room_id: str, quantity: str) -> str:
    """Column name of a per-room feature, e.g. ``room_r272_window``."""
    return f"room_{room_id}_{quantity}"


def standard_feature_names(room_ids: list[str] | tuple[str, ...]) -> list[str]:
    """All feature names of the full schema for the given rooms."""
    names = list(DATETIME_FEATURES) + list(WEATHER_FEATURES) + list(BUILDING_FEATURES)
    for room in room_ids:
        names.extend(room_feature(room, q) for q in ROOM_QUANTITIES)
    return names


def _group_of(name: str) -> str:
    for prefix, group in GROUP_PREFIXES.items():
        if name.startswith(prefix):
            return group
    raise InputError(
        f"feature {name!r} does not belong to any group "
        f"(expected prefix one of {', '.join(GROUP_PREFIXES)})"
    )


def _is_boolean(name: str) -> bool:
    if name.startswith("time_"):
        return True
    if name in _BOOLEAN_BUILDING:
        return True
    if name.startswith("room_"):
        return name.rsplit("_", 1)[-1] in _BOOLEAN_ROOM_QUANTITIES
    return False


@dataclass(frozen=True)
class FeatureSchema:
    """Exogenous feature names and their groups.

    Attributes:
        names: Feature names in column order.
        groups: Group of each feature (datetime, weather, building or room).
        boolean: Names of 0/1 state channels.
    """

    names: tuple[str, ...]
    groups: tuple[str, ...]
    boolean: frozenset[str]

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            dupes = sorted({n for n in self.names if self.names.count(n) > 1})
            raise InputError(f"duplicate feature names: {', '.join(dupes)}")
        if len(self.groups) != len(self.names):
            raise InputError("every feature needs exactly one group")
        for name, group in zip(self.names, self.groups):
            if group not in GROUPS:
                raise InputError(f"feature {name!r} has unknown group {group!r}")
        unknown = self.boolean - set(self.names)
        if unknown:
            raise InputError(f"boolean flags for unknown features: {sorted(unknown)}")

    @classmethod
    def from_names(cls, names: list[str] | tuple[str, ...]) -> FeatureSchema:
        """Infer groups and boolean channels from the naming convention."""
        names = tuple(names)
        return cls(
            names=names,
            groups=tuple(_group_of(n) for n in names),
            boolean=frozenset(n for n in names if _is_boolean(n)),
        )

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        """Column index of ``name``."""
        try:
            return self.names.index(name)
        except ValueError:
            raise InputError(f"missing required channel {name!r}") from None

    def group_names(self, group: str) -> tuple[str, ...]:
        """Names of the features in ``group``."""
        return tuple(n for n, g in zip(self.names, self.groups) if g == group)


def datetime_features(timestamps: pd.DatetimeIndex) -> pd.DataFrame:
    """One-hot season, weekend flag and one-hot daytime for each timestamp."""
    month = timestamps.month
    hour = timestamps.hour
    season = np.select(
        [np.isin(month, [12, 1, 2]), np.isin(month, [3, 4, 5]), np.isin(month, [6, 7, 8])],
        [0, 1, 2],
        default=3,
    )
    daytime = np.select(
        [(hour >= 6) & (hour < 12), (hour >= 12) & (hour < 18), (hour >= 18) & (hour < 22)],
        [0, 1, 2],
        default=3,
    )
    data = {
        "time_winter": season == 0,
        "time_spring": season == 1,
        "time_summer": season == 2,
        "time_autumn": season == 3,
        "time_weekend": timestamps.dayofweek >= 5,
        "time_morning": daytime == 0,
        "time_afternoon": daytime == 1,
        "time_evening": daytime == 2,
        "time_night": daytime == 3,
    }
    return pd.DataFrame(data, index=timestamps).astype(float)


def _frozen(array: np.ndarray | None, ndim: int, what: str) -> np.ndarray | None:
    if array is None:
        return None
    out = np.array(array, dtype=float)
    if out.ndim != ndim:
        raise InputError(f"{what} must be {ndim}-dimensional, got shape {out.shape}")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Aligned exogenous features, room temperatures and an optional physics channel.

    Attributes:
        timestamps: Strictly increasing timestamps with a constant step.
        features: (N, D) exogenous matrix, booleans encoded as 0/1.
        schema: Names and groups of the D features.
        temperatures: (N, K) measured room temperatures in °C.
        room_ids: Identifiers of the K rooms.
        physics: Optional (N, K) simulated temperatures in °C.
    """

    timestamps: pd.DatetimeIndex
    features: np.ndarray
    schema: FeatureSchema
    temperatures: np.ndarray
    room_ids: tuple[str, ...]
    physics: np.ndarray | None = None

    def __post_init__(self) -> None:
        timestamps = pd.DatetimeIndex(self.timestamps)
        features = _frozen(self.features, 2, "features")
        temperatures = _frozen(self.temperatures, 2, "temperatures")
        physics = _frozen(self.physics, 2, "physics channel")
        assert features is not None and temperatures is not None
        n = len(timestamps)
        if features.shape[0] != n or temperatures.shape[0] != n:
            raise InputError(
                f"row counts differ: {n} timestamps, {features.shape[0]} feature rows, "
                f"{temperatures.shape[0]} temperature rows"
            )
        if features.shape[1] != len(self.schema):
            raise InputError(
                f"feature matrix has {features.shape[1]} columns, schema names {len(self.schema)}"
            )
        room_ids = tuple(self.room_ids)
        if len(room_ids) < 1 or temperatures.shape[1] != len(room_ids):
            raise InputError(
                f"need at least one room and one temperature column per room "
                f"({len(room_ids)} rooms, {temperatures.shape[1]} columns)"
            )
        if physics is not None and physics.shape != temperatures.shape:
            raise InputError(
                f"physics channel shape {physics.shape} differs from temperatures "
                f"{temperatures.shape}"
            )
        if n > 1:
            deltas = np.diff(timestamps.asi8)
            if np.any(deltas <= 0):
                raise InputError("timestamps must be strictly increasing")
            if np.any(deltas != deltas[0]):
                raise InputError("timestamps must have a constant step")
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "temperatures", temperatures)
        object.__setattr__(self, "physics", physics)
        object.__setattr__(self, "room_ids", room_ids)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def n_rooms(self) -> int:
        return len(self.room_ids)

    @property
    def step(self) -> pd.Timedelta:
        """Sampling step (15 minutes for ingested data)."""
        if len(self) < 2:
            return STEP
        return self.timestamps[1] - self.timestamps[0]

    def validate_finite(self) -> None:
        """Check that no channel holds missing or non-finite values.

        Raises:
            InputError: Naming the first offending channel.
        """
        for j, name in enumerate(self.schema.names):
            if not np.all(np.isfinite(self.features[:, j])):
                raise InputError(f"channel {name!r} has missing values")
        for k, room in enumerate(self.room_ids):
            if not np.all(np.isfinite(self.temperatures[:, k])):
                raise InputError(f"channel {TEMP_PREFIX}{room!s} has missing values")
            if self.physics is not None and not np.all(np.isfinite(self.physics[:, k])):
                raise InputError(f"channel {PHYSICS_PREFIX}{room!s} has missing values")

    def feature(self, name: str) -> np.ndarray:
        """Column of the named feature."""
        return self.features[:, self.schema.index(name)]

    def require_physics(self) -> np.ndarray:
        """The physics channel, or an input error when absent."""
        if self.physics is None:
            raise InputError("dataset has no physics channel")
        return self.physics

    def with_physics(self, physics: np.ndarray | None) -> TimeSeriesDataset:
        """Copy with a replaced physics channel."""
        return dataclasses.replace(self, physics=physics)

    def with_temperatures(self, temperatures: np.ndarray) -> TimeSeriesDataset:
        """Copy with replaced temperatures."""
        return dataclasses.replace(self, temperatures=temperatures)

    def head(self, n: int) -> TimeSeriesDataset:
        """Copy holding the first ``n`` rows."""
        return dataclasses.replace(
            self,
            timestamps=self.timestamps[:n],
            features=self.features[:n],
            temperatures=self.temperatures[:n],
            physics=None if self.physics is None else self.physics[:n],
        )

    def select_rooms(self, room_ids: list[str] | tuple[str, ...]) -> TimeSeriesDataset:
        """Copy keeping only the listed rooms' targets and physics columns."""
        missing = [r for r in room_ids if r not in self.room_ids]
        if missing:
            raise InputError(f"unknown rooms: {', '.join(missing)}")
        cols = [self.room_ids.index(r) for r in room_ids]
        return dataclasses.replace(
            self,
            temperatures=self.temperatures[:, cols],
            physics=None if self.physics is None else self.physics[:, cols],
            room_ids=tuple(room_ids),
        )

    def to_frame(self) -> pd.DataFrame:
        """Frame in the ingestion layout (features, ``temp_*``, optional ``ep_*``)."""
        frame = pd.DataFrame(self.features, index=self.timestamps, columns=list(self.schema.names))
        for k, room in enumerate(self.room_ids):
            frame[f"{TEMP_PREFIX}{room}"] = self.temperatures[:, k]
        if self.physics is not None:
            for k, room in enumerate(self.room_ids):
                frame[f"{PHYSICS_PREFIX}{room}"] = self.physics[:, k]
        frame.index.name = TIMESTAMP_COLUMN
        return frame


def write_dataset_csv(dataset: TimeSeriesDataset, path: Path | str) -> None:
    """Write a dataset in the ingestion format (comma-delimited, ISO-8601 first column)."""
    frame = dataset.to_frame()
    frame.index = frame.index.strftime("%Y-%m-%dT%H:%M:%S")
    with atomic_output(path) as tmp:
        frame.to_csv(tmp, encoding="utf-8")
    logger.info(f"Wrote {len(dataset)} rows to {path}")


@dataclass(frozen=True)
class DatasetSplit:
    """Row indices of the train, calibration and test portions.

    Attributes:
        train: Rows used for fitting.
        calibration: Rows used for conformal calibration (empty when off).
        test: Rows used for evaluation.
    """

    train: np.ndarray
    calibration: np.ndarray
    test: np.ndarray

    def __post_init__(self) -> None:
        parts = []
        for name in ("train", "calibration", "test"):
            idx = np.array(getattr(self, name), dtype=np.int64).ravel()
            idx.flags.writeable = False
            object.__setattr__(self, name, idx)
            parts.append(idx)
        train, cal, test = parts
        if len(np.unique(np.concatenate(parts))) != sum(len(p) for p in parts):
            raise InputError("split portions overlap")
        if len(train) and len(cal) and cal.min() <= train.max():
            raise InputError("calibration rows must follow the training rows")
        before_test = np.concatenate([train, cal])
        if len(before_test) and len(test) and test.min() <= before_test.max():
            raise InputError("test rows must follow the training and calibration rows")

    @property
    def fit_rows(self) -> np.ndarray:
        """Train and calibration rows together (the whole training block)."""
        return np.concatenate([self.train, self.calibration])


def split_dataset(
    dataset: TimeSeriesDataset | int,
    conformal: bool,
    train_rows: int | None = None,
    calibration_fraction: float = 0.2,
) -> DatasetSplit:
    """Split into a training block and a following test block.

    The training block is the first ``train_rows`` rows (half of the dataset
    by default). With ``conformal`` on, its final ``calibration_fraction``
    becomes the calibration set.

    Args:
        dataset: The dataset, or just its row count.
        conformal: Whether to carve a calibration set out of the training block.
        train_rows: Length of the training block.
        calibration_fraction: Share of the training block used for calibration.

    Returns:
        The split.

    Raises:
        InputError: If the dataset does not hold two non-empty blocks.
    """
    n = dataset if isinstance(dataset, int) else len(dataset)
    if train_rows is None:
        train_rows = n // 2
    if n < 2 or not 0 < train_rows < n:
        raise InputError(
            f"dataset of {n} rows cannot hold a training block of {train_rows} rows "
            "and a following test block"
        )
    if not 0.0 < calibration_fraction < 1.0:
        raise InputError(f"calibration fraction must lie in (0, 1), got {calibration_fraction}")
    block = np.arange(train_rows)
    test = np.arange(train_rows, n)
    if not conformal:
        return DatasetSplit(block, np.array([], dtype=np.int64), test)
    n_cal = int(round(calibration_fraction * train_rows))
    if n_cal < 1 or n_cal >= train_rows:
        raise InputError(
            f"training block of {train_rows} rows is too short for a "
            f"{calibration_fraction:.0%} calibration set"
        )
    cut = train_rows - n_cal
    logger.debug(f"Split: train {cut}, calibration {n_cal}, test {n - train_rows} rows")
    return DatasetSplit(block[:cut], block[cut:], test)
