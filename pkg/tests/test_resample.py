"""Tests for gap imputation and 15-minute aggregation."""

import numpy as np
import pandas as pd
import pytest

from hytemp.errors import InputError
from hytemp.resample import interpolate_gaps, resample_and_impute


def minute_frame(values: dict[str, list[float]], start: str = "2024-03-04 00:00") -> pd.DataFrame:
    n = len(next(iter(values.values())))
    index = pd.date_range(start, periods=n, freq="1min")
    return pd.DataFrame(values, index=index)


class TestInterpolateGaps:
    """Tests for interpolate_gaps."""

    def test_linear_midpoint(self) -> None:
        frame = minute_frame({"temp_a": [20.0, np.nan, 22.0]})
        assert interpolate_gaps(frame)["temp_a"].tolist() == [20.0, 21.0, 22.0]

    def test_endpoints_held_constant(self) -> None:
        frame = minute_frame({"temp_a": [np.nan, 20.0, 21.0, 22.0, np.nan]})
        assert interpolate_gaps(frame)["temp_a"].tolist() == [20.0, 20.0, 21.0, 22.0, 22.0]

    def test_entirely_missing_channel_is_named(self) -> None:
        frame = minute_frame({"temp_a": [20.0, 21.0], "weather_drybulb": [np.nan, np.nan]})
        with pytest.raises(InputError, match="weather_drybulb"):
            interpolate_gaps(frame)

    def test_mostly_missing_channel_is_rejected(self) -> None:
        frame = minute_frame({"temp_a": [20.0, np.nan, np.nan, 21.0]})
        with pytest.raises(InputError, match="50%"):
            interpolate_gaps(frame)

    def test_unsorted_timestamps_are_rejected(self) -> None:
        frame = minute_frame({"temp_a": [20.0, 21.0, 22.0]})
        with pytest.raises(InputError, match="sorted"):
            interpolate_gaps(frame.iloc[[0, 2, 1]])


class TestResampleAndImpute:
    """Tests for resample_and_impute."""

    def test_constant_minutes_give_constant_bin(self) -> None:
        frame = minute_frame({"weather_drybulb": [5.0] * 15, "temp_a": [21.5] * 15})
        dataset = resample_and_impute(frame)
        assert len(dataset) == 1
        assert dataset.temperatures[0, 0] == 21.5

    def test_gap_is_filled_before_aggregation(self) -> None:
        temps = [20.0] * 30
        temps[20] = np.nan
        temps[19] = 20.0
        temps[21] = 22.0
        frame = minute_frame({"weather_drybulb": [5.0] * 30, "temp_a": temps})
        dataset = resample_and_impute(frame)
        expected = (20.0 * 13 + 21.0 + 22.0) / 15
        assert dataset.temperatures[1, 0] == pytest.approx(expected)

    def test_boolean_majority_vote(self) -> None:
        window = [1.0] * 9 + [0.0] * 6
        frame = minute_frame(
            {"weather_drybulb": [5.0] * 15, "room_a_window": window, "temp_a": [21.0] * 15}
        )
        dataset = resample_and_impute(frame)
        assert dataset.feature("room_a_window")[0] == 1.0

    def test_boolean_minority_is_off(self) -> None:
        window = [1.0] * 6 + [0.0] * 9
        frame = minute_frame(
            {"weather_drybulb": [5.0] * 15, "room_a_window": window, "temp_a": [21.0] * 15}
        )
        assert resample_and_impute(frame).feature("room_a_window")[0] == 0.0

    def test_datetime_features_are_derived(self) -> None:
        frame = minute_frame({"weather_drybulb": [5.0] * 60, "temp_a": [21.0] * 60})
        dataset = resample_and_impute(frame)
        assert len(dataset) == 4
        assert dataset.schema.group_names("datetime")
        assert (dataset.feature("time_night") == 1.0).all()

    def test_physics_columns_must_match_rooms(self) -> None:
        frame = minute_frame({"weather_drybulb": [5.0] * 15, "temp_a": [21.0] * 15, "ep_b": [20.0] * 15})
        with pytest.raises(InputError, match="physics"):
            resample_and_impute(frame)

    def test_targets_are_required(self) -> None:
        frame = minute_frame({"weather_drybulb": [5.0] * 15})
        with pytest.raises(InputError, match="target"):
            resample_and_impute(frame)

    def test_resampling_its_own_output_changes_nothing(self) -> None:
        index = pd.date_range("2024-03-04 00:00", periods=96, freq="15min")
        rng = np.random.default_rng(0)
        temps = 21.0 + rng.normal(0, 0.3, 96)
        temps[[10, 11, 40]] = np.nan
        frame = pd.DataFrame(
            {
                "weather_drybulb": np.linspace(2.0, 9.0, 96),
                "room_a_window": (rng.random(96) < 0.2).astype(float),
                "temp_a": temps,
                "ep_a": np.full(96, 20.5),
            },
            index=index,
        )
        once = resample_and_impute(frame)
        twice = resample_and_impute(once.to_frame())
        assert twice.schema.names == once.schema.names
        assert twice.timestamps.equals(once.timestamps)
        np.testing.assert_array_equal(twice.features, once.features)
        np.testing.assert_array_equal(twice.temperatures, once.temperatures)
        np.testing.assert_array_equal(twice.physics, once.physics)
