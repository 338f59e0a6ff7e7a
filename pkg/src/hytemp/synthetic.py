"""Synthetic office-building scenarios with a known ground truth.

The ground truth is a closed-loop simulation of the RC model with the true
parameters, plus effects the RC model does not know about (blinds, an
occupancy-driven disturbance, sensor noise). The physics channel replays the
recorded inputs through the same simulator with deliberately biased parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from hytemp.dataset import (
    ROWS_PER_DAY,
    STEP,
    FeatureSchema,
    TimeSeriesDataset,
    datetime_features,
    room_feature,
    standard_feature_names,
)
from hytemp.errors import InputError, NumericalError
from hytemp.physics import (
    PARAM_NAMES,
    PhysicsModel,
    RcParams,
    SimulationInputs,
    ZoneState,
    simulate,
    step_coefficients,
)

logger = logging.getLogger(__name__)

DEFAULT_ROOMS = ("r272", "r273", "r274", "r275", "r276")
WATER_HEAT_CAPACITY = 4186.0

# Base parameters of a small office; rooms differ by fixed factors.
_BASE_PARAMS = {
    "resistance": 0.01,
    "capacitance": 8e6,
    "solar_aperture": 1.5,
    "occupant_gain": 100.0,
    "hvac_coupling": WATER_HEAT_CAPACITY,
    "window_conductance": 40.0,
}
_ROOM_FACTORS = (1.0, 1.15, 0.9, 1.05, 0.95)


def default_true_params(room_ids: tuple[str, ...] = DEFAULT_ROOMS) -> RcParams:
    """Ground-truth RC parameters used when a scenario does not supply its own."""
    matrix = np.array(
        [
            [_BASE_PARAMS[name] * _ROOM_FACTORS[k % len(_ROOM_FACTORS)] for name in PARAM_NAMES]
            for k in range(len(room_ids))
        ]
    )
    return RcParams.from_matrix(room_ids, matrix)


@dataclass(frozen=True)
class ScenarioConfig:
    """Settings of a synthetic scenario.

    Attributes:
        days: Length of the generated series.
        start: First timestamp.
        room_ids: Rooms to simulate.
        test_start_day: First day of the test year (half of ``days`` by default).
        outdoor_mean: Annual mean outdoor temperature, °C.
        annual_amplitude: Amplitude of the annual outdoor temperature sinusoid.
        diurnal_amplitude: Amplitude of the daily outdoor temperature sinusoid.
        weather_ar: AR(1) coefficient of the outdoor temperature anomaly per bin.
        weather_std: Stationary standard deviation of the anomaly, °C.
        solar_peak: Clear-sky midsummer noon irradiance, W/m².
        heating_threshold: Daily mean outdoor temperature below which the building heats.
        heating_setpoint: Occupied heating setpoint, °C.
        cooling_setpoint: Occupied cooling setpoint, °C.
        setback: Setpoint relaxation outside office hours, K.
        thermostat_gain: Mass flow per kelvin of setpoint error, kg/s/K.
        max_mass_flow: Mass flow limit per room, kg/s.
        window_rate: Window openings per room and office day.
        window_mean_hours: Mean duration of an ordinary opening.
        window_max_hours: Cap on ordinary openings.
        extended_window_rate: Extended openings per room and week in the test year.
        extended_window_hours: Duration range of extended openings.
        blinds_threshold: Direct irradiance above which blinds close, W/m².
        blinds_transmittance: Share of solar gain passing closed blinds (1 = no effect).
        disturbance_std: Innovation scale of the occupancy-driven disturbance, K per bin.
        disturbance_ar: AR(1) coefficient of the disturbance.
        observation_noise_std: Sensor noise scale, °C; grows with occupancy.
        parameter_bias: Relative error of the physics-channel parameters.
        step_seconds: Integration sub-step.
        iid: Permute rows so that any two portions are exchangeable.
        rmse_band: Expected RMSE between physics channel and truth.
        strict_self_check: Fail instead of warn when the RMSE leaves ``rmse_band``.
    """

    days: int = 730
    start: str = "2023-01-01"
    room_ids: tuple[str, ...] = DEFAULT_ROOMS
    test_start_day: int | None = None
    outdoor_mean: float = 10.0
    annual_amplitude: float = 10.0
    diurnal_amplitude: float = 4.0
    weather_ar: float = 0.995
    weather_std: float = 2.0
    solar_peak: float = 700.0
    heating_threshold: float = 15.0
    heating_setpoint: float = 21.0
    cooling_setpoint: float = 24.0
    setback: float = 2.0
    thermostat_gain: float = 0.1
    max_mass_flow: float = 0.15
    window_rate: float = 0.5
    window_mean_hours: float = 1.0
    window_max_hours: float = 3.0
    extended_window_rate: float = 1.0
    extended_window_hours: tuple[float, float] = (6.0, 14.0)
    blinds_threshold: float = 300.0
    blinds_transmittance: float = 0.5
    disturbance_std: float = 0.02
    disturbance_ar: float = 0.8
    observation_noise_std: float = 0.1
    parameter_bias: float = 0.2
    step_seconds: float = 60.0
    iid: bool = False
    rmse_band: tuple[float, float] = (0.3, 1.5)
    strict_self_check: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "room_ids", tuple(self.room_ids))
        object.__setattr__(self, "extended_window_hours", tuple(self.extended_window_hours))
        object.__setattr__(self, "rmse_band", tuple(self.rmse_band))
        if self.days < 1:
            raise InputError(f"scenario duration must be at least one day, got {self.days}")
        if not self.room_ids:
            raise InputError("scenario needs at least one room")
        if self.test_start_day is not None and not 0 < self.test_start_day < self.days:
            raise InputError(f"test_start_day {self.test_start_day} is outside (0, {self.days})")
        for name in ("weather_ar", "disturbance_ar"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise InputError(f"{name} must lie in [0, 1)")
        if not 0.0 <= self.blinds_transmittance <= 1.0:
            raise InputError("blinds_transmittance must lie in [0, 1]")
        if not 0.0 <= self.parameter_bias < 1.0:
            raise InputError("parameter_bias must lie in [0, 1)")
        for name in (
            "weather_std",
            "disturbance_std",
            "observation_noise_std",
            "window_rate",
            "extended_window_rate",
            "solar_peak",
        ):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be non-negative")
        lo, hi = self.extended_window_hours
        if not 0 < lo <= hi:
            raise InputError("extended_window_hours must be an increasing positive pair")

    @property
    def n_rows(self) -> int:
        return self.days * ROWS_PER_DAY

    @property
    def test_start_row(self) -> int:
        day = self.test_start_day if self.test_start_day is not None else self.days // 2
        return day * ROWS_PER_DAY


class GeneratedScenario(NamedTuple):
    """Generated dataset, the physics-channel parameters and the physics RMSE."""

    dataset: TimeSeriesDataset
    physics_params: RcParams
    physics_rmse: float


def _ar1(rng: np.random.Generator, n: int, phi: float, std: float) -> np.ndarray:
    """Stationary AR(1) series with marginal standard deviation ``std``."""
    innovations = rng.standard_normal(n) * std * np.sqrt(1.0 - phi**2)
    innovations[0] = rng.standard_normal() * std
    return lfilter([1.0], [1.0, -phi], innovations)


def _weather(
    scenario: ScenarioConfig, timestamps: pd.DatetimeIndex, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    n = len(timestamps)
    day_of_year = timestamps.dayofyear.to_numpy(dtype=float)
    hour = timestamps.hour.to_numpy(dtype=float) + timestamps.minute.to_numpy(dtype=float) / 60.0

    annual = -scenario.annual_amplitude * np.cos(2 * np.pi * (day_of_year - 15.0) / 365.0)
    diurnal = scenario.diurnal_amplitude * np.cos(2 * np.pi * (hour - 15.0) / 24.0)
    anomaly = _ar1(rng, n, scenario.weather_ar, scenario.weather_std)
    drybulb = scenario.outdoor_mean + annual + diurnal + anomaly

    summer = np.cos(2 * np.pi * (day_of_year - 172.0) / 365.0)
    day_length = 12.0 + 4.0 * summer
    sunrise = 12.0 - day_length / 2.0
    elevation = np.clip(np.sin(np.pi * (hour - sunrise) / day_length), 0.0, None)
    elevation[(hour < sunrise) | (hour > sunrise + day_length)] = 0.0
    cloud = np.clip(0.75 + _ar1(rng, n, 0.99, 0.2), 0.2, 1.0)
    total = scenario.solar_peak * (0.65 + 0.35 * summer) * elevation * cloud

    dewpoint = np.minimum(drybulb - 3.0 + _ar1(rng, n, 0.98, 1.5), drybulb)

    # Magnus formula
    def vapour(t: np.ndarray) -> np.ndarray:
        return np.exp(17.62 * t / (243.12 + t))

    humidity = np.clip(100.0 * vapour(dewpoint) / vapour(drybulb), 0.0, 100.0)
    wind_speed = np.abs(3.0 + _ar1(rng, n, 0.98, 1.5))
    wind_direction = np.mod(220.0 + np.cumsum(rng.normal(0.0, 3.0, n)), 360.0)
    return {
        "weather_drybulb": drybulb,
        "weather_dewpoint": dewpoint,
        "weather_solar_direct": 0.7 * total,
        "weather_solar_diffuse": 0.3 * total,
        "weather_humidity": humidity,
        "weather_wind_direction": wind_direction,
        "weather_wind_speed": wind_speed,
    }


def _office_hours(timestamps: pd.DatetimeIndex, start: int, end: int) -> np.ndarray:
    hour = timestamps.hour.to_numpy()
    weekday = timestamps.dayofweek.to_numpy() < 5
    return weekday & (hour >= start) & (hour < end)


def _occupancy(
    timestamps: pd.DatetimeIndex, k: int, rng: np.random.Generator
) -> tuple[np.ndarray, int]:
    """Occupant counts of room ``k``; even rooms are offices, odd rooms meeting rooms."""
    n = len(timestamps)
    capacity = 1 + k % 3
    hourly = -(-n // 4)
    if k % 2 == 0:
        present = _office_hours(timestamps, 8, 18)
        counts = rng.binomial(capacity, 0.8, hourly)
    else:
        present = _office_hours(timestamps, 9, 17)
        counts = rng.binomial(capacity + 2, 0.4, hourly)
    occupants = np.repeat(counts, 4)[:n].astype(float)
    return np.where(present, occupants, 0.0), capacity


def _windows(
    scenario: ScenarioConfig,
    timestamps: pd.DatetimeIndex,
    occupied: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Window state of one room; the test year adds openings longer than any before."""
    n = len(timestamps)
    window = np.zeros(n)
    per_bin = scenario.window_rate / ROWS_PER_DAY * (24.0 / 10.0)
    starts = np.flatnonzero((rng.random(n) < per_bin) & occupied)
    mean_bins = scenario.window_mean_hours * 4.0
    max_bins = max(1, int(round(scenario.window_max_hours * 4.0)))
    durations = np.minimum(rng.geometric(1.0 / mean_bins, starts.size), max_bins)
    for s, d in zip(starts, durations):
        window[s : s + d] = 1.0

    test_start = scenario.test_start_row
    per_bin_extended = scenario.extended_window_rate / (7.0 * ROWS_PER_DAY)
    draws = rng.random(n)
    extended = np.flatnonzero(draws[test_start:] < per_bin_extended) + test_start
    lo, hi = scenario.extended_window_hours
    lengths = np.round(rng.uniform(lo, hi, extended.size) * 4.0).astype(int)
    for s, d in zip(extended, lengths):
        window[s : s + d] = 1.0
    return window


def _biased_params(true_params: RcParams, bias: float, rng: np.random.Generator) -> RcParams:
    signs = rng.choice([-1.0, 1.0], size=true_params.as_matrix().shape)
    return true_params.scaled(1.0 + bias * signs)


def _supply_temperature(heating: np.ndarray, daily_mean: np.ndarray) -> np.ndarray:
    heating_supply = 26.0 + 0.25 * np.clip(15.0 - daily_mean, 0.0, None)
    return np.where(heating, heating_supply, 17.0)


def _closed_loop(
    scenario: ScenarioConfig,
    params: RcParams,
    initial: np.ndarray,
    drivers: dict[str, np.ndarray],
    disturbance: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Run the thermostat and the true plant together; return temperatures and flows."""
    t_out = drivers["t_out"]
    solar = drivers["solar"]
    supply = drivers["supply"]
    heating = drivers["heating"]
    setpoint = drivers["setpoint"]
    occupancy = drivers["occupancy"]
    window = drivers["window"]
    n, k = setpoint.shape
    substeps = int(round(STEP.total_seconds() / scenario.step_seconds))
    temps = np.empty((n, k))
    flows = np.empty((n, k))
    state = np.array(initial, dtype=float)
    for row in range(n):
        error = setpoint[row] - state if heating[row] else state - setpoint[row]
        flow = np.clip(scenario.thermostat_gain * error, 0.0, scenario.max_mass_flow)
        gain, offset = step_coefficients(
            params,
            t_out[row],
            solar[row],
            supply[row],
            flow,
            occupancy[row],
            window[row],
            scenario.step_seconds,
            substeps,
        )
        state = gain * state + offset
        state = state + disturbance[row]
        if not np.all(np.isfinite(state)):
            raise NumericalError(f"closed-loop simulation diverged at step {row}")
        temps[row] = state
        flows[row] = flow
    return temps, flows


def generate_synthetic_dataset(
    true_params: RcParams | None, scenario: ScenarioConfig, seed: int
) -> GeneratedScenario:
    """Generate a scenario whose measured temperatures come from known dynamics.

    Args:
        true_params: Ground-truth RC parameters (``default_true_params`` if None).
        scenario: Scenario settings.
        seed: Seed of every random draw; the output is a pure function of the
            three arguments.

    Returns:
        The dataset (with a physics channel), the biased physics parameters and
        the RMSE between physics channel and measured temperatures.

    Raises:
        InputError: If the parameters do not match the scenario's rooms.
        NumericalError: If a simulation diverges, or the self-check fails in
            strict mode.
    """
    rooms = scenario.room_ids
    if true_params is None:
        true_params = default_true_params(rooms)
    if tuple(true_params.room_ids) != rooms:
        raise InputError(
            f"parameters cover rooms {list(true_params.room_ids)}, scenario has {list(rooms)}"
        )
    rng = np.random.default_rng(seed)
    n = scenario.n_rows
    timestamps = pd.date_range(pd.Timestamp(scenario.start), periods=n, freq=STEP)
    logger.info(f"Generating {scenario.days} days for {len(rooms)} rooms (seed {seed})")

    columns: dict[str, np.ndarray] = {
        name: values.to_numpy() for name, values in datetime_features(timestamps).items()
    }
    columns.update(_weather(scenario, timestamps, rng))

    t_out = columns["weather_drybulb"]
    direct = columns["weather_solar_direct"]
    solar = direct + columns["weather_solar_diffuse"]
    daily_mean = pd.Series(t_out).groupby(np.arange(n) // ROWS_PER_DAY).transform("mean")
    heating = daily_mean.to_numpy() < scenario.heating_threshold
    supply = _supply_temperature(heating, daily_mean.to_numpy())

    occupancy = np.empty((n, len(rooms)))
    capacity = np.empty(len(rooms))
    window = np.empty((n, len(rooms)))
    blinds = np.empty((n, len(rooms)))
    setpoint = np.empty((n, len(rooms)))
    for k in range(len(rooms)):
        occupancy[:, k], capacity[k] = _occupancy(timestamps, k, rng)
        occupied_hours = _office_hours(timestamps, 8, 18)
        window[:, k] = _windows(scenario, timestamps, occupied_hours, rng)
        blinds[:, k] = (direct > scenario.blinds_threshold * (1.0 + 0.1 * k)).astype(float)
        base = np.where(heating, scenario.heating_setpoint, scenario.cooling_setpoint)
        relax = np.where(heating, -scenario.setback, scenario.setback)
        setpoint[:, k] = np.where(occupied_hours, base, base + relax)

    activity = 0.5 + occupancy / capacity
    disturbance = np.column_stack(
        [
            lfilter(
                [1.0],
                [1.0, -scenario.disturbance_ar],
                scenario.disturbance_std * activity[:, k] * rng.standard_normal(n),
            )
            for k in range(len(rooms))
        ]
    )
    sensor = (
        scenario.observation_noise_std
        * (1.0 + 0.5 * occupancy / capacity)
        * rng.standard_normal((n, len(rooms)))
    )
    physics_params = _biased_params(true_params, scenario.parameter_bias, rng)

    shaded = solar[:, None] * (1.0 - blinds * (1.0 - scenario.blinds_transmittance))
    initial = np.full(len(rooms), scenario.heating_setpoint)
    true_temps, flows = _closed_loop(
        scenario,
        true_params,
        initial,
        {
            "t_out": t_out,
            "solar": shaded,
            "supply": supply,
            "heating": heating,
            "setpoint": setpoint,
            "occupancy": occupancy,
            "window": window,
        },
        disturbance,
    )
    measured = true_temps + sensor

    columns["building_heating_flow"] = np.where(heating, flows.sum(axis=1), 0.0)
    columns["building_cooling_flow"] = np.where(heating, 0.0, flows.sum(axis=1))
    columns["building_supply_temp"] = supply
    columns["building_ac_mode"] = (~heating).astype(float)
    for k, room in enumerate(rooms):
        columns[room_feature(room, "mass_flow")] = flows[:, k]
        columns[room_feature(room, "setpoint")] = setpoint[:, k]
        columns[room_feature(room, "occupancy")] = occupancy[:, k]
        columns[room_feature(room, "window")] = window[:, k]
        columns[room_feature(room, "blinds")] = blinds[:, k]

    names = standard_feature_names(rooms)
    dataset = TimeSeriesDataset(
        timestamps=timestamps,
        features=np.column_stack([columns[name] for name in names]),
        schema=FeatureSchema.from_names(names),
        temperatures=measured,
        room_ids=rooms,
    )
    physics_model = PhysicsModel(
        physics_params, ZoneState(initial), step_seconds=scenario.step_seconds
    )
    physics = simulate(physics_model, SimulationInputs.from_dataset(dataset))
    dataset = dataset.with_physics(physics)

    rmse = float(np.sqrt(np.mean((physics - measured) ** 2)))
    lo, hi = scenario.rmse_band
    if lo <= rmse <= hi:
        logger.info(f"Physics channel RMSE {rmse:.3f} °C is inside [{lo}, {hi}]")
    elif scenario.strict_self_check:
        raise NumericalError(f"physics channel RMSE {rmse:.3f} °C is outside [{lo}, {hi}]")
    else:
        logger.warning(f"Physics channel RMSE {rmse:.3f} °C is outside [{lo}, {hi}]")

    if scenario.iid:
        order = rng.permutation(n)
        dataset = TimeSeriesDataset(
            timestamps=timestamps,
            features=dataset.features[order],
            schema=dataset.schema,
            temperatures=dataset.temperatures[order],
            room_ids=rooms,
            physics=physics[order],
        )
    dataset.validate_finite()
    return GeneratedScenario(dataset, physics_params, rmse)
