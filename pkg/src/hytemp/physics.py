"""Reduced-order RC thermal simulator and its derivative-free calibration.

Each room is one capacitance behind one effective resistance (1R1C). An open
window adds a parallel conductance. Rooms are thermally independent.

Heat balance per room, integrated with explicit Euler sub-steps of ``dt``::

    C dT/dt = (T_out - T) / R_eff + a_sol I_sol + g_occ n_occ + k_hvac m (T_sup - T)
    1 / R_eff = 1 / R + u_win w
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from hytemp.dataset import (
    TimeSeriesDataset,
    room_feature,
)
from hytemp.errors import InputError, NumericalError

logger = logging.getLogger(__name__)

PARAM_NAMES = (
    "resistance",
    "capacitance",
    "solar_aperture",
    "occupant_gain",
    "hvac_coupling",
    "window_conductance",
)
PARAM_UNITS = {
    "resistance": "K/W",
    "capacitance": "J/K",
    "solar_aperture": "m2",
    "occupant_gain": "W",
    "hvac_coupling": "W/(kg/s K)",
    "window_conductance": "W/K",
}

SANITY_BAND = (-30.0, 60.0)
DATA_STEP_SECONDS = 900.0
CALIBRATION_PENALTY = 1e6


@dataclass(frozen=True)
class ParamBounds:
    """Lower and upper bounds per parameter name, shared by all rooms."""

    lower: dict[str, float]
    upper: dict[str, float]

    def __post_init__(self) -> None:
        for name in PARAM_NAMES:
            if name not in self.lower or name not in self.upper:
                raise InputError(f"bounds missing for parameter {name!r}")
            lo, hi = float(self.lower[name]), float(self.upper[name])
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise InputError(f"bounds for {name!r} must be finite")
            if lo <= 0:
                raise InputError(f"lower bound for {name!r} must be strictly positive")
            if lo > hi:
                raise InputError(f"infeasible bounds for {name!r}: lower {lo} > upper {hi}")

    def arrays(self, names: Sequence[str] = PARAM_NAMES) -> tuple[np.ndarray, np.ndarray]:
        """Bounds of ``names`` as two arrays."""
        return (
            np.array([self.lower[n] for n in names], dtype=float),
            np.array([self.upper[n] for n in names], dtype=float),
        )


DEFAULT_BOUNDS = ParamBounds(
    lower={
        "resistance": 1e-3,
        "capacitance": 1e6,
        "solar_aperture": 0.01,
        "occupant_gain": 10.0,
        "hvac_coupling": 50.0,
        "window_conductance": 1.0,
    },
    upper={
        "resistance": 0.2,
        "capacitance": 1e9,
        "solar_aperture": 20.0,
        "occupant_gain": 400.0,
        "hvac_coupling": 10000.0,
        "window_conductance": 1000.0,
    },
)


@dataclass(frozen=True)
class RcParams:
    """RC parameters, one value per room for each quantity.

    Attributes:
        room_ids: Rooms in column order.
        resistance: Envelope resistance R (K/W).
        capacitance: Thermal capacitance C (J/K).
        solar_aperture: Solar aperture a_sol (m²).
        occupant_gain: Internal gain per occupant g_occ (W).
        hvac_coupling: Hydronic coupling k_hvac (W per kg/s per K).
        window_conductance: Extra conductance of an open window u_win (W/K).
    """

    room_ids: tuple[str, ...]
    resistance: np.ndarray
    capacitance: np.ndarray
    solar_aperture: np.ndarray
    occupant_gain: np.ndarray
    hvac_coupling: np.ndarray
    window_conductance: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "room_ids", tuple(self.room_ids))
        k = len(self.room_ids)
        for name in PARAM_NAMES:
            values = np.array(getattr(self, name), dtype=float).reshape(-1)
            if values.size == 1 and k > 1:
                values = np.repeat(values, k)
            if values.size != k:
                raise InputError(f"{name} needs {k} values, got {values.size}")
            if not np.all(np.isfinite(values)) or np.any(values <= 0):
                raise InputError(f"{name} must be finite and strictly positive")
            values.flags.writeable = False
            object.__setattr__(self, name, values)

    @classmethod
    def from_matrix(cls, room_ids: Sequence[str], matrix: np.ndarray) -> RcParams:
        """Build from a (K, 6) matrix in ``PARAM_NAMES`` order."""
        matrix = np.asarray(matrix, dtype=float)
        return cls(tuple(room_ids), *(matrix[:, j] for j in range(len(PARAM_NAMES))))

    def as_matrix(self) -> np.ndarray:
        """(K, 6) matrix in ``PARAM_NAMES`` order."""
        return np.column_stack([getattr(self, n) for n in PARAM_NAMES])

    def time_constants(self) -> np.ndarray:
        """R·C per room in seconds."""
        return self.resistance * self.capacitance

    def check_bounds(self, bounds: ParamBounds) -> None:
        """Raise ``InputError`` if any value lies outside ``bounds``."""
        lo, hi = bounds.arrays()
        m = self.as_matrix()
        bad = np.argwhere((m < lo) | (m > hi))
        if bad.size:
            k, j = bad[0]
            raise InputError(
                f"{PARAM_NAMES[j]} of room {self.room_ids[k]} = {m[k, j]:g} is outside "
                f"[{lo[j]:g}, {hi[j]:g}]"
            )

    def scaled(self, factors: np.ndarray) -> RcParams:
        """Multiply the (K, 6) parameter matrix elementwise by ``factors``."""
        return RcParams.from_matrix(self.room_ids, self.as_matrix() * factors)

    def to_dict(self) -> dict[str, dict[str, float]]:
        """Nested ``{room: {parameter: value}}`` mapping."""
        return {
            room: {n: float(getattr(self, n)[k]) for n in PARAM_NAMES}
            for k, room in enumerate(self.room_ids)
        }

    @classmethod
    def from_dict(cls, data: dict[str, dict[str, float]]) -> RcParams:
        """Inverse of ``to_dict``."""
        rooms = tuple(data)
        matrix = np.array([[float(data[r][n]) for n in PARAM_NAMES] for r in rooms])
        return cls.from_matrix(rooms, matrix)


@dataclass(frozen=True)
class ZoneState:
    """Indoor temperature per room (°C)."""

    temperatures: np.ndarray

    def __post_init__(self) -> None:
        temps = np.array(self.temperatures, dtype=float).reshape(-1)
        lo, hi = SANITY_BAND
        if not np.all(np.isfinite(temps)) or np.any((temps < lo) | (temps > hi)):
            raise NumericalError(f"zone state {temps} is outside the sanity band {SANITY_BAND}")
        temps.flags.writeable = False
        object.__setattr__(self, "temperatures", temps)


@dataclass(frozen=True)
class PhysicsModel:
    """RC parameters, integration step and initial state.

    Attributes:
        params: Per-room RC parameters.
        initial: Zone temperatures before the first bin.
        step_seconds: Explicit-Euler sub-step; must divide the data cadence.
        data_step_seconds: Data cadence (15 minutes).
    """

    params: RcParams
    initial: ZoneState
    step_seconds: float = 60.0
    data_step_seconds: float = DATA_STEP_SECONDS

    def __post_init__(self) -> None:
        if self.step_seconds <= 0:
            raise InputError("integration step must be positive")
        ratio = self.data_step_seconds / self.step_seconds
        if abs(ratio - round(ratio)) > 1e-9:
            raise InputError(
                f"integration step {self.step_seconds} s does not divide the "
                f"{self.data_step_seconds} s data cadence"
            )
        if self.initial.temperatures.size != len(self.params.room_ids):
            raise InputError("initial state needs one temperature per room")

    @property
    def substeps(self) -> int:
        return int(round(self.data_step_seconds / self.step_seconds))

    def with_params(self, params: RcParams) -> PhysicsModel:
        return dataclasses.replace(self, params=params)


@dataclass(frozen=True)
class SimulationInputs:
    """Exogenous drivers of the simulator, one row per data bin.

    Attributes:
        outdoor_temp: (N,) outdoor drybulb temperature, °C.
        solar: (N,) solar irradiance (direct + diffuse), W/m².
        supply_temp: (N,) hydronic supply temperature, °C.
        mass_flow: (N, K) room hydronic mass flow, kg/s.
        occupancy: (N, K) number of occupants.
        window: (N, K) window state, 1 = open.
    """

    outdoor_temp: np.ndarray
    solar: np.ndarray
    supply_temp: np.ndarray
    mass_flow: np.ndarray
    occupancy: np.ndarray
    window: np.ndarray
    room_ids: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        n = np.asarray(self.outdoor_temp).shape[0]
        for name in ("outdoor_temp", "solar", "supply_temp"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if arr.shape[0] != n:
                raise InputError(f"input channel {name} has {arr.shape[0]} rows, expected {n}")
            object.__setattr__(self, name, arr)
        widths = set()
        for name in ("mass_flow", "occupancy", "window"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            if arr.shape[0] != n:
                raise InputError(f"input channel {name} has {arr.shape[0]} rows, expected {n}")
            widths.add(arr.shape[1])
            object.__setattr__(self, name, arr)
        if len(widths) != 1:
            raise InputError("per-room input channels disagree on the room count")
        object.__setattr__(self, "room_ids", tuple(self.room_ids))

    def __len__(self) -> int:
        return self.outdoor_temp.shape[0]

    @property
    def n_rooms(self) -> int:
        return self.mass_flow.shape[1]

    @classmethod
    def from_dataset(
        cls, dataset: TimeSeriesDataset, room_ids: Sequence[str] | None = None
    ) -> SimulationInputs:
        """Pick the simulator drivers out of a dataset's exogenous channels.

        Raises:
            InputError: Naming the first missing channel.
        """
        rooms = tuple(room_ids) if room_ids is not None else dataset.room_ids
        solar = dataset.feature("weather_solar_direct") + dataset.feature("weather_solar_diffuse")

        def per_room(quantity: str) -> np.ndarray:
            return np.column_stack([dataset.feature(room_feature(r, quantity)) for r in rooms])

        return cls(
            outdoor_temp=dataset.feature("weather_drybulb"),
            solar=solar,
            supply_temp=dataset.feature("building_supply_temp"),
            mass_flow=per_room("mass_flow"),
            occupancy=per_room("occupancy"),
            window=per_room("window"),
            room_ids=rooms,
        )

    def rooms(self, columns: Sequence[int]) -> SimulationInputs:
        """Inputs restricted to the given room columns."""
        cols = list(columns)
        return dataclasses.replace(
            self,
            mass_flow=self.mass_flow[:, cols],
            occupancy=self.occupancy[:, cols],
            window=self.window[:, cols],
            room_ids=tuple(self.room_ids[c] for c in cols) if self.room_ids else (),
        )


def step_coefficients(
    params: RcParams,
    outdoor_temp: np.ndarray,
    solar: np.ndarray,
    supply_temp: np.ndarray,
    mass_flow: np.ndarray,
    occupancy: np.ndarray,
    window: np.ndarray,
    step_seconds: float,
    substeps: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Affine map ``T_end = A T_start + B`` of one data bin.

    Inputs are constant within a bin, so ``substeps`` explicit-Euler steps
    ``T <- a T + b`` collapse to ``A = a**M`` and ``B = b (1 + a + ... + a**(M-1))``.
    All channels broadcast against the trailing room axis.
    """
    t_out = np.asarray(outdoor_temp, dtype=float)
    irradiance = np.asarray(solar, dtype=float)
    t_sup = np.asarray(supply_temp, dtype=float)
    envelope = 1.0 / params.resistance + params.window_conductance * window
    hvac = params.hvac_coupling * mass_flow
    conductance = envelope + hvac
    forcing = (
        envelope * t_out
        + params.solar_aperture * irradiance
        + params.occupant_gain * occupancy
        + hvac * t_sup
    )
    ratio = step_seconds / params.capacitance
    a = 1.0 - ratio * conductance
    b = ratio * forcing
    power = np.ones_like(a)
    series = np.zeros_like(a)
    for _ in range(substeps):
        series = series * a + 1.0
        power = power * a
    return power, b * series


def _check_trajectory(trajectory: np.ndarray, step_seconds: float) -> None:
    lo, hi = SANITY_BAND
    bad = ~np.isfinite(trajectory) | (trajectory < lo) | (trajectory > hi)
    if bad.any():
        n, k = np.argwhere(bad)[0]
        raise NumericalError(
            f"simulation left the sanity band {SANITY_BAND} at step {n} (room column {k}) "
            f"with integration step {step_seconds:g} s; reduce the step"
        )


def simulate(
    model: PhysicsModel, inputs: SimulationInputs, horizon: int | None = None
) -> np.ndarray:
    """Simulate room temperatures for each data bin.

    Row n of the result is the temperature at the end of bin n.

    Args:
        model: Parameters, sub-step and initial state.
        inputs: Exogenous drivers.
        horizon: Number of bins to simulate (all rows by default).

    Returns:
        (horizon, K) temperatures in °C.

    Raises:
        InputError: If the inputs and the model disagree on the room count.
        NumericalError: If the state becomes non-finite or leaves the sanity band.
    """
    k = len(model.params.room_ids)
    if inputs.n_rooms != k:
        raise InputError(f"inputs cover {inputs.n_rooms} rooms, model has {k}")
    n = len(inputs) if horizon is None else int(horizon)
    if not 0 <= n <= len(inputs):
        raise InputError(f"horizon {horizon} exceeds the {len(inputs)} input rows")
    gain, offset = step_coefficients(
        model.params,
        inputs.outdoor_temp[:n, None],
        inputs.solar[:n, None],
        inputs.supply_temp[:n, None],
        inputs.mass_flow[:n],
        inputs.occupancy[:n],
        inputs.window[:n],
        model.step_seconds,
        model.substeps,
    )
    out = np.empty((n, k))
    with np.errstate(over="ignore", invalid="ignore"):
        for room in range(k):
            t = float(model.initial.temperatures[room])
            column = []
            for a, b in zip(gain[:, room].tolist(), offset[:, room].tolist()):
                t = a * t + b
                column.append(t)
            out[:, room] = column
    _check_trajectory(out, model.step_seconds)
    return out


def _rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((a - b) ** 2)))


def calibrate(
    model: PhysicsModel,
    observed: TimeSeriesDataset,
    bounds: ParamBounds = DEFAULT_BOUNDS,
    budget: int = 500,
    free: Sequence[str] | None = None,
) -> RcParams:
    """Fit RC parameters to measured temperatures with a bounded Nelder-Mead search.

    Rooms are thermally independent, so each room is fitted on its own; the
    summed squared error (and hence the all-room RMSE) is minimized room by
    room. The search runs in log-parameter space, clipped to ``bounds``.

    Args:
        model: Model holding the initial parameters and state.
        observed: Dataset with the simulator drivers and measured temperatures.
        bounds: Parameter bounds.
        budget: Maximum simulator runs per room. The starting point is
            evaluated once and shared with the first simplex vertex.
        free: Parameters to adjust (all by default); the rest stay fixed.

    Returns:
        Parameters whose RMSE is no worse than the initial parameters'.

    Raises:
        InputError: For a short dataset, infeasible bounds or a budget that
            is below the simplex size.
    """
    names = tuple(free) if free is not None else PARAM_NAMES
    unknown = [n for n in names if n not in PARAM_NAMES]
    if unknown or not names:
        raise InputError(f"unknown or empty free parameters: {unknown or names}")
    if budget < len(names) + 1:
        raise InputError(
            f"budget of {budget} evaluations is below the simplex size {len(names) + 1}"
        )
    if len(observed) * observed.step < np.timedelta64(1, "D"):
        raise InputError("calibration needs at least one day of observations")
    model.params.check_bounds(bounds)

    inputs = SimulationInputs.from_dataset(observed, model.params.room_ids)
    cols = [observed.room_ids.index(r) for r in model.params.room_ids]
    measured = observed.temperatures[:, cols]
    free_idx = [PARAM_NAMES.index(n) for n in names]
    lo, hi = bounds.arrays(names)
    log_bounds = list(zip(np.log(lo), np.log(hi)))
    matrix = model.params.as_matrix()

    for k, room in enumerate(model.params.room_ids):
        room_inputs = inputs.rooms([k])
        base = matrix[k].copy()
        initial_state = ZoneState(model.initial.temperatures[[k]])
        evaluations = 0
        seen: dict[bytes, float] = {}

        def objective(x: np.ndarray) -> float:
            nonlocal evaluations
            key = np.asarray(x, dtype=float).tobytes()
            if key in seen:
                return seen[key]
            # Nelder-Mead may overshoot maxfev inside an iteration
            if evaluations >= budget:
                return CALIBRATION_PENALTY
            evaluations += 1
            seen[key] = simulated_rmse(x)
            return seen[key]

        def simulated_rmse(x: np.ndarray) -> float:
            values = base.copy()
            values[free_idx] = np.exp(x)
            room_model = PhysicsModel(
                RcParams.from_matrix((room,), values[None, :]),
                initial_state,
                model.step_seconds,
                model.data_step_seconds,
            )
            try:
                predicted = simulate(room_model, room_inputs)
            except NumericalError:
                return CALIBRATION_PENALTY
            return _rmse(predicted[:, 0], measured[:, k])

        x0 = np.log(base[free_idx])
        f0 = objective(x0)
        simplex = [x0]
        for j in range(len(free_idx)):
            vertex = x0.copy()
            vertex[j] += 0.1 if vertex[j] + 0.1 <= log_bounds[j][1] else -0.1
            simplex.append(vertex)
        result = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            bounds=log_bounds,
            options={
                "maxfev": budget,
                "initial_simplex": np.array(simplex),
                "xatol": 1e-10,
                "fatol": 1e-12,
            },
        )
        if result.fun < f0:
            fitted = np.clip(np.exp(result.x), lo, hi)
            matrix[k, free_idx] = fitted
            logger.info(
                f"Calibrated room {room}: RMSE {f0:.4f} -> {result.fun:.4f} "
                f"after {evaluations} evaluations"
            )
        else:
            logger.info(f"Calibration kept the initial parameters of room {room} (RMSE {f0:.4f})")
    return RcParams.from_matrix(model.params.room_ids, matrix)
