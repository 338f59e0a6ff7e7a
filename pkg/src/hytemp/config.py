"""Experiment configuration for hytemp."""

from __future__ import annotations

import dataclasses
import os
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli_w

from hytemp.errors import ConfigError, HytempError
from hytemp.files import atomic_output
from hytemp.hybrid import DEFAULT_LAMBDA, DEFAULT_SWEEP_LAMBDAS
from hytemp.models import TrainConfig
from hytemp.quantiles import QuantileGrid
from hytemp.strategies import ModelKind, StrategyName, parse_model_kind, parse_strategy
from hytemp.synthetic import ScenarioConfig

WORKERS_ENV = "HYTEMP_WORKERS"
DATA_SOURCES = ("synthetic", "csv")


def _xdg_base(variable: str, fallback: tuple[str, ...]) -> Path:
    value = os.environ.get(variable)
    base = Path(value) if value else Path.home().joinpath(*fallback)
    return base / "hytemp"


def get_default_config_dir() -> Path:
    """Directory holding experiment files: ``$XDG_CONFIG_HOME/hytemp``, else ``~/.config/hytemp``."""
    return _xdg_base("XDG_CONFIG_HOME", (".config",))


def get_default_config_path() -> Path:
    """Get the default experiment file path ($XDG_CONFIG_HOME/hytemp/experiment.toml)."""
    return get_default_config_dir() / "experiment.toml"


def get_default_data_dir() -> Path:
    """Root of the run directories: ``$XDG_DATA_HOME/hytemp``, else ``~/.local/share/hytemp``."""
    return _xdg_base("XDG_DATA_HOME", (".local", "share"))


def get_default_output_dir(name: str) -> Path:
    """Default run directory ($XDG_DATA_HOME/hytemp/runs/<name>)."""
    return get_default_data_dir() / "runs" / name


@dataclass(frozen=True)
class DataConfig:
    """Where the data comes from and how it is split.

    Attributes:
        source: ``"synthetic"`` to generate a scenario, ``"csv"`` to ingest ``path``.
        path: Dataset file for the csv source.
        rooms: Rooms to model; empty means every room of the dataset.
        train_rows: Length of the training block (first test row); defaults to
            the scenario's test start, or half of an ingested dataset.
        calibration_fraction: Share of the training block held out for conformal calibration.
        calibrate_physics: Re-fit the RC parameters on the training block and
            regenerate the physics channel before training.
        calibration_budget: Simulator evaluations per room for that fit.
    """

    source: str = "synthetic"
    path: str | None = None
    rooms: tuple[str, ...] = ()
    train_rows: int | None = None
    calibration_fraction: float = 0.2
    calibrate_physics: bool = False
    calibration_budget: int = 500

    def __post_init__(self) -> None:
        object.__setattr__(self, "rooms", tuple(self.rooms))
        if self.source not in DATA_SOURCES:
            raise ConfigError(f"data.source must be one of {', '.join(DATA_SOURCES)}, got {self.source!r}")
        if self.source == "csv" and not self.path:
            raise ConfigError("data.path is required for the csv source")
        if self.train_rows is not None and self.train_rows < 1:
            raise ConfigError("data.train_rows must be positive")
        if not 0.0 < self.calibration_fraction < 1.0:
            raise ConfigError("data.calibration_fraction must lie in (0, 1)")
        if self.calibration_budget < 1:
            raise ConfigError("data.calibration_budget must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a run, including the seed.

    Attributes:
        name: Run name, used for the default output directory.
        seed: Root seed; every combination derives its own sub-seed from it.
        output_dir: Output directory (XDG default when empty).
        strategies: Strategy names, see ``StrategyName``.
        models: Learner kinds, see ``ModelKind``.
        quantile_count: Size of the uniform level grid.
        conformal: Carve out a calibration set and conformalize forecasts.
        alphas: Miscoverage levels of the evaluated intervals.
        pooled_conformal: One correction per α across rooms.
        full_grid_conformal: Conformalize every symmetric level pair.
        constrained_weight: λ of the constrained strategy in ``run``.
        lambdas: λ values of the sensitivity sweep.
        include_physics_feature: Feed the physics channel to residual learners.
        trace_days: Length of the forecast trace written per pipeline.
        workers: Parallel combinations (``HYTEMP_WORKERS`` overrides).
        data: Data section.
        scenario: Synthetic scenario section.
        train: Learner section.
    """

    name: str = "default"
    seed: int = 0
    output_dir: str = ""
    strategies: tuple[str, ...] = tuple(s.value for s in StrategyName)
    models: tuple[str, ...] = ("linear", "mlp", "forest")
    quantile_count: int = 99
    conformal: bool = True
    alphas: tuple[float, ...] = (0.1,)
    pooled_conformal: bool = False
    full_grid_conformal: bool = False
    constrained_weight: float = DEFAULT_LAMBDA
    lambdas: tuple[float, ...] = DEFAULT_SWEEP_LAMBDAS
    include_physics_feature: bool = True
    trace_days: int = 7
    workers: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        for name in ("strategies", "models", "alphas", "lambdas"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.strategies:
            raise ConfigError("strategies must not be empty")
        if not self.models:
            raise ConfigError("models must not be empty")
        try:
            for s in self.strategies:
                parse_strategy(s)
            for m in self.models:
                parse_model_kind(m)
            grid = self.grid
            for alpha in self.alphas:
                grid.interval_indices(alpha)
        except HytempError as e:
            raise ConfigError(str(e)) from e
        if len(set(self.strategies)) != len(self.strategies) or len(set(self.models)) != len(self.models):
            raise ConfigError("strategies and models must not repeat")
        if self.constrained_weight < 0 or any(v < 0 for v in self.lambdas):
            raise ConfigError("regularization weights must be non-negative")
        if not self.lambdas:
            raise ConfigError("lambdas must not be empty")
        if self.trace_days < 0:
            raise ConfigError("trace_days must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @property
    def grid(self) -> QuantileGrid:
        return QuantileGrid.uniform(self.quantile_count)

    @property
    def strategy_names(self) -> list[StrategyName]:
        return [parse_strategy(s) for s in self.strategies]

    @property
    def model_kinds(self) -> list[ModelKind]:
        return [parse_model_kind(m) for m in self.models]

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir) if self.output_dir else get_default_output_dir(self.name)

    def effective_workers(self) -> int:
        """Worker count, overridden by the ``HYTEMP_WORKERS`` environment variable."""
        raw = os.environ.get(WORKERS_ENV)
        if raw is None:
            return self.workers
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
        if workers < 1:
            raise ConfigError(f"{WORKERS_ENV} must be at least 1")
        return workers

    def replace(self, **changes: Any) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        """Convert config to a TOML-ready dictionary (``None`` values are left out)."""
        return {
            **_section_dict(self, exclude=("data", "scenario", "train")),
            "data": _section_dict(self.data),
            "scenario": _section_dict(self.scenario),
            "train": _section_dict(self.train),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExperimentConfig:
        """Create config from dictionary.

        Raises:
            ConfigError: For unknown keys, wrong types or invalid values.
        """
        data = dict(data)
        sections = {}
        for name, section_cls in (("data", DataConfig), ("scenario", ScenarioConfig), ("train", TrainConfig)):
            raw = data.pop(name, {})
            if not isinstance(raw, dict):
                raise ConfigError(f"[{name}] must be a table")
            sections[name] = _build(section_cls, raw, name)
        top = _coerce_fields(cls, data, "", exclude=("data", "scenario", "train"))
        try:
            return cls(**top, **sections)
        except HytempError as e:
            raise ConfigError(str(e)) from e


def _section_dict(obj: Any, exclude: tuple[str, ...] = ()) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in dataclasses.fields(obj):
        if f.name in exclude:
            continue
        value = getattr(obj, f.name)
        if value is None:
            continue
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list, got {value!r}")
        if default:
            return tuple(_coerce(f"{key}[{i}]", v, default[0]) for i, v in enumerate(value))
        return tuple(_coerce(f"{key}[{i}]", v, "") for i, v in enumerate(value))
    raise ConfigError(f"{key} has an unsupported value {value!r}")


# Stand-in defaults for optional fields, keyed by the annotation of the set value
_OPTIONAL_SAMPLES: dict[str, Any] = {"int": 0, "float": 0.0, "str": "", "bool": False}


def _defaults(cls: type) -> dict[str, Any]:
    """Field defaults; an optional field (default ``None``) maps to a sample of its declared type."""
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is None:
            declared = str(f.type).split("|")[0].strip()
            out[f.name] = _OPTIONAL_SAMPLES[declared]
        elif f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


def _coerce_fields(cls: type, data: dict[str, Any], section: str, exclude: tuple[str, ...] = ()) -> dict[str, Any]:
    defaults = {k: v for k, v in _defaults(cls).items() if k not in exclude}
    prefix = f"{section}." if section else ""
    unknown = sorted(set(data) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key {prefix}{unknown[0]}")
    return {key: _coerce(f"{prefix}{key}", value, defaults[key]) for key, value in data.items()}


def _build(cls: type, data: dict[str, Any], section: str) -> Any:
    values = _coerce_fields(cls, data, section)
    try:
        return cls(**values)
    except HytempError as e:
        raise ConfigError(f"[{section}] {e}") from e


def load_config(config_path: Path | None = None) -> ExperimentConfig:
    """Load an experiment from file.

    A missing default file gives the default experiment; an explicitly named
    file must exist.

    Raises:
        ConfigError: If the file cannot be read, parsed or validated.
    """
    explicit = config_path is not None
    if config_path is None:
        config_path = get_default_config_path()

    if not config_path.exists():
        if explicit:
            raise ConfigError(f"config file {config_path} does not exist")
        return ExperimentConfig()

    try:
        with open(config_path, "rb") as f:
            data = tomllib.load(f)
    except (tomllib.TOMLDecodeError, OSError) as e:
        raise ConfigError(f"cannot read {config_path}: {e}") from e
    return ExperimentConfig.from_dict(data)


def save_config(config: ExperimentConfig, config_path: Path | None = None) -> None:
    """Write ``config`` as TOML, atomically; the default target is ``get_default_config_path()``."""
    target = config_path if config_path is not None else get_default_config_path()
    with atomic_output(target) as tmp, open(tmp, "wb") as f:
        tomli_w.dump(config.to_dict(), f)
