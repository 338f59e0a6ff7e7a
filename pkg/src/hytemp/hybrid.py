"""Hybrid predictors combining the physics channel with a quantile learner.

Each strategy reads only the channels it declares:

- data-driven: features -> measured temperatures
- assistant: features and physics -> measured temperatures
- residual: features and physics -> measured minus physics, physics added back
- surrogate: features -> physics
- augmentation: surrogate, then fine-tuned on measured temperatures
- constrained: features -> measured temperatures, loss regularized towards physics
"""

from __future__ import annotations

import dataclasses
import json
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from hytemp.conformal import ConformalCalibrator
from hytemp.dataset import DatasetSplit, TimeSeriesDataset
from hytemp.errors import InputError, UsageError
from hytemp.files import atomic_output
from hytemp.metrics import pbl
from hytemp.models import (
    QuantileModel,
    TrainConfig,
    continue_training,
    fit_model,
    model_from_arrays,
    model_to_arrays,
    predict_model,
)
from hytemp.quantiles import QuantileForecast, QuantileGrid, sort_quantiles
from hytemp.standardize import (
    StandardizationParams,
    apply_standardizer,
    fit_standardizer,
)
from hytemp.strategies import (
    NEEDS_PHYSICS_TO_PREDICT,
    NEEDS_PHYSICS_TO_TRAIN,
    ModelKind,
    StrategyName,
    parse_strategy,
)

logger = logging.getLogger(__name__)

PIPELINE_SCHEMA_VERSION = 1
DEFAULT_LAMBDA = 0.1
DEFAULT_SWEEP_LAMBDAS = (0.0, 0.1, 0.5, 1.0, 5.0)
PHYSICS_SOURCE = "physics channel (ep_<room>)"


@dataclass(frozen=True)
class HybridStrategy:
    """A strategy name; the constrained strategy also carries its weight λ."""

    name: StrategyName
    weight: float | None = None

    def __post_init__(self) -> None:
        if self.name is StrategyName.CONSTRAINED:
            if self.weight is None:
                raise InputError("the constrained strategy needs a regularization weight")
            if not np.isfinite(self.weight) or self.weight < 0:
                raise InputError(f"regularization weight must be non-negative, got {self.weight}")
        elif self.weight is not None:
            raise InputError(f"strategy {self.name.value} takes no regularization weight")

    @classmethod
    def of(cls, name: str | StrategyName, weight: float | None = None) -> HybridStrategy:
        """Strategy from a name; constrained defaults to λ = 0.1."""
        strategy = name if isinstance(name, StrategyName) else parse_strategy(name)
        if strategy is StrategyName.CONSTRAINED and weight is None:
            weight = DEFAULT_LAMBDA
        return cls(strategy, weight)

    @property
    def label(self) -> str:
        if self.weight is None:
            return self.name.value
        return f"{self.name.value}[{self.weight:g}]"


@dataclass(frozen=True)
class HybridPipeline:
    """A trained hybrid predictor.

    Attributes:
        strategy: How the physics channel is used.
        kind: Learner kind.
        model: Fitted learner.
        standardizer: Input standardization (None for forests).
        grid: Quantile levels.
        room_ids: Rooms of the output.
        feature_names: Names of the D exogenous inputs.
        include_physics_feature: Whether assistant/residual inputs end with the K physics columns.
        calibrator: Optional conformal corrections.
        physics_source: Where the physics channel comes from.
    """

    strategy: HybridStrategy
    kind: ModelKind
    model: QuantileModel
    standardizer: StandardizationParams | None
    grid: QuantileGrid
    room_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    include_physics_feature: bool = True
    calibrator: ConformalCalibrator | None = None
    physics_source: str = PHYSICS_SOURCE

    @property
    def uses_physics_input(self) -> bool:
        return _physics_as_input(self.strategy.name, self.include_physics_feature)

    @property
    def needs_physics(self) -> bool:
        return self.strategy.name in NEEDS_PHYSICS_TO_PREDICT and (
            self.uses_physics_input or self.strategy.name is StrategyName.RESIDUAL
        )

    @property
    def input_width(self) -> int:
        """D, or D + K when the physics columns are inputs."""
        return len(self.feature_names) + (len(self.room_ids) if self.uses_physics_input else 0)

    def with_calibrator(self, calibrator: ConformalCalibrator | None) -> HybridPipeline:
        return dataclasses.replace(self, calibrator=calibrator)


def _physics_as_input(name: StrategyName, include_physics_feature: bool) -> bool:
    return include_physics_feature and name in NEEDS_PHYSICS_TO_PREDICT


def _design(features: np.ndarray, physics: np.ndarray | None, with_physics: bool) -> np.ndarray:
    if not with_physics:
        return features
    assert physics is not None
    return np.column_stack([features, physics])


def _training_targets(strategy: StrategyName, y: np.ndarray | None, physics: np.ndarray | None) -> np.ndarray:
    if strategy in (StrategyName.SURROGATE, StrategyName.AUGMENTATION):
        assert physics is not None
        return physics
    assert y is not None
    if strategy is StrategyName.RESIDUAL:
        assert physics is not None
        return y - physics
    return y


def train_hybrid(
    strategy: HybridStrategy,
    dataset: TimeSeriesDataset,
    split: DatasetSplit,
    kind: ModelKind,
    config: TrainConfig,
    grid: QuantileGrid | None = None,
    include_physics_feature: bool = True,
) -> HybridPipeline:
    """Train a hybrid pipeline on the split's training rows.

    Surrogate training never reads the measured temperatures and data-driven
    training never reads the physics channel.

    Raises:
        InputError: If the strategy needs a physics channel the dataset lacks.
    """
    grid = grid or QuantileGrid.default()
    rows = split.train
    name = strategy.name
    physics = None
    if name in NEEDS_PHYSICS_TO_TRAIN:
        physics = dataset.require_physics()[rows]
    y = None if name in (StrategyName.SURROGATE, StrategyName.AUGMENTATION) else dataset.temperatures[rows]
    x = _design(dataset.features[rows], physics, _physics_as_input(name, include_physics_feature))
    standardizer = None
    if kind is not ModelKind.FOREST:
        standardizer = fit_standardizer(x)
        x = apply_standardizer(standardizer, x)
    targets = _training_targets(name, y, physics)
    logger.info(f"Training {strategy.label} with {kind.value} on {len(rows)} rows, {x.shape[1]} inputs")
    if name is StrategyName.CONSTRAINED:
        model = fit_model(kind, x, targets, grid, config, physics_target=physics, physics_weight=strategy.weight or 0.0)
    else:
        model = fit_model(kind, x, targets, grid, config)
    pipeline = HybridPipeline(
        strategy=HybridStrategy(StrategyName.SURROGATE) if name is StrategyName.AUGMENTATION else strategy,
        kind=kind,
        model=model,
        standardizer=standardizer,
        grid=grid,
        room_ids=dataset.room_ids,
        feature_names=dataset.schema.names,
        include_physics_feature=include_physics_feature,
    )
    if name is StrategyName.AUGMENTATION:
        pipeline = fine_tune(pipeline, dataset, rows, config)
    return pipeline


def _inputs(pipeline: HybridPipeline, features: np.ndarray, physics: np.ndarray | None) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] != len(pipeline.feature_names):
        width = x.shape[-1] if x.ndim else 0
        raise InputError(f"got {width} exogenous features, pipeline was trained on {len(pipeline.feature_names)}")
    if pipeline.needs_physics:
        if physics is None:
            raise InputError(f"the {pipeline.strategy.name.value} strategy needs the physics channel at prediction time")
        physics = np.asarray(physics, dtype=float)
        if physics.shape != (x.shape[0], len(pipeline.room_ids)):
            raise InputError(f"physics channel {physics.shape} does not match ({x.shape[0]}, {len(pipeline.room_ids)})")
    x = _design(x, physics, pipeline.uses_physics_input)
    if pipeline.standardizer is not None:
        x = apply_standardizer(pipeline.standardizer, x)
    return x


def predict_raw(pipeline: HybridPipeline, features: np.ndarray, physics: np.ndarray | None = None) -> np.ndarray:
    """Unsorted (N, K, Q) learner output (residual quantiles for the residual strategy)."""
    return predict_model(pipeline.model, _inputs(pipeline, features, physics), pipeline.grid)


def predict_hybrid(
    pipeline: HybridPipeline, features: np.ndarray, physics: np.ndarray | None = None
) -> QuantileForecast:
    """Sorted temperature quantiles; the residual strategy adds the physics channel back.

    Raises:
        InputError: If a required physics channel is missing or widths disagree.
    """
    values = predict_raw(pipeline, features, physics)
    if pipeline.strategy.name is StrategyName.RESIDUAL:
        assert physics is not None
        values = values + np.asarray(physics, dtype=float)[:, :, None]
    return sort_quantiles(QuantileForecast(values, pipeline.grid, pipeline.room_ids))


def predict_rows(pipeline: HybridPipeline, dataset: TimeSeriesDataset, rows: np.ndarray) -> QuantileForecast:
    """Forecast for selected dataset rows, reading the physics channel only when needed."""
    physics = dataset.require_physics()[rows] if pipeline.needs_physics else None
    return predict_hybrid(pipeline, dataset.features[rows], physics)


def fine_tune(pipeline: HybridPipeline, dataset: TimeSeriesDataset, rows: np.ndarray, config: TrainConfig) -> HybridPipeline:
    """Continue training a surrogate on measured temperatures.

    Networks resume from their weights with early-stopping patience
    ``config.fine_tune_patience``; forests keep their trees and grow
    ``config.fine_tune_trees`` more on the measured data.

    Raises:
        UsageError: If the pipeline is not a surrogate.
    """
    if pipeline.strategy.name is not StrategyName.SURROGATE:
        raise UsageError(f"only surrogate pipelines can be fine-tuned, not {pipeline.strategy.name.value}")
    x = _inputs(pipeline, dataset.features[rows], None)
    model = continue_training(pipeline.model, x, dataset.temperatures[rows], pipeline.grid, config)
    return dataclasses.replace(pipeline, strategy=HybridStrategy(StrategyName.AUGMENTATION), model=model)


def sensitivity_sweep(
    lambdas: Sequence[float],
    dataset: TimeSeriesDataset,
    split: DatasetSplit,
    kind: ModelKind,
    config: TrainConfig,
    grid: QuantileGrid | None = None,
    workers: int = 1,
) -> pd.DataFrame:
    """Test-set pinball loss of constrained pipelines, one row per λ.

    Every λ trains with the same seed. Columns: one per room plus ``mean``.

    Raises:
        InputError: For an empty or negative λ list.
    """
    values = [float(v) for v in lambdas]
    if not values:
        raise InputError("the λ list is empty")
    if any(v < 0 for v in values):
        raise InputError(f"λ values must be non-negative, got {values}")
    y_test = dataset.temperatures[split.test]

    def one(weight: float) -> np.ndarray:
        pipeline = train_hybrid(HybridStrategy(StrategyName.CONSTRAINED, weight), dataset, split, kind, config, grid)
        return pbl(predict_rows(pipeline, dataset, split.test), y_test).per_room

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        per_room = list(pool.map(one, values))
    table = pd.DataFrame(np.array(per_room), columns=list(dataset.room_ids))
    table["mean"] = table[list(dataset.room_ids)].mean(axis=1)
    table.insert(0, "lambda", values)
    return table


def save_pipeline(pipeline: HybridPipeline, path: Path | str) -> None:
    """Write a pipeline to a compressed ``.npz`` container with a JSON ``meta`` entry."""
    arrays, model_meta = model_to_arrays(pipeline.model)
    if pipeline.standardizer is not None:
        arrays["standardizer_mean"] = pipeline.standardizer.mean
        arrays["standardizer_std"] = pipeline.standardizer.std
    meta: dict[str, Any] = {
        "schema_version": PIPELINE_SCHEMA_VERSION,
        "strategy": pipeline.strategy.name.value,
        "lambda": pipeline.strategy.weight,
        "model": model_meta,
        "grid": list(pipeline.grid.levels),
        "room_ids": list(pipeline.room_ids),
        "feature_names": list(pipeline.feature_names),
        "include_physics_feature": pipeline.include_physics_feature,
        "physics_source": pipeline.physics_source,
        "calibrator": None if pipeline.calibrator is None else pipeline.calibrator.to_dict(),
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with atomic_output(path) as tmp:
        with open(tmp, "wb") as f:
            np.savez_compressed(f, **arrays)


def load_pipeline(path: Path | str) -> HybridPipeline:
    """Read a pipeline written by ``save_pipeline``.

    Raises:
        InputError: For an unknown schema version or a malformed container.
    """
    with np.load(path, allow_pickle=False) as archive:
        arrays = {name: archive[name] for name in archive.files}
    try:
        meta = json.loads(str(arrays.pop("meta")))
    except (KeyError, json.JSONDecodeError) as e:
        raise InputError(f"{path} is not a pipeline container: {e}") from e
    if meta.get("schema_version") != PIPELINE_SCHEMA_VERSION:
        raise InputError(f"{path} has unsupported schema version {meta.get('schema_version')}")
    standardizer = None
    if "standardizer_mean" in arrays:
        standardizer = StandardizationParams(arrays.pop("standardizer_mean"), arrays.pop("standardizer_std"))
    calibrator = None if meta["calibrator"] is None else ConformalCalibrator.from_dict(meta["calibrator"])
    return HybridPipeline(
        strategy=HybridStrategy(StrategyName(meta["strategy"]), meta["lambda"]),
        kind=ModelKind(meta["model"]["kind"]),
        model=model_from_arrays(arrays, meta["model"]),
        standardizer=standardizer,
        grid=QuantileGrid(tuple(meta["grid"])),
        room_ids=tuple(meta["room_ids"]),
        feature_names=tuple(meta["feature_names"]),
        include_physics_feature=bool(meta["include_physics_feature"]),
        calibrator=calibrator,
        physics_source=meta["physics_source"],
    )
