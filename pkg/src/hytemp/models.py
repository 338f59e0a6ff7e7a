"""Training settings and a uniform interface over the three quantile learners."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from hytemp.errors import InputError
from hytemp.forest import (
    QuantileForest,
    extend_forest,
    fit_forest,
    forest_from_arrays,
    forest_to_arrays,
)
from hytemp.linear import LinearQuantileModel, fit_linear, linear_settings
from hytemp.mlp import QuantileMlp, fit_mlp, mlp_settings, train_with_validation
from hytemp.network import ACTIVATIONS, DenseNetwork, LossTargets, TrainingHistory, train_network
from hytemp.quantiles import QuantileGrid
from hytemp.strategies import ModelKind

logger = logging.getLogger(__name__)

QuantileModel = LinearQuantileModel | QuantileMlp | QuantileForest


@dataclass(frozen=True)
class TrainConfig:
    """Settings of every learner.

    Attributes:
        batch_size: Network mini-batch size.
        max_epochs: Network epoch limit.
        patience: Epochs without validation improvement before stopping.
        validation_fraction: Trailing share of the training rows used for early stopping.
        learning_rate: Network Adam step size.
        seed: Seed of initialization, shuffling and bootstrap draws.
        hidden_layers: Hidden layer widths of the network.
        activation: Hidden activation of the network.
        linear_learning_rate: Initial Adam step size of the linear model.
        linear_max_epochs: Epoch limit of the linear model.
        n_trees: Forest size.
        min_samples_split: Smallest node the forest splits.
        min_samples_leaf: Smallest forest leaf.
        max_features: Share of features tried per split (1.0 = all).
        forest_bootstrap: Grow each tree on a bootstrap sample.
        fine_tune_patience: Early-stopping patience while fine-tuning.
        fine_tune_epochs: Epoch limit while fine-tuning (``max_epochs`` if None).
        fine_tune_trees: Trees added when fine-tuning a forest.
        n_jobs: Threads used to grow trees.
    """

    batch_size: int = 32
    max_epochs: int = 1000
    patience: int = 10
    validation_fraction: float = 0.2
    learning_rate: float = 1e-3
    seed: int = 0
    hidden_layers: tuple[int, ...] = (128, 128)
    activation: str = "sigmoid"
    linear_learning_rate: float = 0.01
    linear_max_epochs: int = 5000
    n_trees: int = 500
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: float = 1.0
    forest_bootstrap: bool = True
    fine_tune_patience: int = 3
    fine_tune_epochs: int | None = None
    fine_tune_trees: int = 100
    n_jobs: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        positive = ("batch_size", "n_trees", "min_samples_leaf", "n_jobs", "patience", "fine_tune_patience")
        for name in positive:
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be at least 1, got {getattr(self, name)}")
        for name in ("max_epochs", "linear_max_epochs", "fine_tune_trees"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be non-negative")
        if self.fine_tune_epochs is not None and self.fine_tune_epochs < 0:
            raise InputError("fine_tune_epochs must be non-negative")
        if self.min_samples_split < 2:
            raise InputError("min_samples_split must be at least 2")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise InputError("validation_fraction must lie in [0, 1)")
        if not 0.0 < self.max_features <= 1.0:
            raise InputError("max_features must lie in (0, 1]")
        if self.learning_rate <= 0 or self.linear_learning_rate <= 0:
            raise InputError("learning rates must be positive")
        if any(h < 1 for h in self.hidden_layers):
            raise InputError("hidden layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r} (expected one of {', '.join(ACTIVATIONS)})")

    def with_seed(self, seed: int) -> TrainConfig:
        return dataclasses.replace(self, seed=seed)


def model_kind_of(model: QuantileModel) -> ModelKind:
    if isinstance(model, LinearQuantileModel):
        return ModelKind.LINEAR
    if isinstance(model, QuantileMlp):
        return ModelKind.MLP
    return ModelKind.FOREST


def fit_model(
    kind: ModelKind,
    x: np.ndarray,
    y: np.ndarray,
    grid: QuantileGrid,
    config: TrainConfig,
    physics_target: np.ndarray | None = None,
    physics_weight: float = 0.0,
) -> QuantileModel:
    """Fit a learner of the given kind.

    With a physics target, gradient learners add ``physics_weight`` times the
    pinball loss against it; the forest instead appends the target, scaled by
    the square root of the weight, as split-only columns (left out when the
    weight is zero).
    """
    extra: LossTargets = ()
    if physics_target is not None:
        extra = ((np.asarray(physics_target, dtype=float), float(physics_weight)),)
    if kind is ModelKind.LINEAR:
        return fit_linear(x, y, grid, config, extra)
    if kind is ModelKind.MLP:
        return fit_mlp(x, y, grid, config, extra)
    split_only = None
    if physics_target is not None and physics_weight > 0:
        split_only = np.sqrt(physics_weight) * np.asarray(physics_target, dtype=float)
    return fit_forest(x, y, config, split_only)


def predict_model(model: QuantileModel, x: np.ndarray, grid: QuantileGrid) -> np.ndarray:
    """Raw (N, K, Q) quantile predictions, not yet sorted."""
    if isinstance(model, QuantileForest):
        return model.predict(x, grid.as_array())
    if model.network.n_levels != len(grid):
        raise InputError(f"model predicts {model.network.n_levels} levels, grid has {len(grid)}")
    return model.predict(x)


def continue_training(
    model: QuantileModel, x: np.ndarray, y: np.ndarray, grid: QuantileGrid, config: TrainConfig
) -> QuantileModel:
    """Warm-started training on new targets.

    Networks keep their weights and resume Adam with ``fine_tune_patience``;
    forests keep their trees and grow ``fine_tune_trees`` more.
    """
    if isinstance(model, QuantileForest):
        return extend_forest(model, x, y, config.fine_tune_trees, config)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    targets = [(y, 1.0)]
    epochs = config.fine_tune_epochs
    if isinstance(model, LinearQuantileModel):
        limit = config.linear_max_epochs if epochs is None else epochs
        settings = linear_settings(config, max_epochs=limit, patience=config.fine_tune_patience)
        network, history = train_network(model.network, x, targets, grid.as_array(), settings)
        return LinearQuantileModel(network, history)
    limit = config.max_epochs if epochs is None else epochs
    settings = mlp_settings(config, max_epochs=limit, patience=config.fine_tune_patience)
    network, history = train_with_validation(model.network, x, targets, grid, config, settings)
    logger.info(f"Fine-tuned network for {history.epochs} epochs, best epoch {history.best_epoch}")
    return QuantileMlp(network, history)


def model_to_arrays(model: QuantileModel) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Named arrays and JSON-ready metadata describing a fitted model."""
    if isinstance(model, QuantileForest):
        return forest_to_arrays(model), {"kind": ModelKind.FOREST.value}
    network = model.network
    arrays: dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(zip(network.weights, network.biases)):
        arrays[f"net_weight_{i}"] = w
        arrays[f"net_bias_{i}"] = b
    for name, values in model.history.to_arrays().items():
        arrays[f"history_{name}"] = values
    meta = {
        "kind": model_kind_of(model).value,
        "activation": network.activation,
        "layers": len(network.weights),
        "n_rooms": network.n_rooms,
        "n_levels": network.n_levels,
    }
    return arrays, meta


def model_from_arrays(arrays: dict[str, np.ndarray], meta: dict[str, Any]) -> QuantileModel:
    """Inverse of ``model_to_arrays``."""
    kind = ModelKind(meta["kind"])
    if kind is ModelKind.FOREST:
        return forest_from_arrays(arrays)
    layers = int(meta["layers"])
    network = DenseNetwork(
        tuple(arrays[f"net_weight_{i}"] for i in range(layers)),
        tuple(arrays[f"net_bias_{i}"] for i in range(layers)),
        meta["activation"],
        int(meta["n_rooms"]),
        int(meta["n_levels"]),
    )
    history = TrainingHistory.from_arrays({k[len("history_") :]: v for k, v in arrays.items() if k.startswith("history_")})
    if kind is ModelKind.LINEAR:
        return LinearQuantileModel(network, history)
    return QuantileMlp(network, history)
