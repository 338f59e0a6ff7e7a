"""Linear quantile regression, one weight vector per (room, level)."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from hytemp.errors import InputError
from hytemp.network import (
    DenseNetwork,
    LossTargets,
    TrainingHistory,
    TrainSettings,
    train_network,
)
from hytemp.quantiles import QuantileGrid, empirical_quantiles

if TYPE_CHECKING:
    from hytemp.models import TrainConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearQuantileModel:
    """Linear map from D inputs to K·Q quantiles (a network without hidden layers)."""

    network: DenseNetwork
    history: TrainingHistory

    def __post_init__(self) -> None:
        if self.network.hidden_sizes:
            raise InputError("a linear quantile model has no hidden layers")

    @property
    def coefficients(self) -> np.ndarray:
        """(D, K, Q) slopes."""
        w = self.network.weights[0]
        return w.reshape(w.shape[0], self.network.n_rooms, self.network.n_levels)

    @property
    def intercepts(self) -> np.ndarray:
        """(K, Q) intercepts."""
        return self.network.biases[0].reshape(self.network.n_rooms, self.network.n_levels)

    @property
    def weight_count(self) -> int:
        return self.network.parameter_count

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.network.predict(x)


def least_squares_start(x: np.ndarray, y: np.ndarray, grid: QuantileGrid) -> DenseNetwork:
    """Ordinary least squares slopes with the intercept moved to each residual quantile."""
    n, d = x.shape
    design = np.column_stack([x, np.ones(n)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    residuals = y - design @ coef
    shift = empirical_quantiles(residuals, grid.as_array(), axis=0)
    k, q = y.shape[1], len(grid)
    weights = np.repeat(coef[:d, :, None], q, axis=2).reshape(d, k * q)
    biases = (coef[d, :, None] + shift).reshape(k * q)
    return DenseNetwork((weights,), (biases,), "identity", k, q)


def linear_settings(config: TrainConfig, max_epochs: int | None = None, patience: int | None = None) -> TrainSettings:
    """Full-batch Adam with the learning rate halved on every plateau."""
    return TrainSettings(
        learning_rate=config.linear_learning_rate,
        max_epochs=config.linear_max_epochs if max_epochs is None else max_epochs,
        patience=config.patience if patience is None else patience,
        batch_size=None,
        min_delta=1e-8,
        decay_on_plateau=True,
        min_learning_rate=1e-8,
        seed=config.seed,
    )


def fit_linear(
    x: np.ndarray,
    y: np.ndarray,
    grid: QuantileGrid,
    config: TrainConfig,
    extra_targets: LossTargets = (),
) -> LinearQuantileModel:
    """Fit all (room, level) weight vectors by minimizing the mean pinball loss.

    Args:
        x: (N, D) standardized inputs.
        y: (N, K) targets.
        grid: Quantile levels.
        config: Training settings.
        extra_targets: Further (values, weight) loss terms, e.g. the physics term.

    Raises:
        InputError: If there are no more training rows than features, or shapes disagree.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InputError("cannot fit a linear model on zero rows")
    if y.ndim != 2 or y.shape[0] != x.shape[0]:
        raise InputError(f"targets have {y.shape[0] if y.ndim else 0} rows, inputs {x.shape[0]}")
    if x.shape[0] <= x.shape[1]:
        raise InputError(f"linear model needs more rows than features, got {x.shape[0]} rows for {x.shape[1]} features")
    start = least_squares_start(x, y, grid)
    targets = [(y, 1.0), *extra_targets]
    network, history = train_network(start, x, targets, grid.as_array(), linear_settings(config))
    logger.info(
        f"Linear model: {history.epochs} epochs, best epoch {history.best_epoch}, "
        f"loss {history.validation_loss[history.best_epoch]:.5f}"
    )
    return LinearQuantileModel(network, history)
