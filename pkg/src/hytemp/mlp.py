"""Multi-output quantile feed-forward network."""

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
    init_network,
    train_network,
)
from hytemp.quantiles import QuantileGrid, empirical_quantiles

if TYPE_CHECKING:
    from hytemp.models import TrainConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuantileMlp:
    """Network with a linear output layer of width K·Q."""

    network: DenseNetwork
    history: TrainingHistory

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.network.predict(x)


def validation_split(n: int, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of the fitting part and of the trailing validation part."""
    n_val = int(round(fraction * n))
    if fraction > 0 and n >= 2:
        n_val = min(max(n_val, 1), n - 1)
    else:
        n_val = 0
    return np.arange(n - n_val), np.arange(n - n_val, n)


def mlp_settings(config: TrainConfig, max_epochs: int | None = None, patience: int | None = None) -> TrainSettings:
    return TrainSettings(
        learning_rate=config.learning_rate,
        max_epochs=config.max_epochs if max_epochs is None else max_epochs,
        patience=config.patience if patience is None else patience,
        batch_size=config.batch_size,
        seed=config.seed,
    )


def train_with_validation(
    network: DenseNetwork,
    x: np.ndarray,
    targets: LossTargets,
    grid: QuantileGrid,
    config: TrainConfig,
    settings: TrainSettings,
) -> tuple[DenseNetwork, TrainingHistory]:
    """Train on the leading rows and stop early on the trailing validation rows."""
    fit_rows, val_rows = validation_split(x.shape[0], config.validation_fraction)
    fit_targets = [(values[fit_rows], weight) for values, weight in targets]
    validation = None
    if val_rows.size:
        validation = (x[val_rows], [(values[val_rows], weight) for values, weight in targets])
    return train_network(network, x[fit_rows], fit_targets, grid.as_array(), settings, validation)


def fit_mlp(
    x: np.ndarray,
    y: np.ndarray,
    grid: QuantileGrid,
    config: TrainConfig,
    extra_targets: LossTargets = (),
) -> QuantileMlp:
    """Train a quantile network with mini-batch Adam and early stopping.

    The last ``config.validation_fraction`` of the rows is held out for early
    stopping; the weights of the best validation epoch are kept. Output biases
    start at the per-room empirical quantiles of the fitting targets.

    Raises:
        InputError: If there are no training rows.
        NumericalError: If the loss becomes non-finite.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InputError("cannot fit a network on zero rows")
    if y.ndim != 2 or y.shape[0] != x.shape[0]:
        raise InputError(f"targets have {y.shape[0] if y.ndim else 0} rows, inputs {x.shape[0]}")
    fit_rows, _ = validation_split(x.shape[0], config.validation_fraction)
    rng = np.random.default_rng(config.seed)
    start = init_network(
        x.shape[1],
        config.hidden_layers,
        y.shape[1],
        len(grid),
        config.activation,
        rng,
        output_bias=empirical_quantiles(y[fit_rows], grid.as_array(), axis=0),
    )
    targets = [(y, 1.0), *extra_targets]
    network, history = train_with_validation(start, x, targets, grid, config, mlp_settings(config))
    logger.info(
        f"Network {list(config.hidden_layers)} ({config.activation}): {history.epochs} epochs, "
        f"best epoch {history.best_epoch}, validation loss {history.validation_loss[history.best_epoch]:.5f}"
    )
    return QuantileMlp(network, history)
