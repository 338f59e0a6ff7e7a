"""Z-score standardization of model inputs (population standard deviation)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hytemp.errors import InputError

# Columns with a smaller spread count as constant.
CONSTANT_STD = 1e-12


@dataclass(frozen=True)
class StandardizationParams:
    """Per-feature mean and standard deviation.

    Attributes:
        mean: Column means of the training rows.
        std: Column population standard deviations; 1 for constant columns.
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float).ravel()
        std = np.array(self.std, dtype=float).ravel()
        if mean.shape != std.shape:
            raise InputError("mean and std must have the same length")
        if np.any(std <= 0) or not np.all(np.isfinite(std)):
            raise InputError("standard deviations must be finite and strictly positive")
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def __len__(self) -> int:
        return self.mean.size


def fit_standardizer(train: np.ndarray) -> StandardizationParams:
    """Fit column means and population standard deviations on training rows only.

    Raises:
        InputError: If there are no training rows.
    """
    data = np.asarray(train, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise InputError("cannot fit a standardizer on an empty training set")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    std = np.where(std < CONSTANT_STD, 1.0, std)
    return StandardizationParams(mean, std)


def _check_width(params: StandardizationParams, matrix: np.ndarray) -> np.ndarray:
    data = np.asarray(matrix, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(params):
        raise InputError(
            f"matrix has {data.shape[-1] if data.ndim else 0} columns, "
            f"standardizer was fitted on {len(params)}"
        )
    return data


def apply_standardizer(params: StandardizationParams, matrix: np.ndarray) -> np.ndarray:
    """Return ``(matrix - mean) / std``."""
    data = _check_width(params, matrix)
    return (data - params.mean) / params.std


def invert_standardizer(params: StandardizationParams, matrix: np.ndarray) -> np.ndarray:
    """Map standardized values back to the original scale."""
    data = _check_width(params, matrix)
    return data * params.std + params.mean
