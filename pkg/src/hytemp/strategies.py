"""Hybrid strategy and model-kind enums and their name tables."""

from enum import Enum

from hytemp.errors import InputError


class StrategyName(Enum):
    """How the physics channel enters a hybrid predictor."""

    DATA_DRIVEN = "data_driven"
    ASSISTANT = "assistant"
    RESIDUAL = "residual"
    SURROGATE = "surrogate"
    AUGMENTATION = "augmentation"
    CONSTRAINED = "constrained"


class ModelKind(Enum):
    """Quantile learner behind a pipeline."""

    LINEAR = "linear"
    MLP = "mlp"
    FOREST = "forest"


STRATEGY_LABELS: dict[StrategyName, str] = {
    StrategyName.DATA_DRIVEN: "Data-driven only",
    StrategyName.ASSISTANT: "Physics as input",
    StrategyName.RESIDUAL: "Residual learning",
    StrategyName.SURROGATE: "Surrogate",
    StrategyName.AUGMENTATION: "Surrogate + fine-tuning",
    StrategyName.CONSTRAINED: "Physics-constrained loss",
}

MODEL_LABELS: dict[ModelKind, str] = {
    ModelKind.LINEAR: "Linear QR",
    ModelKind.MLP: "Quantile network",
    ModelKind.FOREST: "Quantile forest",
}

# Strategies that need the physics channel at training time
NEEDS_PHYSICS_TO_TRAIN = frozenset(StrategyName) - {StrategyName.DATA_DRIVEN}

# Strategies that need the physics channel at prediction time
NEEDS_PHYSICS_TO_PREDICT = frozenset({StrategyName.ASSISTANT, StrategyName.RESIDUAL})


def parse_strategy(name: str) -> StrategyName:
    """Strategy for a config name such as ``"residual"``."""
    try:
        return StrategyName(name)
    except ValueError:
        known = ", ".join(s.value for s in StrategyName)
        raise InputError(f"unknown strategy {name!r} (expected one of {known})") from None


def parse_model_kind(name: str) -> ModelKind:
    """Model kind for a config name such as ``"mlp"``."""
    try:
        return ModelKind(name)
    except ValueError:
        known = ", ".join(m.value for m in ModelKind)
        raise InputError(f"unknown model kind {name!r} (expected one of {known})") from None
