"""Tests for hybrid strategies, pipelines and the λ sweep."""

import json
import tempfile
from pathlib import Path

import numpy as np
import pytest

from hytemp.conformal import fit_calibrator
from hytemp.dataset import split_dataset
from hytemp.errors import InputError, UsageError
from hytemp.hybrid import (
    HybridStrategy,
    fine_tune,
    load_pipeline,
    predict_hybrid,
    predict_raw,
    predict_rows,
    save_pipeline,
    sensitivity_sweep,
    train_hybrid,
)
from hytemp.models import TrainConfig
from hytemp.network import pinball_objective
from hytemp.quantiles import QuantileGrid
from hytemp.strategies import ModelKind, StrategyName
from tests.factories import toy_dataset

GRID = QuantileGrid((0.1, 0.5, 0.9))
CONFIG = TrainConfig(
    hidden_layers=(8,),
    max_epochs=5,
    linear_max_epochs=30,
    n_trees=5,
    fine_tune_epochs=3,
    fine_tune_trees=2,
)
DATA = toy_dataset(n=300)
SPLIT = split_dataset(300, conformal=True, train_rows=200)


def train(name: str, kind: ModelKind = ModelKind.LINEAR, weight: float | None = None, **kwargs: object):
    return train_hybrid(HybridStrategy.of(name, weight), DATA, SPLIT, kind, CONFIG, GRID, **kwargs)  # type: ignore[arg-type]


class TestHybridStrategy:
    """Tests for HybridStrategy."""

    def test_constrained_defaults_to_one_tenth(self) -> None:
        strategy = HybridStrategy.of("constrained")
        assert strategy.weight == 0.1
        assert strategy.label == "constrained[0.1]"

    def test_weight_rules(self) -> None:
        with pytest.raises(InputError, match="needs a regularization weight"):
            HybridStrategy(StrategyName.CONSTRAINED)
        with pytest.raises(InputError, match="non-negative"):
            HybridStrategy(StrategyName.CONSTRAINED, -1.0)
        with pytest.raises(InputError, match="takes no regularization weight"):
            HybridStrategy(StrategyName.RESIDUAL, 0.5)
        assert HybridStrategy.of("residual").label == "residual"


class TestTrainHybrid:
    """Tests for train_hybrid and prediction."""

    def test_residual_adds_physics_back(self) -> None:
        pipeline = train("residual")
        rows = SPLIT.test
        physics = DATA.physics[rows]
        raw = predict_raw(pipeline, DATA.features[rows], physics)
        forecast = predict_hybrid(pipeline, DATA.features[rows], physics)
        np.testing.assert_allclose(forecast.values, np.sort(raw + physics[:, :, None], axis=2))
        assert forecast.is_monotone()

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_zero_lambda_matches_data_driven(self, kind: ModelKind) -> None:
        plain = train("data_driven", kind)
        zero = train("constrained", kind, weight=0.0)
        a = predict_rows(plain, DATA, SPLIT.test)
        b = predict_rows(zero, DATA, SPLIT.test)
        np.testing.assert_array_equal(a.values, b.values)

    def test_huge_lambda_median_follows_physics(self) -> None:
        config = TrainConfig(hidden_layers=(16,), max_epochs=200, patience=200, learning_rate=0.01)
        rows = SPLIT.test
        medians = {}
        for weight in (0.0, 1e6):
            pipeline = train_hybrid(HybridStrategy.of("constrained", weight), DATA, SPLIT, ModelKind.MLP, config, GRID)
            medians[weight] = predict_rows(pipeline, DATA, rows).values[:, :, 1]
        physics = DATA.require_physics()[rows]
        measured = DATA.temperatures[rows]
        held = medians[1e6]
        assert np.mean(np.abs(held - physics)) < np.mean(np.abs(held - measured))
        assert np.mean(np.abs(held - physics)) < np.mean(np.abs(medians[0.0] - physics))

    def test_data_driven_never_reads_physics(self) -> None:
        poisoned = DATA.with_physics(np.full(DATA.temperatures.shape, np.nan))
        clean = train("data_driven")
        dirty = train_hybrid(HybridStrategy.of("data_driven"), poisoned, SPLIT, ModelKind.LINEAR, CONFIG, GRID)
        np.testing.assert_array_equal(
            predict_rows(clean, DATA, SPLIT.test).values, predict_rows(dirty, poisoned, SPLIT.test).values
        )

    def test_surrogate_never_reads_temperatures(self) -> None:
        poisoned = DATA.with_temperatures(np.full(DATA.temperatures.shape, np.nan))
        clean = train("surrogate")
        dirty = train_hybrid(HybridStrategy.of("surrogate"), poisoned, SPLIT, ModelKind.LINEAR, CONFIG, GRID)
        np.testing.assert_array_equal(
            predict_rows(clean, DATA, SPLIT.test).values, predict_rows(dirty, DATA, SPLIT.test).values
        )
        assert not clean.needs_physics

    def test_assistant_needs_physics_to_predict(self) -> None:
        pipeline = train("assistant")
        assert pipeline.needs_physics
        assert pipeline.input_width == len(DATA.schema) + len(DATA.room_ids)
        with pytest.raises(InputError, match="physics channel"):
            predict_hybrid(pipeline, DATA.features[:5])

    def test_assistant_without_physics_feature(self) -> None:
        pipeline = train("assistant", include_physics_feature=False)
        assert not pipeline.needs_physics
        assert pipeline.input_width == len(DATA.schema)
        assert predict_hybrid(pipeline, DATA.features[:5]).values.shape == (5, 2, 3)

    def test_missing_physics_channel(self) -> None:
        with pytest.raises(InputError, match="physics"):
            train_hybrid(HybridStrategy.of("residual"), DATA.with_physics(None), SPLIT, ModelKind.LINEAR, CONFIG, GRID)

    def test_feature_width_is_checked(self) -> None:
        pipeline = train("data_driven")
        with pytest.raises(InputError, match="exogenous features"):
            predict_hybrid(pipeline, np.ones((3, 1)))

    def test_forest_has_no_standardizer(self) -> None:
        assert train("data_driven", ModelKind.FOREST).standardizer is None
        assert train("data_driven", ModelKind.MLP).standardizer is not None


class TestFineTune:
    """Tests for surrogate fine-tuning."""

    def test_augmentation_grows_forest(self) -> None:
        pipeline = train("augmentation", ModelKind.FOREST)
        assert pipeline.strategy.name is StrategyName.AUGMENTATION
        assert pipeline.model.n_trees == CONFIG.n_trees + CONFIG.fine_tune_trees

    def test_augmentation_is_surrogate_plus_fine_tune(self) -> None:
        surrogate = train("surrogate")
        tuned = fine_tune(surrogate, DATA, SPLIT.train, CONFIG)
        augmented = train("augmentation")
        np.testing.assert_array_equal(
            predict_rows(tuned, DATA, SPLIT.test).values, predict_rows(augmented, DATA, SPLIT.test).values
        )

    def test_fine_tuning_never_worsens_the_tuning_rows(self) -> None:
        surrogate = train("surrogate")
        tuned = fine_tune(surrogate, DATA, SPLIT.train, CONFIG)
        rows = SPLIT.train
        y = DATA.temperatures[rows]
        levels = GRID.as_array()
        frozen_loss = pinball_objective(predict_raw(surrogate, DATA.features[rows]), [(y, 1.0)], levels)[0]
        tuned_loss = pinball_objective(predict_raw(tuned, DATA.features[rows]), [(y, 1.0)], levels)[0]
        assert tuned_loss <= frozen_loss + 1e-12

    def test_only_surrogates(self) -> None:
        with pytest.raises(UsageError, match="surrogate"):
            fine_tune(train("data_driven"), DATA, SPLIT.train, CONFIG)


class TestPipelineContainer:
    """Tests for save_pipeline and load_pipeline."""

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_reload_predicts_the_same(self, kind: ModelKind) -> None:
        pipeline = train("residual", kind)
        cal = predict_rows(pipeline, DATA, SPLIT.calibration)
        pipeline = pipeline.with_calibrator(fit_calibrator(cal, DATA.temperatures[SPLIT.calibration], [0.2]))
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "pipeline.npz"
            save_pipeline(pipeline, path)
            back = load_pipeline(path)
        assert back.strategy == pipeline.strategy
        assert back.calibrator == pipeline.calibrator
        np.testing.assert_array_equal(
            predict_rows(back, DATA, SPLIT.test).values, predict_rows(pipeline, DATA, SPLIT.test).values
        )

    def test_constrained_weight_survives(self) -> None:
        pipeline = train("constrained", weight=0.5)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "pipeline.npz"
            save_pipeline(pipeline, path)
            assert load_pipeline(path).strategy.label == "constrained[0.5]"

    def test_unknown_schema_version(self) -> None:
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "pipeline.npz"
            np.savez(path, meta=np.array(json.dumps({"schema_version": 99})))
            with pytest.raises(InputError, match="schema version"):
                load_pipeline(path)


class TestSensitivitySweep:
    """Tests for sensitivity_sweep."""

    def test_table_shape(self) -> None:
        table = sensitivity_sweep([0.0, 1.0], DATA, SPLIT, ModelKind.LINEAR, CONFIG, GRID, workers=2)
        assert list(table.columns) == ["lambda", "a", "b", "mean"]
        assert table["lambda"].tolist() == [0.0, 1.0]
        assert (table["mean"] > 0).all()

    def test_zero_row_matches_data_driven(self) -> None:
        table = sensitivity_sweep([0.0], DATA, SPLIT, ModelKind.LINEAR, CONFIG, GRID)
        from hytemp.metrics import pbl

        plain = predict_rows(train("data_driven"), DATA, SPLIT.test)
        assert table.loc[0, "mean"] == pytest.approx(pbl(plain, DATA.temperatures[SPLIT.test]).per_room.mean())

    @pytest.mark.parametrize("lambdas", [[], [0.1, -1.0]])
    def test_invalid_lambdas(self, lambdas: list[float]) -> None:
        with pytest.raises(InputError):
            sensitivity_sweep(lambdas, DATA, SPLIT, ModelKind.LINEAR, CONFIG, GRID)
