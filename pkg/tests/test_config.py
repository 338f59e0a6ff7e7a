"""Tests for experiment configuration."""

import os
import tempfile
from pathlib import Path
from unittest.mock import patch

import pytest

from hytemp.config import (
    WORKERS_ENV,
    DataConfig,
    ExperimentConfig,
    get_default_config_path,
    load_config,
    save_config,
)
from hytemp.errors import ConfigError
from hytemp.models import TrainConfig
from hytemp.strategies import ModelKind, StrategyName
from hytemp.synthetic import ScenarioConfig


class TestExperimentConfig:
    """Tests for ExperimentConfig."""

    def test_default_values(self) -> None:
        """The default experiment runs every strategy and learner on 99 levels."""
        config = ExperimentConfig()
        assert len(config.grid) == 99
        assert config.strategy_names == list(StrategyName)
        assert config.model_kinds == [ModelKind.LINEAR, ModelKind.MLP, ModelKind.FOREST]
        assert config.constrained_weight == 0.1
        assert config.alphas == (0.1,)

    def test_default_output_path_follows_xdg(self) -> None:
        """Without output_dir the run goes under $XDG_DATA_HOME/hytemp/runs/<name>."""
        with patch.dict(os.environ, {"XDG_DATA_HOME": "/tmp/xdg"}):
            assert ExperimentConfig(name="trial").output_path == Path("/tmp/xdg/hytemp/runs/trial")
        assert ExperimentConfig(output_dir="out").output_path == Path("out")

    def test_to_dict_leaves_out_none(self) -> None:
        """Unset optional values do not appear in the TOML table."""
        data = ExperimentConfig().to_dict()
        assert "path" not in data["data"]
        assert "test_start_day" not in data["scenario"]
        assert data["strategies"][0] == "data_driven"

    def test_from_dict_with_missing_values(self) -> None:
        """Missing keys keep their defaults."""
        assert ExperimentConfig.from_dict({}) == ExperimentConfig()

    def test_from_dict_sections(self) -> None:
        """Section tables build their own dataclasses."""
        config = ExperimentConfig.from_dict(
            {
                "seed": 7,
                "alphas": [0.1, 0.5],
                "train": {"hidden_layers": [16, 8], "n_trees": 20},
                "scenario": {"days": 30, "room_ids": ["a"]},
            }
        )
        assert config.seed == 7
        assert config.train == TrainConfig(hidden_layers=(16, 8), n_trees=20)
        assert config.scenario == ScenarioConfig(days=30, room_ids=("a",))

    def test_integer_accepted_for_float(self) -> None:
        """An integer where a number is expected is widened to float."""
        config = ExperimentConfig.from_dict({"constrained_weight": 1, "lambdas": [0, 1]})
        assert config.constrained_weight == 1.0
        assert config.lambdas == (0.0, 1.0)

    @pytest.mark.parametrize(
        ("data", "message"),
        [
            ({"colour": "red"}, "unknown key colour"),
            ({"train": {"depth": 3}}, "unknown key train.depth"),
            ({"seed": "x"}, "seed must be an integer"),
            ({"seed": True}, "seed must be an integer"),
            ({"conformal": 1}, "conformal must be true or false"),
            ({"alphas": 0.1}, "alphas must be a list"),
            ({"strategies": ["hybrid"]}, "unknown strategy"),
            ({"models": ["forest", "forest"]}, "must not repeat"),
            ({"quantile_count": 9, "alphas": [0.05]}, "not on the grid"),
            ({"lambdas": [0.1, -1]}, "non-negative"),
            ({"train": {"batch_size": 0}}, r"\[train\]"),
            ({"data": {"source": "csv"}}, "data.path"),
            ({"data": 3}, "must be a table"),
            ({"data": {"train_rows": "abc"}}, "data.train_rows must be an integer"),
            ({"data": {"source": "csv", "path": 3}}, "data.path must be a string"),
            ({"scenario": {"test_start_day": 1.5}}, "scenario.test_start_day must be an integer"),
            ({"train": {"fine_tune_epochs": True}}, "train.fine_tune_epochs must be an integer"),
        ],
    )
    def test_invalid(self, data: dict, message: str) -> None:
        """Invalid tables raise ConfigError naming the problem."""
        with pytest.raises(ConfigError, match=message):
            ExperimentConfig.from_dict(data)

    def test_effective_workers(self) -> None:
        """HYTEMP_WORKERS overrides the configured worker count."""
        config = ExperimentConfig(workers=2)
        with patch.dict(os.environ, {}, clear=False):
            os.environ.pop(WORKERS_ENV, None)
            assert config.effective_workers() == 2
        with patch.dict(os.environ, {WORKERS_ENV: "5"}):
            assert config.effective_workers() == 5
        with patch.dict(os.environ, {WORKERS_ENV: "many"}):
            with pytest.raises(ConfigError, match=WORKERS_ENV):
                config.effective_workers()

    def test_data_config_fraction(self) -> None:
        """The calibration fraction must lie strictly between 0 and 1."""
        with pytest.raises(ConfigError):
            DataConfig(calibration_fraction=1.0)


class TestLoadSaveConfig:
    """Tests for load_config and save_config functions."""

    def test_missing_default_file_gives_defaults(self) -> None:
        """Without a file at the default location the default experiment is used."""
        with tempfile.TemporaryDirectory() as tmpdir:
            with patch.dict(os.environ, {"XDG_CONFIG_HOME": tmpdir}):
                assert get_default_config_path() == Path(tmpdir) / "hytemp" / "experiment.toml"
                assert load_config() == ExperimentConfig()

    def test_missing_explicit_file(self) -> None:
        """An explicitly named file must exist."""
        with pytest.raises(ConfigError, match="does not exist"):
            load_config(Path("/nonexistent/experiment.toml"))

    def test_save_and_load(self) -> None:
        """A saved experiment loads back unchanged."""
        original = ExperimentConfig(
            name="trial",
            seed=3,
            models=("forest",),
            alphas=(0.1, 0.2),
            data=DataConfig(rooms=("r272",), train_rows=500),
            train=TrainConfig(n_trees=10, fine_tune_epochs=4),
            scenario=ScenarioConfig(days=20, test_start_day=12),
        )
        with tempfile.TemporaryDirectory() as tmpdir:
            config_path = Path(tmpdir) / "nested" / "experiment.toml"
            save_config(original, config_path)
            assert load_config(config_path) == original

    def test_load_invalid_toml(self) -> None:
        """Unparseable TOML is a configuration error."""
        with tempfile.TemporaryDirectory() as tmpdir:
            config_path = Path(tmpdir) / "experiment.toml"
            config_path.write_text("not valid toml [[[")
            with pytest.raises(ConfigError, match="cannot read"):
                load_config(config_path)

    def test_save_leaves_no_temporary_files(self) -> None:
        """Saving goes through a temporary file that is renamed into place."""
        with tempfile.TemporaryDirectory() as tmpdir:
            config_path = Path(tmpdir) / "experiment.toml"
            save_config(ExperimentConfig(seed=1), config_path)
            save_config(ExperimentConfig(seed=2), config_path)
            assert [p.name for p in Path(tmpdir).iterdir()] == ["experiment.toml"]
            assert load_config(config_path).seed == 2
