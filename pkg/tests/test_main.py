"""Tests for main entry point."""

import os
import tempfile
from pathlib import Path
from unittest.mock import patch

import pytest

from hytemp.__about__ import __version__
from hytemp.config import ExperimentConfig, save_config
from hytemp.main import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_PARTIAL, main
from hytemp.report import ExperimentReport
from hytemp.synthetic import ScenarioConfig


class TestCLIFlags:
    """Tests for --help and --version CLI flags."""

    def test_version_flag(self, capsys: pytest.CaptureFixture[str]) -> None:
        """--version prints the version and exits with code 0."""
        with patch("sys.argv", ["hytemp", "--version"]):
            with pytest.raises(SystemExit) as exc_info:
                main()
        assert exc_info.value.code == 0
        captured = capsys.readouterr()
        assert __version__ in captured.out

    def test_help_flag(self, capsys: pytest.CaptureFixture[str]) -> None:
        """--help prints usage info and exits with code 0."""
        with patch("sys.argv", ["hytemp", "--help"]):
            with pytest.raises(SystemExit) as exc_info:
                main()
        assert exc_info.value.code == 0
        captured = capsys.readouterr()
        assert "quantile" in captured.out.lower()
        assert "ablate-conformal" in captured.out

    def test_unknown_verb(self) -> None:
        """An unknown verb is an argparse usage error."""
        with patch("sys.argv", ["hytemp", "train"]):
            with pytest.raises(SystemExit) as exc_info:
                main()
        assert exc_info.value.code == 2


class TestExitCodes:
    """Tests for the exit code of each outcome."""

    def test_verify_needs_out(self, capsys: pytest.CaptureFixture[str]) -> None:
        """verify and report refuse to guess the run directory."""
        with patch("sys.argv", ["hytemp", "verify"]):
            assert main() == EXIT_CONFIG
        assert "--out" in capsys.readouterr().err

    def test_invalid_config(self, capsys: pytest.CaptureFixture[str]) -> None:
        """An unreadable experiment file exits with 1."""
        with tempfile.TemporaryDirectory() as tmpdir:
            config_path = Path(tmpdir) / "experiment.toml"
            config_path.write_text("seed = 'x'\n")
            with patch("sys.argv", ["hytemp", "run", "--config", str(config_path)]):
                assert main() == EXIT_CONFIG
        assert "Configuration error" in capsys.readouterr().err

    def test_mistyped_optional_value(self, capsys: pytest.CaptureFixture[str]) -> None:
        """A wrongly typed optional setting is a configuration error, not a crash."""
        with tempfile.TemporaryDirectory() as tmpdir:
            config_path = Path(tmpdir) / "experiment.toml"
            config_path.write_text("[data]\ntrain_rows = \"abc\"\n")
            with patch("sys.argv", ["hytemp", "run", "--config", str(config_path)]):
                assert main() == EXIT_CONFIG
        assert "data.train_rows" in capsys.readouterr().err

    def test_report_without_run(self) -> None:
        """Rebuilding tables from a directory without report.json is an input error."""
        with tempfile.TemporaryDirectory() as tmpdir:
            with patch("sys.argv", ["hytemp", "report", "--out", tmpdir]):
                assert main() == EXIT_CONFIG

    def test_generate(self, capsys: pytest.CaptureFixture[str]) -> None:
        """generate writes the synthetic dataset into the output directory."""
        with tempfile.TemporaryDirectory() as tmpdir:
            config_path = Path(tmpdir) / "experiment.toml"
            save_config(ExperimentConfig(scenario=ScenarioConfig(days=2, room_ids=("a",))), config_path)
            out = Path(tmpdir) / "run"
            with patch("sys.argv", ["hytemp", "generate", "--config", str(config_path), "--out", str(out)]):
                assert main() == EXIT_OK
            assert (out / "dataset.csv").exists()
        assert "192 rows" in capsys.readouterr().out

    def test_unwritable_output(self) -> None:
        """An output path that cannot become a directory exits with 3."""
        with tempfile.TemporaryDirectory() as tmpdir:
            blocker = Path(tmpdir) / "file"
            blocker.write_text("")
            with patch.dict(os.environ, {"XDG_CONFIG_HOME": tmpdir}):
                with patch("sys.argv", ["hytemp", "generate", "--out", str(blocker / "run")]):
                    assert main() == EXIT_IO

    def test_overrides_reach_the_runner(self) -> None:
        """--seed and --out replace the configured values."""
        with tempfile.TemporaryDirectory() as tmpdir:
            with patch.dict(os.environ, {"XDG_CONFIG_HOME": tmpdir}):
                with patch("hytemp.experiment.run_experiment", return_value=ExperimentReport()) as run:
                    with patch("sys.argv", ["hytemp", "run", "--seed", "9", "--out", tmpdir]):
                        assert main() == EXIT_OK
        config, out = run.call_args.args
        assert config.seed == 9
        assert out == Path(tmpdir)

    def test_partial_failure(self, capsys: pytest.CaptureFixture[str]) -> None:
        """A run with failed combinations exits with 2 and names them."""
        report = ExperimentReport(failures=[{"strategy": "residual", "model": "mlp", "error": "NumericalError: x"}])
        with tempfile.TemporaryDirectory() as tmpdir:
            with patch.dict(os.environ, {"XDG_CONFIG_HOME": tmpdir}):
                with patch("hytemp.experiment.sweep", return_value=report):
                    with patch("sys.argv", ["hytemp", "sweep", "--out", tmpdir]):
                        assert main() == EXIT_PARTIAL
        assert "residual/mlp" in capsys.readouterr().err

    def test_interrupt(self) -> None:
        """Ctrl-C exits with 2."""
        with tempfile.TemporaryDirectory() as tmpdir:
            with patch.dict(os.environ, {"XDG_CONFIG_HOME": tmpdir}):
                with patch("hytemp.experiment.run_experiment", side_effect=KeyboardInterrupt):
                    with patch("sys.argv", ["hytemp", "run", "--out", tmpdir]):
                        assert main() == EXIT_PARTIAL
