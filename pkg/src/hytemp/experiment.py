"""Experiment harness: runs, λ sweeps, conformal ablation, grid search and verification."""

from __future__ import annotations

import dataclasses
import logging
import zlib
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, TypeVar

import numpy as np

from hytemp.config import ExperimentConfig, load_config, save_config
from hytemp.conformal import conformalize, distribution_shift, ecdf_table, fit_calibrator
from hytemp.dataset import DatasetSplit, TimeSeriesDataset, room_feature, split_dataset, write_dataset_csv
from hytemp.errors import ConfigError, HytempError
from hytemp.files import ensure_writable_dir
from hytemp.forest import QuantileForest
from hytemp.hybrid import (
    HybridPipeline,
    HybridStrategy,
    load_pipeline,
    predict_rows,
    save_pipeline,
    sensitivity_sweep,
    train_hybrid,
)
from hytemp.metrics import EvaluationReport, evaluate, pbl
from hytemp.models import QuantileModel, TrainConfig
from hytemp.physics import PhysicsModel, RcParams, SimulationInputs, ZoneState, calibrate, simulate
from hytemp.quantiles import QuantileForecast
from hytemp.report import (
    PIPELINES_DIR,
    REPORT_FILE,
    ExperimentReport,
    ResultEntry,
    clear_outputs,
    emit_report,
    json_ready,
    load_report,
    write_tables,
    write_trace,
)
from hytemp.resample import ingest_csv
from hytemp.strategies import ModelKind, StrategyName
from hytemp.synthetic import default_true_params, generate_synthetic_dataset

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.toml"
DATASET_FILE = "dataset.csv"

# Settings tried by grid_search
MLP_LAYOUTS = ((64, 64), (128, 128), (64, 64, 64), (128, 128, 128))
FOREST_SIZES = (100, 250, 500, 1000)
VALIDATION_FRACTION = 0.2

# Errors that fail one combination without stopping the run
COMBINATION_ERRORS = (HytempError, ArithmeticError, ValueError)

T = TypeVar("T")


def sub_seed(seed: int, *parts: str) -> int:
    """Seed derived from the root seed and a name, independent of execution order."""
    key = ":".join([str(seed), *parts]).encode()
    return zlib.crc32(key)


def model_seed(config: ExperimentConfig, kind: ModelKind) -> TrainConfig:
    """Learner settings with the per-model sub-seed.

    All strategies of one model kind share it, so a constrained pipeline with
    λ = 0 repeats the data-driven one.
    """
    return config.train.with_seed(sub_seed(config.seed, kind.value))


@dataclass(frozen=True)
class ExperimentData:
    """Dataset, split and physics-channel diagnostics of a run."""

    dataset: TimeSeriesDataset
    split: DatasetSplit
    physics: dict[str, Any] | None = None


def make_split(config: ExperimentConfig, dataset: TimeSeriesDataset) -> DatasetSplit:
    train_rows = config.data.train_rows
    if train_rows is None and config.data.source == "synthetic":
        train_rows = config.scenario.test_start_row
    return split_dataset(dataset, config.conformal, train_rows, config.data.calibration_fraction)


def _physics_diagnostics(dataset: TimeSeriesDataset, split: DatasetSplit, params: RcParams | None, calibrated: bool) -> dict[str, Any] | None:
    if dataset.physics is None:
        return None
    test = split.test
    error = dataset.physics[test] - dataset.temperatures[test]
    rmse = np.sqrt(np.mean(error**2, axis=0))
    return {
        "calibrated": calibrated,
        "test_rmse": {room: float(v) for room, v in zip(dataset.room_ids, rmse)},
        "params": None if params is None else params.to_dict(),
    }


def prepare_data(config: ExperimentConfig) -> ExperimentData:
    """Generate or ingest the dataset, select rooms, split it and optionally re-calibrate the physics channel.

    Raises:
        ConfigError: If physics calibration is requested on permuted rows.
        InputError: For unusable data.
    """
    params: RcParams | None = None
    if config.data.source == "synthetic":
        generated = generate_synthetic_dataset(None, config.scenario, config.seed)
        dataset = generated.dataset
        params = generated.physics_params
    else:
        assert config.data.path is not None
        dataset = ingest_csv(config.data.path)
    if config.data.rooms:
        dataset = dataset.select_rooms(config.data.rooms)
        if params is not None:
            cols = [params.room_ids.index(r) for r in config.data.rooms]
            params = RcParams.from_matrix(config.data.rooms, params.as_matrix()[cols])
    split = make_split(config, dataset)
    logger.info(
        f"Dataset of {len(dataset)} rows: train {len(split.train)}, "
        f"calibration {len(split.calibration)}, test {len(split.test)}"
    )

    if config.data.calibrate_physics:
        if config.data.source == "synthetic" and config.scenario.iid:
            raise ConfigError("physics calibration needs time-ordered rows; disable scenario.iid")
        if params is None:
            params = default_true_params(dataset.room_ids)
        model = PhysicsModel(params, ZoneState(dataset.temperatures[0]), step_seconds=config.scenario.step_seconds)
        block = dataset.head(len(split.fit_rows))
        params = calibrate(model, block, budget=config.data.calibration_budget)
        physics = simulate(model.with_params(params), SimulationInputs.from_dataset(dataset, dataset.room_ids))
        dataset = dataset.with_physics(physics)
    return ExperimentData(dataset, split, _physics_diagnostics(dataset, split, params, config.data.calibrate_physics))


def _window_states(dataset: TimeSeriesDataset, rows: np.ndarray) -> np.ndarray | None:
    names = [room_feature(room, "window") for room in dataset.room_ids]
    if not all(name in dataset.schema.names for name in names):
        return None
    return np.column_stack([dataset.feature(name)[rows] for name in names])


def _training_summary(model: QuantileModel) -> dict[str, Any]:
    if isinstance(model, QuantileForest):
        return {"trees": model.n_trees}
    history = model.history
    return {"epochs": history.epochs, "best_epoch": history.best_epoch, "stopped_early": history.stopped_early}


def _evaluate_rows(
    config: ExperimentConfig, dataset: TimeSeriesDataset, rows: np.ndarray, forecast: QuantileForecast
) -> EvaluationReport:
    return evaluate(forecast, dataset.temperatures[rows], config.alphas, window=_window_states(dataset, rows))


def calibrate_pipeline(
    config: ExperimentConfig, pipeline: HybridPipeline, data: ExperimentData
) -> HybridPipeline:
    """Fit conformal corrections on the calibration rows."""
    dataset, split = data.dataset, data.split
    forecast = predict_rows(pipeline, dataset, split.calibration)
    calibrator = fit_calibrator(
        forecast,
        dataset.temperatures[split.calibration],
        config.alphas,
        pooled=config.pooled_conformal,
        full_grid=config.full_grid_conformal,
    )
    return pipeline.with_calibrator(calibrator)


def _pipeline_file(label: str) -> str:
    return f"{PIPELINES_DIR}/{label.replace('/', '_')}.npz"


def run_combination(
    config: ExperimentConfig,
    data: ExperimentData,
    strategy: HybridStrategy,
    kind: ModelKind,
    output_dir: Path | None,
) -> ResultEntry:
    """Train, optionally calibrate, and evaluate one (strategy, model) pair on the test rows."""
    dataset, split = data.dataset, data.split
    train = model_seed(config, kind)
    pipeline = train_hybrid(strategy, dataset, split, kind, train, config.grid, config.include_physics_feature)
    forecast = predict_rows(pipeline, dataset, split.test)
    entry = ResultEntry(
        strategy=strategy.name.value,
        model=kind.value,
        seed=train.seed,
        weight=strategy.weight,
        raw=_evaluate_rows(config, dataset, split.test, forecast).to_dict(),
        training=_training_summary(pipeline.model),
    )
    shown = forecast
    if config.conformal:
        pipeline = calibrate_pipeline(config, pipeline, data)
        assert pipeline.calibrator is not None
        shown = conformalize(forecast, pipeline.calibrator, pipeline.calibrator.alphas)
        entry.conformal = _evaluate_rows(config, dataset, split.test, shown).to_dict()
        entry.delta_q = pipeline.calibrator.to_dict()
    if output_dir is not None:
        entry.pipeline = _pipeline_file(entry.label)
        save_pipeline(pipeline, output_dir / entry.pipeline)
        if config.trace_days:
            n = min(len(split.test), config.trace_days * 96)
            rows = split.test[:n]
            write_trace(output_dir, entry.label, dataset.timestamps[rows], shown.rows(np.arange(n)), dataset.temperatures[rows])
    logger.info(f"Finished {entry.label}: mean PBL {entry.raw['pbl']['mean']:.4f}")
    return entry


def _map(workers: int, fn: Callable[[Any], T], items: Sequence[Any]) -> list[T]:
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _strategy_for(config: ExperimentConfig, name: StrategyName) -> HybridStrategy:
    return HybridStrategy.of(name, config.constrained_weight if name is StrategyName.CONSTRAINED else None)


def _shift_diagnostics(data: ExperimentData) -> tuple[dict[str, float] | None, dict[str, Any] | None]:
    split, dataset = data.split, data.dataset
    if not len(split.calibration):
        return None, None
    cal = dataset.temperatures[split.calibration]
    test = dataset.temperatures[split.test]
    shift = distribution_shift(cal, test, dataset.room_ids)
    ecdf = {}
    for k, room in enumerate(dataset.room_ids):
        table = ecdf_table(cal[:, k], test[:, k], room).drop(columns="room")
        ecdf[room] = {column: table[column].tolist() for column in table.columns}
    return shift, ecdf


def _prepare_output(config: ExperimentConfig, output_dir: Path | str | None) -> Path:
    return ensure_writable_dir(Path(output_dir) if output_dir is not None else config.output_path)


def _start_output(config: ExperimentConfig, output_dir: Path | str | None) -> Path:
    out = _prepare_output(config, output_dir)
    clear_outputs(out)
    return out


def _record_inputs(config: ExperimentConfig, data: ExperimentData, out: Path) -> None:
    save_config(config, out / CONFIG_FILE)
    write_dataset_csv(data.dataset, out / DATASET_FILE)


def run_experiment(config: ExperimentConfig, output_dir: Path | str | None = None) -> ExperimentReport:
    """Run every (strategy, model) combination and write the report.

    A failing combination is recorded in ``failures`` and the others continue.

    Raises:
        OutputError: If the output directory is not writable (checked first).
    """
    out = _start_output(config, output_dir)
    data = prepare_data(config)
    _record_inputs(config, data, out)
    combinations = [(name, kind) for name in config.strategy_names for kind in config.model_kinds]

    def one(combination: tuple[StrategyName, ModelKind]) -> ResultEntry | dict[str, str]:
        name, kind = combination
        strategy = _strategy_for(config, name)
        logger.info(f"Starting {strategy.label}/{kind.value}")
        try:
            return run_combination(config, data, strategy, kind, out)
        except COMBINATION_ERRORS as e:
            logger.error(f"{strategy.label}/{kind.value} failed: {e}")
            return {"strategy": name.value, "model": kind.value, "error": f"{type(e).__name__}: {e}"}

    outcomes = _map(config.effective_workers(), one, combinations)
    shift, ecdf = _shift_diagnostics(data)
    report = ExperimentReport(
        name=config.name,
        seed=config.seed,
        rooms=list(data.dataset.room_ids),
        alphas=list(config.alphas),
        results=[o for o in outcomes if isinstance(o, ResultEntry)],
        failures=[o for o in outcomes if isinstance(o, dict)],
        physics=data.physics,
        shift=shift,
        ecdf=ecdf,
    )
    emit_report(report, out)
    return report


def ablation_rows(report: ExperimentReport) -> list[dict[str, Any]]:
    """Per-room ACE and width with and without conformal correction."""
    rows = []
    for r in report.results:
        if r.conformal is None:
            continue
        for alpha in report.alphas:
            key = f"{alpha:g}"
            for room in report.rooms:
                raw_ace = r.raw["ace"][key][room]
                cqr_ace = r.conformal["ace"][key][room]
                rows.append(
                    {
                        "result": r.label,
                        "room": room,
                        "alpha": alpha,
                        "ace_raw": raw_ace,
                        "ace_conformal": cqr_ace,
                        "abs_ace_change": abs(cqr_ace) - abs(raw_ace),
                        "width_raw": r.raw["width"][key][room],
                        "width_conformal": r.conformal["width"][key][room],
                        "ks_distance": (report.shift or {}).get(room),
                    }
                )
    return rows


def conformal_ablation(config: ExperimentConfig, output_dir: Path | str | None = None) -> ExperimentReport:
    """Run with a calibration set and report every interval with and without conformal correction.

    Both variants come from the same trained pipeline, so they share seeds.

    Raises:
        ConfigError: If the configuration lists no α.
    """
    if not config.alphas:
        raise ConfigError("the conformal ablation needs at least one alpha")
    config = config.replace(conformal=True)
    report = run_experiment(config, output_dir)
    report.ablation = ablation_rows(report)
    emit_report(report, _prepare_output(config, output_dir))
    return report


def sweep(config: ExperimentConfig, output_dir: Path | str | None = None) -> ExperimentReport:
    """λ sensitivity of the constrained strategy for every configured model kind."""
    out = _start_output(config, output_dir)
    data = prepare_data(config)
    _record_inputs(config, data, out)
    rows: list[dict[str, Any]] = []
    failures = []
    for kind in config.model_kinds:
        logger.info(f"Sweeping λ over {list(config.lambdas)} for {kind.value}")
        try:
            table = sensitivity_sweep(
                config.lambdas,
                data.dataset,
                data.split,
                kind,
                model_seed(config, kind),
                config.grid,
                workers=config.effective_workers(),
            )
        except COMBINATION_ERRORS as e:
            logger.error(f"λ sweep for {kind.value} failed: {e}")
            failures.append({"strategy": StrategyName.CONSTRAINED.value, "model": kind.value, "error": f"{type(e).__name__}: {e}"})
            continue
        table.insert(0, "model", kind.value)
        rows.extend(table.to_dict(orient="records"))
    report = ExperimentReport(
        name=config.name,
        seed=config.seed,
        rooms=list(data.dataset.room_ids),
        alphas=list(config.alphas),
        failures=failures,
        physics=data.physics,
        sweep=rows,
    )
    emit_report(report, out)
    return report


def _validation_split(split: DatasetSplit) -> DatasetSplit:
    n_val = max(1, int(round(VALIDATION_FRACTION * len(split.train))))
    if n_val >= len(split.train):
        raise ConfigError("training block is too short for a validation split")
    train = split.train
    return DatasetSplit(train[:-n_val], np.array([], dtype=np.int64), train[-n_val:])


def grid_search(config: ExperimentConfig, output_dir: Path | str | None = None) -> ExperimentReport:
    """Validation PBL of the searched MLP layouts and forest sizes (data-driven strategy).

    The validation rows are the last 20% of the training rows; test rows are never touched.
    """
    out = _start_output(config, output_dir)
    data = prepare_data(config)
    dataset = data.dataset
    inner = _validation_split(data.split)
    y_val = dataset.temperatures[inner.test]
    candidates: list[tuple[ModelKind, str, TrainConfig]] = []
    for kind in config.model_kinds:
        base = model_seed(config, kind)
        if kind is ModelKind.MLP:
            candidates += [(kind, "x".join(map(str, layout)), dataclasses.replace(base, hidden_layers=layout)) for layout in MLP_LAYOUTS]
        elif kind is ModelKind.FOREST:
            candidates += [(kind, f"{n} trees", dataclasses.replace(base, n_trees=n)) for n in FOREST_SIZES]

    def one(candidate: tuple[ModelKind, str, TrainConfig]) -> dict[str, Any]:
        kind, setting, train = candidate
        pipeline = train_hybrid(HybridStrategy(StrategyName.DATA_DRIVEN), dataset, inner, kind, train, config.grid)
        scores = pbl(predict_rows(pipeline, dataset, inner.test), y_val).per_room
        logger.info(f"Grid search {kind.value} {setting}: validation PBL {scores.mean():.4f}")
        return {
            "model": kind.value,
            "setting": setting,
            **{room: float(v) for room, v in zip(dataset.room_ids, scores)},
            "mean": float(scores.mean()),
        }

    rows = _map(config.effective_workers(), one, candidates)
    report = ExperimentReport(
        name=config.name,
        seed=config.seed,
        rooms=list(dataset.room_ids),
        alphas=list(config.alphas),
        grid_search=rows,
    )
    emit_report(report, out)
    return report


def rebuild_tables(output_dir: Path | str) -> list[Path]:
    """Regenerate ``tables/`` from an existing ``report.json``."""
    out = Path(output_dir)
    return write_tables(load_report(out / REPORT_FILE), out)


def _compare(expected: Any, actual: Any, path: str, tolerance: float, mismatches: list[str]) -> None:
    if isinstance(expected, dict) and isinstance(actual, dict):
        for key in sorted(set(expected) | set(actual)):
            if key not in expected or key not in actual:
                mismatches.append(f"{path}.{key}: present on one side only")
                continue
            _compare(expected[key], actual[key], f"{path}.{key}", tolerance, mismatches)
    elif isinstance(expected, list) and isinstance(actual, list):
        if len(expected) != len(actual):
            mismatches.append(f"{path}: length {len(expected)} != {len(actual)}")
            return
        for i, (a, b) in enumerate(zip(expected, actual)):
            _compare(a, b, f"{path}[{i}]", tolerance, mismatches)
    elif isinstance(expected, (int, float)) and isinstance(actual, (int, float)) and not isinstance(expected, bool):
        if abs(expected - actual) > tolerance:
            mismatches.append(f"{path}: {expected!r} != {actual!r}")
    elif expected != actual:
        mismatches.append(f"{path}: {expected!r} != {actual!r}")


def verify(output_dir: Path | str, tolerance: float = 1e-9) -> list[str]:
    """Recompute every reported score from the saved pipelines and dataset.

    Returns:
        Mismatch descriptions; empty when the report is reproduced.
    """
    out = Path(output_dir)
    config = load_config(out / CONFIG_FILE)
    report = load_report(out / REPORT_FILE)
    dataset = ingest_csv(out / DATASET_FILE)
    data = ExperimentData(dataset, make_split(config, dataset))
    mismatches: list[str] = []
    for entry in report.results:
        if entry.pipeline is None:
            mismatches.append(f"{entry.label}: no pipeline recorded")
            continue
        pipeline = load_pipeline(out / entry.pipeline)
        forecast = predict_rows(pipeline, dataset, data.split.test)
        raw = _evaluate_rows(config, dataset, data.split.test, forecast).to_dict()
        _compare(entry.raw, json_ready(raw), f"{entry.label}.raw", tolerance, mismatches)
        if entry.conformal is None:
            continue
        refit = calibrate_pipeline(config, pipeline, data).calibrator
        assert refit is not None
        _compare(entry.delta_q, json_ready(refit.to_dict()), f"{entry.label}.delta_q", tolerance, mismatches)
        assert pipeline.calibrator is not None
        corrected = conformalize(forecast, pipeline.calibrator, pipeline.calibrator.alphas)
        conformal = _evaluate_rows(config, dataset, data.split.test, corrected).to_dict()
        _compare(entry.conformal, json_ready(conformal), f"{entry.label}.conformal", tolerance, mismatches)
    logger.info(f"Verified {len(report.results)} results: {len(mismatches)} mismatches")
    return mismatches
