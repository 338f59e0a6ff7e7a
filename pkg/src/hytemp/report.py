"""Experiment reports: ``report.json``, flat tables and forecast traces."""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from hytemp.errors import InputError
from hytemp.files import atomic_output
from hytemp.quantiles import QuantileForecast

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
REPORT_FILE = "report.json"
TABLES_DIR = "tables"
TRACES_DIR = "traces"
PIPELINES_DIR = "pipelines"
CONFORMAL_SUFFIX = "+cqr"

# Levels written to the trace files
TRACE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


def json_ready(value: Any) -> Any:
    """Recursively replace non-finite floats with ``None`` and tuples with lists."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, Mapping):
        return {str(k): json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_ready(v) for v in value]
    if isinstance(value, np.ndarray):
        return json_ready(value.tolist())
    if isinstance(value, np.generic):
        return json_ready(value.item())
    return value


def confidence_label(alpha: float) -> str:
    """Nominal confidence of a miscoverage level, e.g. 0.1 -> ``"0.90"``."""
    return f"{1.0 - alpha:.2f}"


@dataclass
class ResultEntry:
    """Scores of one (strategy, model) combination.

    Attributes:
        strategy: Strategy name.
        model: Learner kind.
        seed: Sub-seed the combination trained with.
        weight: λ of the constrained strategy.
        raw: Test-set evaluation of the uncorrected forecast.
        conformal: Test-set evaluation after conformal correction.
        delta_q: Conformal corrections as serialized by the calibrator.
        training: Epoch counts or tree counts of the fitted learner.
        pipeline: Pipeline file, relative to the output directory.
    """

    strategy: str
    model: str
    seed: int
    weight: float | None = None
    raw: dict[str, Any] = field(default_factory=dict)
    conformal: dict[str, Any] | None = None
    delta_q: dict[str, Any] | None = None
    training: dict[str, Any] = field(default_factory=dict)
    pipeline: str | None = None

    @property
    def label(self) -> str:
        strategy = self.strategy if self.weight is None else f"{self.strategy}[{self.weight:g}]"
        return f"{strategy}/{self.model}"

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary.

        Returns:
            Dictionary representation.
        """
        d: dict[str, Any] = {
            "strategy": self.strategy,
            "model": self.model,
            "seed": self.seed,
            "raw": self.raw,
            "training": self.training,
        }
        if self.weight is not None:
            d["lambda"] = self.weight
        if self.conformal is not None:
            d["conformal"] = self.conformal
        if self.delta_q is not None:
            d["delta_q"] = self.delta_q
        if self.pipeline is not None:
            d["pipeline"] = self.pipeline
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ResultEntry:
        """Create from dictionary.

        Raises:
            KeyError: If required keys are missing.
        """
        return cls(
            strategy=str(data["strategy"]),
            model=str(data["model"]),
            seed=int(data["seed"]),
            weight=None if data.get("lambda") is None else float(data["lambda"]),
            raw=dict(data["raw"]),
            conformal=data.get("conformal"),
            delta_q=data.get("delta_q"),
            training=dict(data.get("training", {})),
            pipeline=data.get("pipeline"),
        )


@dataclass
class ExperimentReport:
    """Everything a run, sweep or ablation produced.

    Attributes:
        name: Run name.
        seed: Root seed.
        rooms: Room identifiers.
        alphas: Miscoverage levels evaluated.
        results: One entry per successful combination.
        failures: ``{strategy, model, error}`` per failed combination.
        physics: Physics-channel diagnostics (RMSE against measurements, parameters).
        shift: Calibration-vs-test Kolmogorov-Smirnov distance per room.
        ecdf: Per-room ECDF tables behind ``shift``.
        sweep: Rows of the λ sensitivity table.
        ablation: Per-room ACE with and without conformal correction.
        grid_search: Validation scores of the searched settings.
    """

    name: str = "default"
    seed: int = 0
    rooms: list[str] = field(default_factory=list)
    alphas: list[float] = field(default_factory=list)
    results: list[ResultEntry] = field(default_factory=list)
    failures: list[dict[str, str]] = field(default_factory=list)
    physics: dict[str, Any] | None = None
    shift: dict[str, float] | None = None
    ecdf: dict[str, dict[str, list[float]]] | None = None
    sweep: list[dict[str, Any]] | None = None
    ablation: list[dict[str, Any]] | None = None
    grid_search: list[dict[str, Any]] | None = None

    def result(self, strategy: str, model: str, weight: float | None = None) -> ResultEntry:
        """Entry of one combination.

        Raises:
            KeyError: If the combination is not in the report.
        """
        for r in self.results:
            if r.strategy == strategy and r.model == model and (weight is None or r.weight == weight):
                return r
        raise KeyError(f"{strategy}/{model}")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "rooms": list(self.rooms),
            "alphas": list(self.alphas),
            "results": [r.to_dict() for r in self.results],
            "failures": list(self.failures),
        }
        for name in ("physics", "shift", "ecdf", "sweep", "ablation", "grid_search"):
            value = getattr(self, name)
            if value is not None:
                d[name] = value
        return json_ready(d)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExperimentReport:
        """Create from dictionary.

        Raises:
            InputError: For an unsupported schema version or malformed entries.
        """
        if data.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise InputError(f"unsupported report schema version {data.get('schema_version')}")
        try:
            results = [ResultEntry.from_dict(r) for r in data.get("results", [])]
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed result entry: {e}") from e
        return cls(
            name=str(data.get("name", "default")),
            seed=int(data.get("seed", 0)),
            rooms=list(data.get("rooms", [])),
            alphas=[float(a) for a in data.get("alphas", [])],
            results=results,
            failures=list(data.get("failures", [])),
            physics=data.get("physics"),
            shift=data.get("shift"),
            ecdf=data.get("ecdf"),
            sweep=data.get("sweep"),
            ablation=data.get("ablation"),
            grid_search=data.get("grid_search"),
        )


def load_report(report_path: Path | str) -> ExperimentReport:
    """Load a report from file.

    Raises:
        InputError: If the file is not a readable report.
    """
    path = Path(report_path)
    try:
        with open(path) as f:
            data = json.load(f)
    except (json.JSONDecodeError, OSError) as e:
        raise InputError(f"cannot read report {path}: {e}") from e
    return ExperimentReport.from_dict(data)


def save_report(report: ExperimentReport, report_path: Path | str) -> None:
    """Write ``report.json`` atomically (sorted keys, two-space indent)."""
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"
    with atomic_output(report_path) as tmp:
        tmp.write_text(text, encoding="utf-8")
    logger.info(f"Wrote {report_path}")


def _write_csv(frame: pd.DataFrame, path: Path, index: bool = True) -> None:
    with atomic_output(path) as tmp:
        frame.to_csv(tmp, index=index, encoding="utf-8")


def _per_room_frame(rooms: Sequence[str], columns: dict[str, dict[str, Any]]) -> pd.DataFrame:
    """Rooms plus a ``mean`` row, one column per result label."""
    index = [*rooms, "mean"]
    frame = pd.DataFrame({label: [values.get(r) for r in index] for label, values in columns.items()}, index=index)
    frame.index.name = "room"
    return frame


def report_tables(report: ExperimentReport) -> dict[str, pd.DataFrame]:
    """Flat tables keyed by file name (without directory)."""
    tables: dict[str, pd.DataFrame] = {}
    rooms = report.rooms
    results = report.results
    if results:
        columns: dict[str, dict[str, Any]] = {}
        for r in results:
            columns[r.label] = r.raw["pbl"]
            if r.conformal is not None:
                columns[r.label + CONFORMAL_SUFFIX] = r.conformal["pbl"]
        tables["pbl.csv"] = _per_room_frame(rooms, columns)
        for alpha in report.alphas:
            key = f"{alpha:g}"
            for metric in ("ace", "wks", "width"):
                columns = {}
                for r in results:
                    if key in r.raw.get(metric, {}):
                        columns[r.label] = r.raw[metric][key]
                    if r.conformal is not None and key in r.conformal.get(metric, {}):
                        columns[r.label + CONFORMAL_SUFFIX] = r.conformal[metric][key]
                if columns:
                    tables[f"{metric}_{confidence_label(alpha)}.csv"] = _per_room_frame(rooms, columns)
        window = {r.label: r.raw["window_open_pbl"] for r in results if "window_open_pbl" in r.raw}
        if window:
            tables["window_open_pbl.csv"] = _per_room_frame(rooms, window)

        by_level = []
        reliability = []
        for r in results:
            for variant, evaluation in (("raw", r.raw), ("conformal", r.conformal)):
                if evaluation is None:
                    continue
                for room in rooms:
                    by_level.append(
                        pd.DataFrame(
                            {
                                "result": r.label,
                                "variant": variant,
                                "room": room,
                                "level": evaluation["levels"],
                                "pbl": evaluation["pbl_by_level"][room],
                            }
                        )
                    )
                    if "reliability" in evaluation:
                        reliability.append(
                            pd.DataFrame(
                                {
                                    "result": r.label,
                                    "variant": variant,
                                    "room": room,
                                    "confidence": evaluation["reliability"]["confidences"],
                                    "coverage": evaluation["reliability"]["coverage"][room],
                                }
                            )
                        )
        tables["pbl_by_level.csv"] = pd.concat(by_level, ignore_index=True)
        if reliability:
            tables["reliability.csv"] = pd.concat(reliability, ignore_index=True)

        delta_rows = [
            {"result": r.label, "room": e["room"], "alpha": e["alpha"], "delta_q": e["delta_q"], "n": e["n"]}
            for r in results
            if r.delta_q is not None
            for e in r.delta_q["entries"]
        ]
        if delta_rows:
            tables["delta_q.csv"] = pd.DataFrame(delta_rows)

    if report.sweep:
        tables["sweep.csv"] = pd.DataFrame(report.sweep)
    if report.ablation:
        tables["ablation.csv"] = pd.DataFrame(report.ablation)
    if report.grid_search:
        tables["grid_search.csv"] = pd.DataFrame(report.grid_search)
    if report.shift:
        tables["shift.csv"] = pd.DataFrame({"room": list(report.shift), "ks_distance": list(report.shift.values())})
    for room, ecdf in (report.ecdf or {}).items():
        tables[f"ecdf_{room}.csv"] = pd.DataFrame(ecdf)
    return tables


_INDEXED_TABLES = {"pbl.csv", "window_open_pbl.csv"}
_INDEXED_PREFIXES = ("ace_", "wks_", "width_")


def write_tables(report: ExperimentReport, output_dir: Path | str) -> list[Path]:
    """Write every table of ``report_tables`` under ``<output_dir>/tables``.

    CSV files left there by an earlier report that this one does not produce are removed.
    """
    directory = Path(output_dir) / TABLES_DIR
    tables = report_tables(report)
    if directory.is_dir():
        for stale in sorted(directory.glob("*.csv")):
            if stale.name not in tables:
                stale.unlink()
                logger.debug(f"Removed stale table {stale}")
    written = []
    for name, frame in tables.items():
        path = directory / name
        _write_csv(frame, path, index=name in _INDEXED_TABLES or name.startswith(_INDEXED_PREFIXES))
        written.append(path)
    if written:
        logger.info(f"Wrote {len(written)} tables to {directory}")
    return written


def clear_outputs(output_dir: Path | str) -> list[Path]:
    """Delete the tables, traces and pipelines of a previous run in ``output_dir``."""
    directory = Path(output_dir)
    removed = []
    for sub, pattern in ((TABLES_DIR, "*.csv"), (TRACES_DIR, "*.csv"), (PIPELINES_DIR, "*.npz")):
        for path in sorted((directory / sub).glob(pattern)):
            path.unlink()
            removed.append(path)
    if removed:
        logger.info(f"Removed {len(removed)} files of a previous run in {directory}")
    return removed


def emit_report(report: ExperimentReport, output_dir: Path | str) -> Path:
    """Write ``report.json`` and its tables into ``output_dir``."""
    directory = Path(output_dir)
    path = directory / REPORT_FILE
    save_report(report, path)
    write_tables(report, directory)
    return path


def write_trace(
    output_dir: Path | str,
    label: str,
    timestamps: pd.DatetimeIndex,
    forecast: QuantileForecast,
    y: np.ndarray,
    levels: Sequence[float] = TRACE_LEVELS,
) -> Path | None:
    """Write measured temperatures and selected forecast quantiles of every room.

    Levels not on the forecast grid are skipped; nothing is written when none remain.
    """
    present = []
    for q in levels:
        try:
            present.append((q, forecast.grid.index_of(q)))
        except InputError:
            continue
    if not present or forecast.n_rows == 0:
        return None
    frames = []
    for k, room in enumerate(forecast.room_ids):
        frame = pd.DataFrame({"timestamp": timestamps.strftime("%Y-%m-%dT%H:%M:%S"), "room": room, "measured": y[:, k]})
        for q, i in present:
            frame[f"q{q:g}"] = forecast.values[:, k, i]
        frames.append(frame)
    path = Path(output_dir) / TRACES_DIR / f"{label.replace('/', '_')}.csv"
    _write_csv(pd.concat(frames, ignore_index=True), path, index=False)
    return path
