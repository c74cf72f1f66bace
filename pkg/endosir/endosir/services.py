"""
Services module for endosir.

This module connects validated run configurations to the numerical apps:
it reads user CSV files, runs the estimators, and writes result files.
Management commands call the ``run_*`` functions and only format their
returned summaries for the console.

Key functionality:
- Ingestion: Read response, covariate and instrument CSVs with pandas,
  rejecting missing or non-numeric cells and dropping constant columns.
- Emission: Write CSV (17 significant digits for per-record files, three
  decimals for summaries) and JSON reports, each file written once.
- Commands: Simulation campaigns, single fits, dimension votes and
  stability paths.

Functions:
- read_matrix(path, name): Numeric CSV as a DataFrame.
- read_response(path): Single-column CSV as a vector.
- drop_constant_columns(frame, name): Remove zero-variance columns with a warning.
- load_inputs(config): Row-aligned y, X and Z for the data commands.
- write_csv(frame, path, float_format): Write a CSV file.
- write_json(data, path): Write a JSON file.
- run_simulate(config): Monte Carlo experiment to summary.csv and replicates.csv.
- run_fit(config): One estimate to estimate.json, coefficients.csv and gamma.csv.
- run_select_dim(config): Dimension vote to dimension.json.
- run_stability(config): Selection paths to stability.csv and selected.json.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from numkit.rng import SeededRng
from simlab.experiment import SUMMARY_FIELDS, fit_estimator, run_experiment
from twostage.dimension import select_dimension
from twostage.first_stage import stage_one
from twostage.stability import stability_selection
from .config import RunConfig, output_dir
from .exceptions import IoError, SchemaMismatch

logger = logging.getLogger(__name__)

RECORD_FORMAT = "%.17g"
SUMMARY_FORMAT = "%.3f"
REPLICATE_FIELDS = ("estimator", "replicate", "seed", "projection_error", "auc", "status", "error")


@dataclass(frozen=True)
class InputData:
    y: np.ndarray
    x: np.ndarray
    z: Optional[np.ndarray]
    x_names: List[str]
    z_names: List[str]
    dropped: List[str]


def _read_csv(path, name: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, encoding="utf-8", dtype=str, keep_default_na=False)
    except FileNotFoundError as exc:
        raise IoError(f"{name} file not found", path=str(path)) from exc
    except OSError as exc:
        raise IoError(f"cannot read {name} file: {exc}", path=str(path)) from exc
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise SchemaMismatch(f"{name} file is not a valid CSV: {exc}", path=str(path)) from exc
    if frame.shape[1] == 0 or frame.shape[0] == 0:
        raise SchemaMismatch(f"{name} file has no data rows", path=str(path))
    return frame


def read_matrix(path, name: str = "covariate") -> pd.DataFrame:
    """
    Read a numeric CSV with a header row.

    Row numbers in errors count data rows from 1, the header excluded.

    Raises:
        IoError: If the file cannot be read.
        SchemaMismatch: For missing or non-numeric cells (with row and
            column) and duplicated headers.
    """
    frame = _read_csv(path, name)
    if frame.columns.duplicated().any():
        duplicate = str(frame.columns[frame.columns.duplicated()][0])
        raise SchemaMismatch(f"{name} file repeats a column name", column=duplicate, path=str(path))
    values = {}
    for column in frame.columns:
        text = frame[column].str.strip()
        missing = text == ""
        if missing.any():
            row = int(np.flatnonzero(missing.to_numpy())[0]) + 1
            raise SchemaMismatch(f"missing value in {name} file", row=row, column=str(column), path=str(path))
        numbers = pd.to_numeric(text, errors="coerce")
        bad = ~np.isfinite(numbers.to_numpy(dtype=np.float64))
        if bad.any():
            row = int(np.flatnonzero(bad)[0]) + 1
            raise SchemaMismatch(f"non-numeric value in {name} file", row=row, column=str(column), path=str(path))
        values[str(column)] = numbers.astype(np.float64)
    return pd.DataFrame(values)


def read_response(path) -> np.ndarray:
    frame = read_matrix(path, "response")
    if frame.shape[1] != 1:
        raise SchemaMismatch("response file must have exactly one column", column=str(frame.columns[1]),
                             path=str(path))
    return frame.iloc[:, 0].to_numpy()


def drop_constant_columns(frame: pd.DataFrame, name: str):
    """Drop columns with zero variance after centering, logging a warning for each."""
    constant = [str(column) for column in frame.columns if frame[column].nunique() <= 1]
    for column in constant:
        logger.warning("dropping constant %s column %r", name, column)
    return frame.drop(columns=constant), constant


def load_inputs(config: RunConfig, need_z: bool) -> InputData:
    """
    Read y, X and (if ``need_z``) Z and check that their rows line up.

    Raises:
        SchemaMismatch: If the row counts differ (``row`` is the first row
            missing from the shorter file) or a file has no usable column.
    """
    y = read_response(config.y)
    x_frame, dropped = drop_constant_columns(read_matrix(config.x, "covariate"), "covariate")
    z_frame = None
    if need_z and config.z is not None:
        z_frame, dropped_z = drop_constant_columns(read_matrix(config.z, "instrument"), "instrument")
        dropped += dropped_z
    for label, frame in (("covariate", x_frame), ("instrument", z_frame)):
        if frame is None:
            continue
        if frame.shape[1] == 0:
            raise SchemaMismatch(f"every {label} column is constant")
        if frame.shape[0] != y.shape[0]:
            raise SchemaMismatch(f"{label} file has {frame.shape[0]} rows but the response has {y.shape[0]}",
                                 row=min(frame.shape[0], y.shape[0]) + 1)
    return InputData(
        y=y,
        x=x_frame.to_numpy(),
        z=None if z_frame is None else z_frame.to_numpy(),
        x_names=[str(c) for c in x_frame.columns],
        z_names=[] if z_frame is None else [str(c) for c in z_frame.columns],
        dropped=dropped,
    )


def write_csv(frame: pd.DataFrame, path: Path, float_format: str = RECORD_FORMAT) -> Path:
    try:
        frame.to_csv(path, index=False, float_format=float_format, na_rep="nan", lineterminator="\n",
                     encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path.name}: {exc}", path=str(path)) from exc
    logger.info("wrote %s", path)
    return path


def _plain(value: Any) -> Any:
    """JSON-friendly copy: numpy scalars to Python, NaN to null."""
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(item) for item in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(data: Dict[str, Any], path: Path) -> Path:
    try:
        path.write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path.name}: {exc}", path=str(path)) from exc
    logger.info("wrote %s", path)
    return path


def run_simulate(config: RunConfig) -> Dict[str, Any]:
    """
    Run a Monte Carlo experiment and write its tables.

    Returns:
        dict: Result summary with keys 'summaries' (list of row dicts),
        'replicates', 'failures', 'errors' and 'files'.
    """
    design = config.simulation_design()
    result = run_experiment(design, config.estimators, config.replicates, SeededRng(config.seed),
                            options=config.estimator_options(), n_jobs=config.threads)
    out = output_dir(config)
    summary = pd.DataFrame([row.as_row() for row in result.summaries], columns=list(SUMMARY_FIELDS))
    records = pd.DataFrame([
        {
            "estimator": report.estimator,
            "replicate": report.replicate,
            "seed": str(report.seed),
            "projection_error": report.projection_error,
            "auc": report.auc,
            "status": "ok" if report.ok else "failed",
            "error": report.error or "",
        }
        for report in sorted(result.reports, key=lambda item: (item.estimator, item.replicate))
    ], columns=list(REPLICATE_FIELDS))
    files = [write_csv(summary, out / "summary.csv", SUMMARY_FORMAT),
             write_csv(records, out / "replicates.csv", RECORD_FORMAT)]
    return {
        "summaries": [row.as_row() for row in result.summaries],
        "replicates": config.replicates,
        "failures": len(result.errors),
        "errors": list(result.errors),
        "files": [str(path) for path in files],
    }


def run_fit(config: RunConfig) -> Dict[str, Any]:
    """
    Fit one estimator on user data.

    Writes ``estimate.json`` (support, adjusted eigenvalues, penalties),
    ``coefficients.csv`` (B̂ rows keyed by variable) and, for two-stage
    estimators, ``gamma.csv`` (Γ̂ rows keyed by instrument).

    Returns:
        dict: The estimate report plus 'files'.
    """
    two_stage = config.estimator in ("2slasso", "2slsir")
    data = load_inputs(config, need_z=two_stage)
    rng = SeededRng(config.seed)
    estimate = fit_estimator(config.estimator, data.y, data.x, data.z, config.directions,
                             config.estimator_options(), rng, n_jobs=config.threads)
    out = output_dir(config)
    report: Dict[str, Any] = {
        "estimator": config.estimator,
        "stage": estimate.stage,
        "d": estimate.d,
        "n": int(data.y.shape[0]),
        "seed": config.seed,
        "variables": data.x_names,
        "support": [data.x_names[j] for j in estimate.support],
        "eigenvalues": estimate.eigenvalues.tolist(),
        "adjusted_eigenvalues": estimate.adjusted_eigenvalues.tolist(),
        "penalties": estimate.penalties.tolist(),
        "tuning": config.tuning,
        "dropped_columns": data.dropped,
    }
    coefficients = pd.DataFrame(estimate.b_hat, columns=[f"beta_{k + 1}" for k in range(estimate.d)])
    coefficients.insert(0, "variable", data.x_names)
    files = [write_csv(coefficients, out / "coefficients.csv")]
    if estimate.first_stage is not None:
        first = estimate.first_stage
        report["first_stage"] = {
            "tuning": config.first_stage_tuning,
            "penalties": dict(zip(data.x_names, first.penalties.tolist())),
            "support_sizes": dict(zip(data.x_names, first.support_sizes.tolist())),
            "converged": bool(np.all(first.converged)),
        }
        gamma = pd.DataFrame(first.gamma_hat, columns=data.x_names)
        gamma.insert(0, "instrument", data.z_names)
        files.append(write_csv(gamma, out / "gamma.csv"))
    files.append(write_json(report, out / "estimate.json"))
    report["files"] = [str(path) for path in files]
    return report


def run_select_dim(config: RunConfig) -> Dict[str, Any]:
    """
    Vote on the structural dimension with Z, X or X̂ as regressors.

    Returns:
        dict: Votes, final d̂, average, proportions, degenerate count and 'files'.
    """
    data = load_inputs(config, need_z=config.regressor != "X")
    rng = SeededRng(config.seed)
    if config.regressor == "Z":
        regressors = data.z
    elif config.regressor == "X":
        regressors = data.x
    else:
        regressors = stage_one(data.x, data.z, config.first_stage(), rng=rng.child(0), n_jobs=config.threads).fitted
    vote = select_dimension(data.y, regressors, config.slices, config.repeats, config.dim_folds, rng.child(1),
                            regressor_choice=config.regressor, n_jobs=config.threads)
    report: Dict[str, Any] = {
        "regressor": vote.regressor_choice,
        "d_hat": vote.d_hat,
        "votes": list(vote.votes),
        "average": vote.average,
        "proportions": vote.proportions(),
        "degenerate_repeats": int(sum(vote.degenerate)),
        "repeats": vote.repeats,
        "seed": config.seed,
    }
    report["files"] = [str(write_json(report, output_dir(config) / "dimension.json"))]
    return report


def run_stability(config: RunConfig) -> Dict[str, Any]:
    """
    Selection probabilities along the stage-two penalty grid.

    ``stability.csv`` has one row per variable and grid point (variable,
    grid_index, penalty, probability); ``selected.json`` lists the
    variables passing the threshold and the error-bound rule.

    Returns:
        dict: Selected variables, failures, errors and 'files'.
    """
    data = load_inputs(config, need_z=config.estimator != "one-stage")
    path = stability_selection(data.y, data.x, data.z, config.estimator, config.subsamples, config.cutoff,
                               SeededRng(config.seed), threshold=config.threshold, error_bound=config.error_bound,
                               H=config.slices, d=config.directions, first_stage=config.first_stage(),
                               n_jobs=config.threads)
    p, points = path.selection_probability.shape
    frame = pd.DataFrame({
        "variable": np.repeat(data.x_names, points),
        "grid_index": np.tile(np.arange(points), p),
        "penalty": np.tile(path.grid, p),
        "probability": path.selection_probability.ravel(),
    })
    out = output_dir(config)
    report: Dict[str, Any] = {
        "estimator": path.estimator,
        "subsamples": path.subsamples,
        "failures": path.failures,
        "errors": list(path.errors),
        "threshold": path.threshold,
        "cutoff": path.cutoff,
        "error_bound": path.error_bound,
        "selected": [data.x_names[j] for j in path.selected],
        "mb_selected": [data.x_names[j] for j in path.mb_selected],
        "admissible_grid_indices": np.flatnonzero(path.admissible).tolist(),
        "max_probability": dict(zip(data.x_names, path.max_probability.tolist())),
        "dropped_columns": data.dropped,
        "seed": config.seed,
    }
    files = [write_csv(frame, out / "stability.csv"), write_json(report, out / "selected.json")]
    report["files"] = [str(item) for item in files]
    return report
