"""
Stability selection over the stage-two penalty grid.

Every subsample of ⌊n/2⌋ observations reruns the whole estimator (stage
one included for the two-stage variants) along a penalty grid fixed from
the full data. The selection probability of variable j at grid point g is
the share of successful subsamples in which j is active at g.

Two decision rules are reported:
- ``selected``: maximum probability over the admissible grid ≥ threshold.
- ``mb_selected``: the same maximum ≥ cutoff.
A grid point is admissible when its average model size q̂ does not exceed
√(2·cutoff·p·EV); with the defaults (cutoff 0.75, EV 1) that is √(1.5p).
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from endosir.exceptions import BATCH_ERRORS, ConfigInvalid, StabilityFailed, TooFewObservations
from lasso.solver import GRID_POINTS, GRID_RATIO, GramSystem, path_system, penalty_grid
from lasso.tuning import TuningStrategy
from numkit.linalg import as_matrix
from numkit.rng import SeededRng
from sir.estimators import DEFAULT_SLICES, center_inputs
from sir.kernel import kernel, pseudo_responses
from sir.slicing import make_slices
from .first_stage import stage_one

logger = logging.getLogger(__name__)

ESTIMATORS = ("one-stage", "two-stage", "two-stage-linear")
MIN_OBSERVATIONS = 20


def size_cap(p: int, cutoff: float = 0.75, error_bound: float = 1.0) -> float:
    """Largest average model size q̂ allowed at an admissible grid point."""
    return float(np.sqrt(2.0 * cutoff * p * error_bound))


@dataclass(frozen=True)
class StabilityPath:
    estimator: str
    grid: np.ndarray
    selection_probability: np.ndarray
    subsamples: int
    failures: int
    errors: Tuple[str, ...]
    cutoff: float
    threshold: float
    error_bound: float
    average_size: np.ndarray
    admissible: np.ndarray
    selected: Tuple[int, ...]
    mb_selected: Tuple[int, ...]

    @property
    def used(self) -> int:
        return self.subsamples - self.failures

    @property
    def max_probability(self) -> np.ndarray:
        """Per-variable maximum over the admissible grid points."""
        if not np.any(self.admissible):
            return np.zeros(self.selection_probability.shape[0])
        return self.selection_probability[:, self.admissible].max(axis=1)


def _targets(y, x, z, estimator: str, H: int, d: int, first_stage: Optional[TuningStrategy],
             rng: SeededRng) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Design and responses the stage-two lasso paths are run on."""
    if estimator == "one-stage":
        response, design = center_inputs(y, x)
    else:
        design = stage_one(x, z, first_stage, rng=rng).fitted
        response, _ = center_inputs(y, design)
    if estimator == "two-stage-linear":
        return design, [response]
    sir_kernel = kernel(design, make_slices(y, H))
    return design, [item.values - item.values.mean() for item in pseudo_responses(sir_kernel, d)]


def _activity(design: np.ndarray, responses: List[np.ndarray], grid: np.ndarray) -> np.ndarray:
    gram = design.T @ design / design.shape[0]
    active = np.zeros((design.shape[1], grid.size), dtype=bool)
    for response in responses:
        fits = path_system(GramSystem.from_data(design, response, gram=gram), grid)
        active |= np.column_stack([fit.coefficients != 0 for fit in fits])
    return active


def _run_subsample(index: int, y, x, z, estimator, H, d, first_stage, grid, rng: SeededRng):
    n = y.shape[0]
    rows = np.sort(rng.choice(n, n // 2, replace=False))
    try:
        design, responses = _targets(y[rows], x[rows], None if z is None else z[rows],
                                     estimator, H, d, first_stage, rng.child(0))
        return _activity(design, responses, grid), None
    except BATCH_ERRORS as exc:
        return None, f"subsample {index}: {exc}"


def stability_selection(y, x, z=None, estimator: str = "two-stage", subsamples: int = 100, cutoff: float = 0.75,
                        rng: Optional[SeededRng] = None, *, threshold: float = 0.5, error_bound: float = 1.0,
                        H: int = DEFAULT_SLICES, d: int = 1, first_stage: Optional[TuningStrategy] = None,
                        n_points: int = GRID_POINTS, ratio: float = GRID_RATIO, n_jobs: int = 1) -> StabilityPath:
    """
    Selection probabilities along the stage-two penalty grid.

    Args:
        y, x, z (array_like): Response, covariates and instruments (z is
            unused by ``one-stage``).
        estimator (str): ``one-stage`` (lasso SIR on X), ``two-stage``
            (lasso SIR on X̂) or ``two-stage-linear`` (lasso of y on X̂).
        subsamples (int): Number of half-samples.
        cutoff (float): Probability cutoff of the error-bound rule.
        rng (SeededRng): Subsample b uses ``rng.child(b + 1)``.
        threshold (float): Probability threshold of the reported selection.
        error_bound (float): Expected number of false selections EV.

    Returns:
        StabilityPath

    Raises:
        TooFewObservations: If n < 20.
        StabilityFailed: If every subsample failed.
    """
    if estimator not in ESTIMATORS:
        raise ConfigInvalid(f"unknown stability estimator {estimator!r}", key="estimator")
    if not 0.5 < cutoff <= 1.0:
        raise ConfigInvalid("cutoff must lie in (0.5, 1]", key="cutoff")
    rng = rng or SeededRng(0)
    response = np.asarray(y, dtype=np.float64).ravel()
    design = as_matrix(x, "covariates")
    instruments = None if z is None else as_matrix(z, "instruments")
    if estimator != "one-stage" and instruments is None:
        raise ConfigInvalid(f"estimator {estimator!r} needs instruments", key="z")
    n, p = design.shape
    if n < MIN_OBSERVATIONS:
        raise TooFewObservations(f"stability selection needs at least {MIN_OBSERVATIONS} observations", n=n)

    full_design, full_responses = _targets(response, design, instruments, estimator, H, d, first_stage, rng.child(0))
    penalty_max = max(float(np.max(np.abs(full_design.T @ r))) / n for r in full_responses)
    grid = penalty_grid(penalty_max, n_points, ratio)

    results = Parallel(n_jobs=n_jobs)(
        delayed(_run_subsample)(b, response, design, instruments, estimator, H, d, first_stage, grid,
                                rng.child(b + 1))
        for b in range(subsamples))
    errors = tuple(message for _, message in results if message is not None)
    activity = [active for active, _ in results if active is not None]
    for message in errors:
        logger.warning("%s", message)
    if not activity:
        raise StabilityFailed("every subsample failed", subsamples=subsamples)

    probability = np.mean(np.stack(activity), axis=0)
    average_size = probability.sum(axis=0)
    admissible = average_size <= size_cap(p, cutoff, error_bound)
    best = probability[:, admissible].max(axis=1) if np.any(admissible) else np.zeros(p)
    path_result = StabilityPath(
        estimator=estimator,
        grid=grid,
        selection_probability=probability,
        subsamples=subsamples,
        failures=len(errors),
        errors=errors,
        cutoff=cutoff,
        threshold=threshold,
        error_bound=error_bound,
        average_size=average_size,
        admissible=admissible,
        selected=tuple(int(j) for j in np.flatnonzero(best >= threshold)),
        mb_selected=tuple(int(j) for j in np.flatnonzero(best >= cutoff)),
    )
    logger.info("stability (%s): %d of %d subsamples used, %d selected",
                estimator, path_result.used, subsamples, len(path_result.selected))
    return path_result
