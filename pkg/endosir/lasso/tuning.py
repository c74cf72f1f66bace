"""
Penalty selection for the lasso: K-fold cross-validation and (extended) BIC.

Cross-validation never materialises training matrices. Each fold's
centered training Gram matrix is obtained by downdating the full XᵀX with
the held-out rows, so one full Gram product serves every fold.

Functions:
- tune_cv(design, response, folds, repeats, rng): Held-out squared error.
- tune_bic(design, response): n·log(RSS/n) + df·log n, optionally extended.
- fold_partition(n, folds, rng): Seeded random partition into folds.
- select_penalty(design, response, strategy, rng): Dispatch on a TuningStrategy.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.special import gammaln

from endosir.exceptions import ConfigInvalid, DegenerateFolds, TooFewObservations
from numkit.rng import SeededRng
from .solver import (
    GRID_POINTS, GRID_RATIO, GramSystem, LassoFit, path_system, penalty_grid, solve_system, validate_data,
)

logger = logging.getLogger(__name__)

RSS_FLOOR = 1e-12


@dataclass(frozen=True)
class TuningStrategy:
    """
    How to choose a lasso penalty.

    ``kind`` is one of ``cv``, ``bic``, ``ebic`` or ``fixed``. Stage-one
    regressions additionally accept ``theory`` (see twostage.first_stage).
    """
    kind: str = "cv"
    folds: int = 10
    repeats: int = 1
    penalty: Optional[float] = None
    ebic_gamma: float = 0.5
    constant: float = 1.0
    standardize: bool = False
    n_points: int = GRID_POINTS
    ratio: float = GRID_RATIO

    KINDS = ("cv", "bic", "ebic", "fixed", "theory")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigInvalid(f"unknown tuning strategy {self.kind!r}", key="tuning")
        if self.kind == "fixed" and (self.penalty is None or self.penalty < 0):
            raise ConfigInvalid("fixed tuning needs a nonnegative penalty", key="penalty")
        if self.folds < 2 or self.repeats < 1:
            raise ConfigInvalid("cross-validation needs folds >= 2 and repeats >= 1", key="folds")


@dataclass(frozen=True)
class TuningReport:
    kind: str
    grid: np.ndarray
    criterion: np.ndarray
    chosen: float
    chosen_index: int
    fit: LassoFit
    standard_error: Optional[np.ndarray] = field(default=None)


def fold_partition(n: int, folds: int, rng: SeededRng) -> List[np.ndarray]:
    """Split a seeded permutation of range(n) into ``folds`` parts of near-equal size."""
    if folds < 2 or n < folds:
        raise DegenerateFolds(f"cannot split {n} observations into {folds} folds", n=n, folds=folds)
    return [np.sort(part) for part in np.array_split(rng.permutation(n), folds)]


def _fold_errors(x: np.ndarray, y: np.ndarray, xtx: np.ndarray, test: np.ndarray,
                 grid: np.ndarray, standardize: bool) -> np.ndarray:
    n = x.shape[0]
    n_train = n - test.size
    xt, yt = x[test], y[test]
    mean_x = (x.sum(axis=0) - xt.sum(axis=0)) / n_train
    mean_y = (y.sum() - yt.sum()) / n_train
    gram = (xtx - xt.T @ xt) / n_train - np.outer(mean_x, mean_x)
    xty = (x.T @ y - xt.T @ yt) / n_train - mean_x * mean_y
    yy = (y @ y - yt @ yt) / n_train - mean_y ** 2
    system = GramSystem(gram=gram, xty=xty, yy=float(yy), n=n_train)
    if standardize:
        system = system.standardized()
    fits = path_system(system, grid)
    coefs = np.column_stack([fit.coefficients for fit in fits])
    predictions = mean_y + (xt - mean_x) @ coefs
    return np.mean((yt[:, None] - predictions) ** 2, axis=0)


def tune_cv(design, response, folds: int = 10, repeats: int = 1, rng: Optional[SeededRng] = None, *,
            grid: Optional[Sequence[float]] = None, standardize: bool = False,
            gram: Optional[np.ndarray] = None, n_points: int = GRID_POINTS, ratio: float = GRID_RATIO,
            n_jobs: int = 1) -> TuningReport:
    """
    Choose the penalty minimising mean held-out squared error.

    Args:
        design (array_like): Centered n×m design.
        response (array_like): Centered response.
        folds (int): Number of folds, at least 2 and at most n.
        repeats (int): Independent fold partitions averaged together.
        rng (SeededRng): Source of the fold partitions.
        grid (sequence, optional): Penalties; defaults to the path grid of
            the full data.
        n_jobs (int): joblib workers over folds.

    Returns:
        TuningReport: criterion is the mean error per grid point and
        standard_error its standard error across folds. The reported fit is
        the full-data fit at the chosen penalty.

    Raises:
        DegenerateFolds: If a fold would be empty.
    """
    x, y = validate_data(design, response)
    n = x.shape[0]
    rng = rng or SeededRng(0)
    system = GramSystem.from_data(x, y, gram=gram, standardize=standardize)
    penalties = (penalty_grid(system.penalty_max, n_points, ratio) if grid is None
                 else np.sort(np.asarray(grid, dtype=np.float64))[::-1])
    partitions = [part for _ in range(repeats) for part in fold_partition(n, folds, rng)]
    xtx = gram * n if gram is not None else x.T @ x
    errors = Parallel(n_jobs=n_jobs)(
        delayed(_fold_errors)(x, y, xtx, test, penalties, standardize) for test in partitions)
    errors = np.vstack(errors)
    mean = errors.mean(axis=0)
    spread = errors.std(axis=0, ddof=1) / np.sqrt(errors.shape[0])
    index = int(np.argmin(mean))
    fit = path_system(system, penalties[:index + 1])[-1]
    logger.debug("cv chose penalty %.4g (index %d of %d)", penalties[index], index, penalties.size)
    return TuningReport(kind="cv", grid=penalties, criterion=mean, chosen=float(penalties[index]),
                        chosen_index=index, fit=fit, standard_error=spread)


def _log_binomial(m: int, k: int) -> float:
    return float(gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1))


def tune_bic(design, response, *, grid: Optional[Sequence[float]] = None, ebic_gamma: float = 0.0,
             standardize: bool = False, gram: Optional[np.ndarray] = None,
             n_points: int = GRID_POINTS, ratio: float = GRID_RATIO) -> TuningReport:
    """
    Choose the penalty minimising BIC(μ) = n·log(RSS/n) + df·log n.

    RSS is floored at 1e-12·‖y‖² before the logarithm. With
    ``ebic_gamma`` > 0 the extended criterion adds 2γ·log C(m, df). Fits
    with df ≥ n − 1 are saturated and get an infinite criterion. Ties go
    to the larger penalty.
    """
    x, y = validate_data(design, response)
    system = GramSystem.from_data(x, y, gram=gram, standardize=standardize)
    return _bic_from_system(system, grid, ebic_gamma, n_points, ratio)


def _bic_from_system(system: GramSystem, grid, ebic_gamma: float, n_points: int, ratio: float) -> TuningReport:
    n, m = system.n, system.dim
    if n < 2:
        raise TooFewObservations("BIC needs at least two observations", n=n)
    fits = path_system(system, grid, n_points=n_points, ratio=ratio)
    floor = RSS_FLOOR * n * system.yy
    if floor <= 0:
        floor = np.finfo(np.float64).tiny
    criterion = np.empty(len(fits))
    for i, fit in enumerate(fits):
        rss = max(system.rss(system.to_system(fit.coefficients)), floor)
        value = n * np.log(rss / n) + fit.df * np.log(n)
        if ebic_gamma > 0:
            value += 2.0 * ebic_gamma * _log_binomial(m, fit.df)
        if fit.df > 0 and fit.df >= n - 1:
            value = np.inf
        criterion[i] = value
    index = int(np.argmin(criterion))
    penalties = np.array([fit.penalty for fit in fits])
    return TuningReport(kind="ebic" if ebic_gamma > 0 else "bic", grid=penalties, criterion=criterion,
                        chosen=float(penalties[index]), chosen_index=index, fit=fits[index])


def select_penalty(design, response, strategy: TuningStrategy, *, rng: Optional[SeededRng] = None,
                   gram: Optional[np.ndarray] = None, n_jobs: int = 1) -> TuningReport:
    """Run the penalty selection described by ``strategy``."""
    if strategy.kind == "cv":
        return tune_cv(design, response, strategy.folds, strategy.repeats, rng, gram=gram,
                       standardize=strategy.standardize, n_points=strategy.n_points,
                       ratio=strategy.ratio, n_jobs=n_jobs)
    if strategy.kind in ("bic", "ebic"):
        return tune_bic(design, response, gram=gram, standardize=strategy.standardize,
                        ebic_gamma=strategy.ebic_gamma if strategy.kind == "ebic" else 0.0,
                        n_points=strategy.n_points, ratio=strategy.ratio)
    if strategy.kind == "fixed":
        return fixed_penalty(design, response, float(strategy.penalty), gram=gram,
                             standardize=strategy.standardize)
    raise ConfigInvalid(f"tuning {strategy.kind!r} is only available for stage-one regressions", key="tuning")


def fixed_penalty(design, response, penalty: float, *, gram: Optional[np.ndarray] = None,
                  standardize: bool = False) -> TuningReport:
    x, y = validate_data(design, response)
    system = GramSystem.from_data(x, y, gram=gram, standardize=standardize)
    fit = solve_system(system, penalty)
    return TuningReport(kind="fixed", grid=np.array([penalty]), criterion=np.array([np.nan]),
                        chosen=float(penalty), chosen_index=0, fit=fit)
