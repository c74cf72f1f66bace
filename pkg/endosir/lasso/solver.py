"""
Lasso by covariance-update coordinate descent.

The objective is (1/2n)‖y − Xβ‖² + μ‖β‖₁ with centered X and y and no
intercept. Every solve works on the sufficient statistics held by
``GramSystem`` (XᵀX/n, Xᵀy/n, yᵀy/n), so a Gram matrix can be shared by
many responses and by every point of a penalty path.

Coordinate descent cycles over a working set (the current active set plus
coordinates passing a screening rule). When the working set has
converged, the KKT conditions are checked on all coordinates at once and
violators are added before cycling again.

Functions:
- solve(problem, warm): Fit a single LassoProblem.
- solve_system(system, penalty, warm): Fit from sufficient statistics.
- penalty_grid(penalty_max, n_points, ratio): Log-spaced descending grid.
- path(design, response, grid): Warm-started fits along a grid.
- path_system(system, grid): Same, from sufficient statistics.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy import linalg as sla

from endosir.exceptions import DimensionMismatch, InvalidProblem, MaxIterations, NonFinite
from numkit.linalg import as_matrix, column_means_ok

logger = logging.getLogger(__name__)

MAX_SWEEPS = 100_000
CONVERGENCE_TOL = 1e-7
KKT_TOL = 1e-6
GRID_POINTS = 100
GRID_RATIO = 1e-3


@dataclass(frozen=True)
class GramSystem:
    """
    Sufficient statistics of a centered least-squares problem.

    ``scale`` is set when the system was standardized; coefficients
    solved on it must be divided by ``scale`` to return to the original
    columns.
    """
    gram: np.ndarray
    xty: np.ndarray
    yy: float
    n: int
    scale: Optional[np.ndarray] = None

    @classmethod
    def from_data(cls, design: np.ndarray, response: np.ndarray,
                  gram: Optional[np.ndarray] = None, standardize: bool = False) -> "GramSystem":
        n = design.shape[0]
        if gram is None:
            gram = design.T @ design / n
        system = cls(gram=gram, xty=design.T @ response / n, yy=float(response @ response) / n, n=n)
        return system.standardized() if standardize else system

    def standardized(self) -> "GramSystem":
        if self.scale is not None:
            return self
        scale = np.sqrt(np.clip(np.diag(self.gram), 0.0, None))
        scale = np.where(scale > 0, scale, 1.0)
        return GramSystem(gram=self.gram / np.outer(scale, scale), xty=self.xty / scale,
                          yy=self.yy, n=self.n, scale=scale)

    @property
    def dim(self) -> int:
        return int(self.xty.shape[0])

    @property
    def penalty_max(self) -> float:
        """Smallest penalty at which the zero vector solves the problem."""
        return float(np.max(np.abs(self.xty))) if self.xty.size else 0.0

    def to_original(self, beta: np.ndarray) -> np.ndarray:
        return beta if self.scale is None else beta / self.scale

    def to_system(self, beta: np.ndarray) -> np.ndarray:
        return beta if self.scale is None else beta * self.scale

    def quadratic(self, beta: np.ndarray) -> float:
        """βᵀGβ evaluated on the nonzero coordinates only."""
        active = np.flatnonzero(beta)
        if active.size == 0:
            return 0.0
        sub = beta[active]
        return float(sub @ self.gram[np.ix_(active, active)] @ sub)

    def objective(self, beta: np.ndarray, penalty: float) -> float:
        return (0.5 * self.yy - float(self.xty @ beta) + 0.5 * self.quadratic(beta)
                + penalty * float(np.sum(np.abs(beta))))

    def rss(self, beta: np.ndarray) -> float:
        """Residual sum of squares ‖y − Xβ‖² (coefficients on this system's scale)."""
        value = self.n * (self.yy - 2.0 * float(self.xty @ beta) + self.quadratic(beta))
        return max(value, 0.0)


@dataclass(frozen=True)
class LassoProblem:
    """Centered design, centered response and a nonnegative penalty."""
    design: np.ndarray
    response: np.ndarray
    penalty: float
    standardize: bool = False

    def __post_init__(self):
        design, response = validate_data(self.design, self.response)
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "response", response)
        if not self.penalty >= 0:
            raise InvalidProblem("penalty must be nonnegative", penalty=self.penalty)

    def system(self) -> GramSystem:
        return GramSystem.from_data(self.design, self.response, standardize=self.standardize)


@dataclass(frozen=True)
class LassoFit:
    coefficients: np.ndarray
    penalty: float
    iterations: int
    kkt_residual: float
    objective: float
    converged: bool = True

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.coefficients)

    @property
    def df(self) -> int:
        return int(np.count_nonzero(self.coefficients))


def validate_data(design, response):
    """
    Check that design and response are finite, aligned and centered.

    Returns:
        tuple: (design, response) as float64 arrays.

    Raises:
        NonFinite, DimensionMismatch, InvalidProblem
    """
    x = as_matrix(design, "design")
    y = np.asarray(response, dtype=np.float64).ravel()
    if not np.all(np.isfinite(y)):
        raise NonFinite("response contains NaN or infinite entries")
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch("design and response have different row counts",
                                rows=x.shape[0], length=y.shape[0])
    if not column_means_ok(x):
        raise InvalidProblem("design columns must be centered")
    if not column_means_ok(y[:, None]):
        raise InvalidProblem("response must be centered")
    return x, y


def _soft(value: float, threshold: float) -> float:
    magnitude = abs(value) - threshold
    if magnitude <= 0.0:
        return 0.0
    return math.copysign(magnitude, value)


def kkt_residual(gradient: np.ndarray, beta: np.ndarray, penalty: float) -> float:
    """
    Largest violation of the lasso optimality conditions.

    ``gradient`` is Xᵀ(y − Xβ)/n. Nonzero coordinates must satisfy
    gradient = μ·sign(β); zero coordinates must satisfy |gradient| ≤ μ.
    """
    if beta.size == 0:
        return 0.0
    nonzero = beta != 0
    worst = 0.0
    if np.any(nonzero):
        worst = float(np.max(np.abs(gradient[nonzero] - penalty * np.sign(beta[nonzero]))))
    if np.any(~nonzero):
        worst = max(worst, float(np.max(np.abs(gradient[~nonzero]) - penalty)))
    return max(worst, 0.0)


def _coordinate_descent(system: GramSystem, penalty: float, beta: np.ndarray, screen: float,
                        max_sweeps: int, tol: float):
    gram, xty = system.gram, system.xty
    diag = np.diag(gram)
    gb = gram @ beta
    gradient = xty - gb
    working = sorted(set(np.flatnonzero(beta)) | set(np.flatnonzero(np.abs(gradient) > screen)))
    sweeps = 0
    objective = system.objective(beta, penalty)
    best_objective, best_beta = objective, beta.copy()
    sweep_tol = tol
    residual = math.inf
    converged = False
    while sweeps < max_sweeps:
        while sweeps < max_sweeps:
            max_delta = 0.0
            for j in working:
                djj = diag[j]
                if djj <= 0.0:
                    continue
                old = beta[j]
                new = _soft(xty[j] - gb[j] + djj * old, penalty) / djj
                if new != old:
                    delta = new - old
                    beta[j] = new
                    gb += gram[:, j] * delta
                    max_delta = max(max_delta, abs(delta))
            sweeps += 1
            current = (0.5 * system.yy - float(xty @ beta) + 0.5 * float(beta @ gb)
                       + penalty * float(np.sum(np.abs(beta))))
            if current > objective + 1e-12 * max(1.0, abs(objective)):
                logger.error("objective increased from %.17g to %.17g at sweep %d", objective, current, sweeps)
            objective = current
            if objective < best_objective:
                best_objective, best_beta = objective, beta.copy()
            if max_delta <= sweep_tol * max(1.0, float(np.max(np.abs(beta))) if beta.size else 1.0):
                break
        gb = gram @ beta
        gradient = xty - gb
        residual = kkt_residual(gradient, beta, penalty)
        if residual <= KKT_TOL:
            converged = True
            break
        in_working = np.zeros(beta.size, dtype=bool)
        in_working[working] = True
        violators = np.flatnonzero((beta == 0) & (np.abs(gradient) > penalty) & ~in_working)
        if violators.size:
            working = sorted(set(working) | set(violators.tolist()))
        else:
            sweep_tol = max(sweep_tol * 0.1, 1e-16)
    if not converged:
        beta = best_beta
        residual = kkt_residual(xty - gram @ beta, beta, penalty)
    return beta, sweeps, residual, converged


def solve_system(system: GramSystem, penalty: float, warm: Optional[np.ndarray] = None, *,
                 previous_penalty: Optional[float] = None, max_sweeps: int = MAX_SWEEPS,
                 tol: float = CONVERGENCE_TOL, strict: bool = False) -> LassoFit:
    """
    Solve the lasso from sufficient statistics.

    Args:
        system (GramSystem): Statistics of the centered problem.
        penalty (float): μ ≥ 0.
        warm (np.ndarray, optional): Starting coefficients on the original scale.
        previous_penalty (float, optional): Penalty of the previous path point,
            enabling the sequential strong screening rule.
        max_sweeps (int): Sweep budget before giving up.
        tol (float): Relative coefficient-change tolerance per sweep.
        strict (bool): Raise MaxIterations instead of returning the best iterate.

    Returns:
        LassoFit: Coefficients on the original column scale.

    Raises:
        NonFinite: If the iterate overflows.
        MaxIterations: Only when ``strict`` and the sweep budget runs out.
    """
    if not penalty >= 0:
        raise InvalidProblem("penalty must be nonnegative", penalty=penalty)
    m = system.dim
    beta = np.zeros(m) if warm is None else system.to_system(np.asarray(warm, dtype=np.float64)).copy()
    if beta.shape != (m,):
        raise DimensionMismatch("warm start has the wrong length", expected=m, got=beta.shape[0])

    if penalty == 0.0 and m:
        try:
            factor = sla.cho_factor(system.gram, lower=True, check_finite=False)
            beta = sla.cho_solve(factor, system.xty, check_finite=False)
            sweeps, converged = 0, True
            residual = kkt_residual(system.xty - system.gram @ beta, beta, penalty)
        except sla.LinAlgError:
            beta, sweeps, residual, converged = _coordinate_descent(
                system, penalty, beta, penalty, max_sweeps, tol)
    else:
        screen = penalty
        if previous_penalty is not None and previous_penalty > penalty:
            screen = max(2.0 * penalty - previous_penalty, 0.0)
        beta, sweeps, residual, converged = _coordinate_descent(
            system, penalty, beta, screen, max_sweeps, tol)

    if not np.all(np.isfinite(beta)):
        raise NonFinite("coordinate descent produced non-finite coefficients", penalty=penalty)
    fit = LassoFit(coefficients=system.to_original(beta), penalty=float(penalty), iterations=sweeps,
                   kkt_residual=residual, objective=system.objective(beta, penalty), converged=converged)
    if not converged:
        logger.warning("lasso stopped after %d sweeps at penalty %.4g (KKT residual %.3g)",
                       sweeps, penalty, residual)
        if strict:
            raise MaxIterations(fit=fit, penalty=penalty, sweeps=sweeps)
    return fit


def solve(problem: LassoProblem, warm: Optional[np.ndarray] = None, **options) -> LassoFit:
    """Solve a single LassoProblem; see ``solve_system`` for the options."""
    return solve_system(problem.system(), problem.penalty, warm, **options)


def penalty_grid(penalty_max: float, n_points: int = GRID_POINTS, ratio: float = GRID_RATIO) -> np.ndarray:
    """Descending log-spaced grid from ``penalty_max`` to ``ratio * penalty_max``."""
    if penalty_max <= 0:
        return np.zeros(1)
    if n_points == 1:
        return np.array([penalty_max])
    return np.geomspace(penalty_max, ratio * penalty_max, n_points)


def path_system(system: GramSystem, grid: Optional[Sequence[float]] = None, *,
                n_points: int = GRID_POINTS, ratio: float = GRID_RATIO,
                max_sweeps: int = MAX_SWEEPS) -> List[LassoFit]:
    if grid is None:
        penalties = penalty_grid(system.penalty_max, n_points, ratio)
    else:
        penalties = np.sort(np.asarray(grid, dtype=np.float64))[::-1]
    fits: List[LassoFit] = []
    warm = None
    previous = None
    for penalty in penalties:
        fit = solve_system(system, float(penalty), warm, previous_penalty=previous, max_sweeps=max_sweeps)
        if fits and fit.df < fits[-1].df:
            logger.debug("active set shrank from %d to %d at penalty %.4g", fits[-1].df, fit.df, penalty)
        fits.append(fit)
        warm = fit.coefficients
        previous = float(penalty)
    return fits


def path(design, response, grid: Optional[Sequence[float]] = None, *, standardize: bool = False,
         gram: Optional[np.ndarray] = None, n_points: int = GRID_POINTS, ratio: float = GRID_RATIO,
         max_sweeps: int = MAX_SWEEPS) -> List[LassoFit]:
    """
    Warm-started lasso fits ordered by descending penalty.

    Args:
        design (array_like): Centered n×m design.
        response (array_like): Centered response of length n.
        grid (sequence, optional): Penalties; defaults to ``n_points``
            log-spaced values from ‖Xᵀy/n‖∞ down to ``ratio`` times that.
        standardize (bool): Penalise unit-variance columns.
        gram (np.ndarray, optional): Precomputed XᵀX/n.

    Returns:
        list[LassoFit]: One fit per grid point, largest penalty first.
    """
    x, y = validate_data(design, response)
    system = GramSystem.from_data(x, y, gram=gram, standardize=standardize)
    return path_system(system, grid, n_points=n_points, ratio=ratio, max_sweeps=max_sweeps)
