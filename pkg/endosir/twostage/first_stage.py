"""
Stage one: sparse regressions of every covariate on the instruments.

Column j of Γ̂ solves min (1/2n)‖x_j − Zγ‖² + μ_1j‖γ‖₁. The p regressions
share the instrument Gram matrix ZᵀZ/n and run through joblib, each with
its own child random stream. The fitted covariates X̂ = ZΓ̂ feed stage two.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg as sla

from endosir.exceptions import DimensionMismatch, EndosirError
from lasso.tuning import TuningReport, TuningStrategy, fixed_penalty, select_penalty
from numkit.linalg import as_matrix
from numkit.rng import SeededRng

logger = logging.getLogger(__name__)

RIDGE_PILOT = 1e-2


@dataclass(frozen=True)
class StageOneFit:
    gamma_hat: np.ndarray
    penalties: np.ndarray
    fitted: np.ndarray
    reports: Tuple[TuningReport, ...]
    support_sizes: np.ndarray
    kkt_residuals: np.ndarray
    converged: np.ndarray


def theory_penalties(x: np.ndarray, z: np.ndarray, constant: float = 1.0,
                     gram: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Rate-scaled penalties μ_1j = c₀·σ̂_j·√(log(pq)/n).

    σ̂_j is the residual scale of a ridge pilot regression of x_j on Z
    with ridge parameter 1e-2 times the mean instrument variance.
    """
    n, p = x.shape
    q = z.shape[1]
    gram = z.T @ z / n if gram is None else gram
    alpha = RIDGE_PILOT * max(float(np.mean(np.diag(gram))), np.finfo(np.float64).eps)
    pilot = sla.solve(gram + alpha * np.eye(q), z.T @ x / n, assume_a="pos")
    sigma = np.linalg.norm(x - z @ pilot, axis=0) / np.sqrt(n)
    return constant * sigma * np.sqrt(np.log(p * q) / n)


def _fit_column(j: int, z: np.ndarray, column: np.ndarray, strategy: TuningStrategy, gram: np.ndarray,
                rng: SeededRng, penalty: Optional[float]) -> TuningReport:
    try:
        if penalty is not None:
            report = fixed_penalty(z, column, penalty, gram=gram, standardize=strategy.standardize)
            return dataclasses.replace(report, kind=strategy.kind)
        return select_penalty(z, column, strategy, rng=rng, gram=gram)
    except EndosirError as exc:
        raise exc.annotate(column=j)


def stage_one(x, z, tuning: Optional[TuningStrategy] = None, *, rng: Optional[SeededRng] = None,
              n_jobs: int = 1) -> StageOneFit:
    """
    Fit the p instrument regressions.

    Args:
        x (array_like): n×p covariates.
        z (array_like): n×q instruments with the same rows.
        tuning (TuningStrategy): ``bic`` (default), ``ebic``, ``cv``,
            ``fixed`` or ``theory`` (uses ``tuning.constant`` as c₀).
        rng (SeededRng): Column j uses ``rng.child(j)``.
        n_jobs (int): joblib workers over columns.

    Returns:
        StageOneFit: Γ̂ (q×p), per-column penalties and X̂ = ZΓ̂ (centered inputs).

    Raises:
        DimensionMismatch: If x and z have different row counts.
        EndosirError: Solver errors, annotated with ``column``.
    """
    design_x = as_matrix(x, "covariates")
    design_z = as_matrix(z, "instruments")
    if design_x.shape[0] != design_z.shape[0]:
        raise DimensionMismatch("covariates and instruments have different row counts",
                                x_rows=design_x.shape[0], z_rows=design_z.shape[0])
    strategy = tuning or TuningStrategy(kind="bic")
    rng = rng or SeededRng(0)
    xc = design_x - design_x.mean(axis=0)
    zc = design_z - design_z.mean(axis=0)
    n, p = xc.shape
    gram = zc.T @ zc / n
    fixed = [None] * p
    if strategy.kind == "theory":
        fixed = theory_penalties(xc, zc, strategy.constant, gram).tolist()
    elif strategy.kind == "fixed":
        fixed = [float(strategy.penalty)] * p
    reports = Parallel(n_jobs=n_jobs)(
        delayed(_fit_column)(j, zc, xc[:, j], strategy, gram, rng.child(j), fixed[j]) for j in range(p))
    gamma_hat = np.column_stack([report.fit.coefficients for report in reports])
    support_sizes = np.count_nonzero(gamma_hat, axis=0)
    logger.info("stage one: %d regressions, median support %d", p, int(np.median(support_sizes)))
    return StageOneFit(
        gamma_hat=gamma_hat,
        penalties=np.array([report.chosen for report in reports]),
        fitted=zc @ gamma_hat,
        reports=tuple(reports),
        support_sizes=support_sizes,
        kkt_residuals=np.array([report.fit.kkt_residual for report in reports]),
        converged=np.array([report.fit.converged for report in reports]),
    )
