"""
Lasso SIR: one penalised regression of each pseudo-response on the design.

Functions:
- lasso_sir(y, x, H, d, tuning, rng): One-stage estimate of the central subspace.
- assemble_estimate(...): Pack per-dimension fits into an SdrEstimate.
"""

import logging
from dataclasses import dataclass
from typing import Any, Optional, Sequence, Tuple

import numpy as np

from endosir.exceptions import DimensionMismatch, NonFinite
from lasso.tuning import TuningReport, TuningStrategy, select_penalty
from numkit.linalg import as_matrix
from numkit.rng import SeededRng
from .kernel import kernel, pseudo_responses
from .slicing import SliceDesign, make_slices

logger = logging.getLogger(__name__)

DEFAULT_SLICES = 10


@dataclass(frozen=True)
class SdrEstimate:
    """
    Estimated basis B̂ (p×d) of the central subspace.

    ``adjusted_eigenvalues[k]`` is λ̂_k·‖β̂_k‖₂ and ``support`` the rows of
    B̂ with any nonzero entry. ``first_stage`` holds the StageOneFit for
    two-stage estimates.
    """
    b_hat: np.ndarray
    eigenvalues: np.ndarray
    adjusted_eigenvalues: np.ndarray
    support: Tuple[int, ...]
    stage: str
    penalties: np.ndarray
    reports: Tuple[TuningReport, ...]
    slices: Optional[SliceDesign] = None
    first_stage: Optional[Any] = None

    @property
    def d(self) -> int:
        return int(self.b_hat.shape[1])


def row_support(b_hat: np.ndarray) -> Tuple[int, ...]:
    return tuple(int(j) for j in np.flatnonzero(np.any(b_hat != 0, axis=1)))


def assemble_estimate(reports: Sequence[TuningReport], eigenvalues: Sequence[float], stage: str,
                      slices: Optional[SliceDesign] = None, first_stage: Any = None) -> SdrEstimate:
    b_hat = np.column_stack([report.fit.coefficients for report in reports])
    eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
    return SdrEstimate(
        b_hat=b_hat,
        eigenvalues=eigenvalues,
        adjusted_eigenvalues=eigenvalues * np.linalg.norm(b_hat, axis=0),
        support=row_support(b_hat),
        stage=stage,
        penalties=np.array([report.chosen for report in reports]),
        reports=tuple(reports),
        slices=slices,
        first_stage=first_stage,
    )


def center_inputs(y, x) -> Tuple[np.ndarray, np.ndarray]:
    design = as_matrix(x, "design")
    response = np.asarray(y, dtype=np.float64).ravel()
    if not np.all(np.isfinite(response)):
        raise NonFinite("response contains NaN or infinite entries")
    if response.shape[0] != design.shape[0]:
        raise DimensionMismatch("response and design have different row counts",
                                rows=design.shape[0], length=response.shape[0])
    return response - response.mean(), design - design.mean(axis=0)


def lasso_sir(y, x, H: int = DEFAULT_SLICES, d: int = 1, tuning: Optional[TuningStrategy] = None, *,
              rng: Optional[SeededRng] = None, n_jobs: int = 1, stage: str = "one-stage") -> SdrEstimate:
    """
    Lasso SIR estimate of a d-dimensional central subspace.

    The columns of x are centered here. Slices come from y, the kernel
    from the centered design, and each pseudo-response ỹ_k is regressed on
    the design with its own penalty. Cross-validation splits only the
    penalised regression; ỹ_k stays fixed from the full data.

    Args:
        y (array_like): Response of length n.
        x (array_like): n×p design.
        H (int): Number of slices.
        d (int): Number of directions, ideally at most H − 1.
        tuning (TuningStrategy): Penalty selection for every direction.
        rng (SeededRng): Source for fold partitions; direction k uses ``rng.child(k)``.

    Returns:
        SdrEstimate: B̂ with one column per direction.
    """
    tuning = tuning or TuningStrategy()
    rng = rng or SeededRng(0)
    _, design = center_inputs(y, x)
    if d > H - 1:
        logger.warning("requested d=%d directions with only H=%d slices", d, H)
    slices = make_slices(y, H)
    sir_kernel = kernel(design, slices)
    gram = design.T @ design / design.shape[0]
    reports = []
    for pseudo in pseudo_responses(sir_kernel, d):
        response = pseudo.values - pseudo.values.mean()
        reports.append(select_penalty(design, response, tuning, rng=rng.child(pseudo.k),
                                      gram=gram, n_jobs=n_jobs))
        logger.debug("direction %d: penalty %.4g, %d active", pseudo.k, reports[-1].chosen, reports[-1].fit.df)
    return assemble_estimate(reports, sir_kernel.eigen.values[:d], stage, slices=slices)
