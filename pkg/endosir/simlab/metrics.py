"""
Accuracy metrics for estimated central subspaces.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from endosir.exceptions import DimensionMismatch
from numkit.linalg import as_matrix, projection_matrix
from numkit.stats import mann_whitney_auc


@dataclass(frozen=True)
class MetricsReport:
    estimator: str
    replicate: int
    seed: int
    projection_error: float
    auc: float
    runtime: float
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _basis(b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    return as_matrix(b[:, None] if b.ndim == 1 else b, "basis")


def projection_error(b_hat, b_true) -> float:
    """
    Frobenius distance ‖P(B̂) − P(B)‖_F between the projections onto the column spaces.

    Lies in [0, √(2d)] and depends on the bases only through their spans.

    Raises:
        DimensionMismatch: If the bases have different numbers of rows.
    """
    estimate, truth = _basis(b_hat), _basis(b_true)
    if estimate.shape[0] != truth.shape[0]:
        raise DimensionMismatch("bases have different numbers of rows",
                                estimate=estimate.shape[0], truth=truth.shape[0])
    return float(np.linalg.norm(projection_matrix(estimate) - projection_matrix(truth), "fro"))


def selection_auc(b_hat, support: Sequence[int]) -> float:
    """
    AUC of the row norms of B̂ as scores for membership in ``support``.

    Raises:
        DegenerateLabels: If the support is empty or covers every row.
    """
    estimate = _basis(b_hat)
    labels = np.zeros(estimate.shape[0], dtype=int)
    labels[list(support)] = 1
    return mann_whitney_auc(np.linalg.norm(estimate, axis=1), labels)
