"""
Structural-dimension selection by clustering adjusted eigenvalues.

Each repeat tunes lasso SIR for directions 1..H−1 by K-fold
cross-validation on a fresh random split, computes the adjusted
eigenvalues λ̂_k‖β̂_k‖₂, splits them into two groups by 2-means and votes
for the size of the group holding the largest value. The final d̂ is the
most frequent vote.
"""

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.cluster import KMeans

from endosir.exceptions import DegenerateCluster, DimensionMismatch, EigenvalueTooSmall
from lasso.tuning import tune_cv
from numkit.rng import SeededRng
from sir.estimators import DEFAULT_SLICES, center_inputs
from sir.kernel import kernel, pseudo_responses, usable_dimensions
from sir.slicing import make_slices

logger = logging.getLogger(__name__)

REGRESSOR_CHOICES = ("Z", "X", "Xhat")


@dataclass(frozen=True)
class DimensionVote:
    regressor_choice: str
    votes: Tuple[int, ...]
    d_hat: int
    degenerate: Tuple[bool, ...]

    @property
    def repeats(self) -> int:
        return len(self.votes)

    @property
    def average(self) -> float:
        return float(np.mean(self.votes))

    def proportions(self) -> Dict[int, float]:
        counts = Counter(self.votes)
        return {value: counts[value] / len(self.votes) for value in sorted(counts)}


def cluster_dimension(values) -> int:
    """
    Size of the 2-means cluster that contains the largest value.

    Lloyd's algorithm starts from the minimum and the maximum.

    Raises:
        DegenerateCluster: If all values are equal; ``d_hat`` in the
            error context is the number of values.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise DimensionMismatch("no adjusted eigenvalues to cluster")
    if np.ptp(values) <= 1e-12 * max(1.0, float(np.max(np.abs(values)))):
        raise DegenerateCluster("adjusted eigenvalues are all equal", d_hat=int(values.size))
    init = np.array([[values.min()], [values.max()]])
    model = KMeans(n_clusters=2, init=init, n_init=1, max_iter=300, tol=0.0, algorithm="lloyd")
    labels = model.fit(values[:, None]).labels_
    return int(np.sum(labels == labels[int(np.argmax(values))]))


def _vote(design, responses, eigenvalues, folds: int, rng: SeededRng, gram) -> Tuple[int, bool]:
    adjusted = []
    for k, (response, value) in enumerate(zip(responses, eigenvalues)):
        report = tune_cv(design, response, folds, rng=rng.child(k), gram=gram)
        adjusted.append(value * float(np.linalg.norm(report.fit.coefficients)))
    try:
        return cluster_dimension(adjusted), False
    except DegenerateCluster as exc:
        return int(exc.context["d_hat"]), True


def select_dimension(y, regressors, H: int = DEFAULT_SLICES, repeats: int = 50, folds: int = 5,
                     rng: Optional[SeededRng] = None, *, regressor_choice: str = "X",
                     n_jobs: int = 1) -> DimensionVote:
    """
    Vote on the structural dimension d.

    Args:
        y (array_like): Response.
        regressors (array_like): Z, X or X̂ as chosen by the caller.
        H (int): Number of slices; directions 1..H−1 are fitted.
        repeats (int): Number of independent cross-validation splits.
        folds (int): Folds per split.
        rng (SeededRng): Repeat r uses ``rng.child(r)``.
        regressor_choice (str): Label recorded in the result.

    Returns:
        DimensionVote: Per-repeat votes and their mode (ties go to the smaller d).
    """
    rng = rng or SeededRng(0)
    _, design = center_inputs(y, regressors)
    sir_kernel = kernel(design, make_slices(y, H))
    available = min(H - 1, usable_dimensions(sir_kernel))
    if available < 1:
        raise EigenvalueTooSmall(k=1, eigenvalue=float(sir_kernel.eigen.values[0]))
    if available < H - 1:
        logger.warning("only %d of %d directions have usable eigenvalues", available, H - 1)
    pseudo = pseudo_responses(sir_kernel, available)
    responses = [item.values - item.values.mean() for item in pseudo]
    eigenvalues = [item.eigenvalue for item in pseudo]
    gram = design.T @ design / design.shape[0]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_vote)(design, responses, eigenvalues, folds, rng.child(r), gram) for r in range(repeats))
    votes = tuple(vote for vote, _ in results)
    degenerate = tuple(flag for _, flag in results)
    if any(degenerate):
        logger.warning("%d of %d repeats had indistinguishable adjusted eigenvalues", sum(degenerate), repeats)
    counts = Counter(votes)
    top = max(counts.values())
    d_hat = min(value for value, count in counts.items() if count == top)
    logger.info("dimension vote on %s: d=%d (%d of %d repeats)", regressor_choice, d_hat, top, repeats)
    return DimensionVote(regressor_choice=regressor_choice, votes=votes, d_hat=d_hat, degenerate=degenerate)
