"""
Dense linear algebra used across endosir.

Functions:
- as_matrix(a, name): Convert to a finite float64 2-D array.
- check_symmetric(a): Validate symmetry to the relative tolerance.
- sym_eigen(a, k): Top-k eigenpairs with a fixed sign convention.
- cholesky(a): Lower Cholesky factor, reporting the failing pivot.
- gram_schmidt(cols): Orthonormalise columns, keeping the first direction.
- projection_matrix(b): Orthogonal projector onto the column space of b.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.linalg import lapack

from endosir.exceptions import (
    DimensionMismatch, InvalidProblem, NonFinite, NonSymmetric, NotPositiveDefinite, RankDeficient,
)

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-8
RANK_TOL = 1e-12


@dataclass(frozen=True)
class SymEigen:
    """Eigenvalues sorted descending and the matching orthonormal columns."""
    values: np.ndarray
    vectors: np.ndarray

    def __len__(self) -> int:
        return int(self.values.shape[0])


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """
    Convert ``a`` to a 2-D float64 array and reject NaN or infinite entries.

    Args:
        a (array_like): Input values.
        name (str): Label used in the error message.

    Returns:
        np.ndarray: A 2-D float64 array (1-D input becomes a single column).

    Raises:
        NonFinite: If any entry is NaN or infinite.
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be two-dimensional", shape=str(arr.shape))
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} contains NaN or infinite entries")
    return arr


def check_symmetric(a: np.ndarray, name: str = "matrix") -> None:
    if a.shape[0] != a.shape[1]:
        raise NonSymmetric(f"{name} is not square", shape=a.shape)
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    gap = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if gap > SYMMETRY_TOL * scale:
        raise NonSymmetric(f"{name} is not symmetric", asymmetry=gap)


def sym_eigen(a, k: int) -> SymEigen:
    """
    Compute the k largest eigenpairs of a symmetric matrix.

    The matrix is symmetrised as (A + Aᵀ)/2 before LAPACK's ``syevr`` runs.
    Each eigenvector is flipped so that its largest-magnitude entry is
    positive; on exact magnitude ties the lowest index decides.

    Args:
        a (array_like): Symmetric square matrix.
        k (int): Number of leading pairs, 1 ≤ k ≤ dim(a).

    Returns:
        SymEigen: Values in descending order with orthonormal vectors.

    Raises:
        NonFinite: On NaN or infinite input.
        NonSymmetric: If the input fails the symmetry check.
    """
    mat = as_matrix(a, "eigen input")
    check_symmetric(mat, "eigen input")
    dim = mat.shape[0]
    if not 1 <= k <= dim:
        raise DimensionMismatch(f"k must lie in [1, {dim}]", k=k)
    sym = 0.5 * (mat + mat.T)
    values, vectors = sla.eigh(sym, subset_by_index=[dim - k, dim - 1], driver="evr")
    values = values[::-1].copy()
    vectors = vectors[:, ::-1].copy()
    for col in range(k):
        mags = np.abs(vectors[:, col])
        # magnitudes within rounding of the maximum count as ties
        lead = int(np.flatnonzero(mags >= mags.max() - 1e-12)[0])
        if vectors[lead, col] < 0:
            vectors[:, col] = -vectors[:, col]
    return SymEigen(values=values, vectors=vectors)


def cholesky(a) -> np.ndarray:
    """
    Return the lower-triangular L with L·Lᵀ = a.

    Raises:
        NotPositiveDefinite: With the zero-based index of the first
            non-positive pivot.
    """
    mat = as_matrix(a, "cholesky input")
    check_symmetric(mat, "cholesky input")
    factor, info = lapack.dpotrf(mat, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefinite(pivot=int(info) - 1)
    if info < 0:
        raise InvalidProblem(f"dpotrf rejected argument {-info}")
    return np.tril(factor)


def gram_schmidt(cols) -> np.ndarray:
    """
    Orthonormalise the columns of ``cols`` in order.

    The first column keeps its direction; later columns have the
    components along earlier ones removed. Modified Gram-Schmidt is run
    twice per column so the output is orthonormal to machine precision.

    Raises:
        RankDeficient: If a residual norm falls below 1e-12.
    """
    mat = as_matrix(cols, "gram_schmidt input").copy()
    out = np.zeros_like(mat)
    for j in range(mat.shape[1]):
        v = mat[:, j].copy()
        for _ in range(2):
            for i in range(j):
                v -= (out[:, i] @ v) * out[:, i]
        norm = float(np.linalg.norm(v))
        if norm < RANK_TOL:
            raise RankDeficient(column=j)
        out[:, j] = v / norm
    return out


def projection_matrix(b) -> np.ndarray:
    """Projector B·B⁺ onto col(B); the zero matrix projects to zero."""
    mat = as_matrix(b, "basis")
    if not np.any(mat):
        return np.zeros((mat.shape[0], mat.shape[0]))
    return mat @ np.linalg.pinv(mat)


def column_means_ok(x: np.ndarray, tol: float = 1e-8) -> bool:
    """True if every column mean is within ``tol`` of zero, relative to the column scale."""
    if x.shape[0] == 0:
        return True
    scale = np.maximum(1.0, np.max(np.abs(x), axis=0))
    return bool(np.all(np.abs(x.mean(axis=0)) <= tol * scale))
