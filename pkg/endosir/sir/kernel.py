"""
SIR kernel matrix and pseudo-responses.

With slices S_1..S_H of sizes c_h, the kernel is

    Λ̂ = n⁻¹XᵀDX = Σ̂_X − T̂,
    T̂ = n⁻¹ Σ_h c_h/(c_h − 1) Σ_{i∈S_h} (x_i − x̄_h)(x_i − x̄_h)ᵀ,

where D = I_n − blockdiag(c_h/(c_h − 1)·P_{c_h}) and P_c centers a block
of length c. For equal slices c_h = n/H this is the usual average of the
within-slice covariance matrices. D is never formed; every product with
it goes through slice means.
"""

import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from endosir.exceptions import ConfigInvalid, EigenvalueTooSmall, InvalidProblem, SliceTooSmall
from numkit.linalg import SymEigen, as_matrix, column_means_ok, sym_eigen
from .slicing import SliceDesign

logger = logging.getLogger(__name__)

EIGEN_GUARD = 1e-10


@dataclass(frozen=True)
class SirKernel:
    lambda_hat: np.ndarray
    eigen: SymEigen
    design: np.ndarray
    slices: SliceDesign


@dataclass(frozen=True)
class PseudoResponse:
    k: int
    values: np.ndarray
    eigenvalue: float


def slice_means(values: np.ndarray, slices: SliceDesign) -> np.ndarray:
    """Per-slice means of the rows of ``values`` (1-D or 2-D)."""
    values = np.asarray(values, dtype=np.float64)
    totals = np.zeros((slices.H,) + values.shape[1:])
    np.add.at(totals, slices.assignment, values)
    return totals / slices.sizes.reshape((-1,) + (1,) * (values.ndim - 1))


def apply_d(values: np.ndarray, slices: SliceDesign) -> np.ndarray:
    """D·values without materialising the n×n matrix D."""
    values = np.asarray(values, dtype=np.float64)
    factor = slices.sizes / (slices.sizes - 1.0)
    within = values - slice_means(values, slices)[slices.assignment]
    row_factor = factor[slices.assignment].reshape((-1,) + (1,) * (values.ndim - 1))
    return values - row_factor * within


def kernel(x, slices: SliceDesign) -> SirKernel:
    """
    Build Λ̂ from a centered design and a slice partition.

    Returns:
        SirKernel: Λ̂ together with its top min(H, p) eigenpairs.

    Raises:
        SliceTooSmall: If a slice has fewer than two members.
        InvalidProblem: If the columns of x are not centered.
    """
    design = as_matrix(x, "design")
    n, p = design.shape
    if n != slices.n:
        raise InvalidProblem("slice design does not match the number of rows", rows=n, slices=slices.n)
    if np.any(slices.sizes < 2):
        raise SliceTooSmall("every slice needs at least two observations", smallest=int(slices.sizes.min()))
    if not column_means_ok(design):
        raise InvalidProblem("kernel needs a centered design")
    within = design - slice_means(design, slices)[slices.assignment]
    weights = (slices.sizes / (slices.sizes - 1.0))[slices.assignment] / n
    lambda_hat = design.T @ design / n - (within * weights[:, None]).T @ within
    lambda_hat = 0.5 * (lambda_hat + lambda_hat.T)
    eigen = sym_eigen(lambda_hat, min(slices.H, p))
    logger.debug("kernel eigenvalues %s", np.array2string(eigen.values, precision=4))
    return SirKernel(lambda_hat=lambda_hat, eigen=eigen, design=design, slices=slices)


def usable_dimensions(sir_kernel: SirKernel) -> int:
    """Number of leading eigenvalues above the pseudo-response guard."""
    return int(np.sum(sir_kernel.eigen.values > EIGEN_GUARD))


def pseudo_responses(sir_kernel: SirKernel, d: int) -> List[PseudoResponse]:
    """
    Pseudo-responses ỹ_k = λ̂_k⁻¹·D·X·η̂_k for k = 1..d.

    Raises:
        EigenvalueTooSmall: With the first k whose λ̂_k is at most 1e-10.
    """
    if not 1 <= d <= len(sir_kernel.eigen):
        raise ConfigInvalid(f"directions must lie in [1, {len(sir_kernel.eigen)}], got {d}", key="directions")
    out = []
    for k in range(d):
        value = float(sir_kernel.eigen.values[k])
        if value <= EIGEN_GUARD:
            raise EigenvalueTooSmall(k=k + 1, eigenvalue=value)
        projected = sir_kernel.design @ sir_kernel.eigen.vectors[:, k]
        out.append(PseudoResponse(k=k + 1, values=apply_d(projected, sir_kernel.slices) / value,
                                  eigenvalue=value))
    return out
