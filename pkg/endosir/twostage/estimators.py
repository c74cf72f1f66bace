"""
Two-stage estimators and the plain lasso comparator.

Functions:
- two_stage_lasso_sir(y, x, z, H, d, tuning, first_stage): Lasso SIR on X̂ = ZΓ̂.
- two_stage_lasso(y, x, z, tuning, first_stage): Lasso of y on X̂, coefficient vector.
- two_stage_lasso_estimate(...): Same as above, packed as an SdrEstimate.
- lasso_estimate(y, x, tuning): One-stage lasso of y on X as an SdrEstimate.
"""

import dataclasses
import logging
from typing import Optional

import numpy as np

from lasso.tuning import TuningStrategy, select_penalty
from numkit.rng import SeededRng
from sir.estimators import DEFAULT_SLICES, SdrEstimate, assemble_estimate, center_inputs, lasso_sir
from .first_stage import stage_one

logger = logging.getLogger(__name__)


def two_stage_lasso_sir(y, x, z, H: int = DEFAULT_SLICES, d: int = 1, tuning: Optional[TuningStrategy] = None,
                        first_stage: Optional[TuningStrategy] = None, *, rng: Optional[SeededRng] = None,
                        n_jobs: int = 1) -> SdrEstimate:
    """
    Two-stage lasso SIR.

    Stage one regresses every covariate on the instruments
    (``rng.child(0)``); stage two runs lasso SIR of y on the fitted
    covariates (``rng.child(1)``) with kernel n⁻¹X̂ᵀDX̂.

    Returns:
        SdrEstimate: ``stage`` is ``two-stage`` and ``first_stage`` holds the StageOneFit.

    Raises:
        EigenvalueTooSmall: If λ̂_d of the fitted-covariate kernel is below the guard.
    """
    rng = rng or SeededRng(0)
    fit = stage_one(x, z, first_stage, rng=rng.child(0), n_jobs=n_jobs)
    estimate = lasso_sir(y, fit.fitted, H, d, tuning, rng=rng.child(1), n_jobs=n_jobs, stage="two-stage")
    return dataclasses.replace(estimate, first_stage=fit)


def two_stage_lasso_estimate(y, x, z, tuning: Optional[TuningStrategy] = None,
                             first_stage: Optional[TuningStrategy] = None, *, rng: Optional[SeededRng] = None,
                             n_jobs: int = 1) -> SdrEstimate:
    rng = rng or SeededRng(0)
    fit = stage_one(x, z, first_stage, rng=rng.child(0), n_jobs=n_jobs)
    response, _ = center_inputs(y, fit.fitted)
    report = select_penalty(fit.fitted, response, tuning or TuningStrategy(), rng=rng.child(1), n_jobs=n_jobs)
    # no kernel behind a linear fit, so there is no eigenvalue to report
    return assemble_estimate([report], [np.nan], "two-stage-linear", first_stage=fit)


def two_stage_lasso(y, x, z, tuning: Optional[TuningStrategy] = None, first_stage: Optional[TuningStrategy] = None,
                    *, rng: Optional[SeededRng] = None, n_jobs: int = 1) -> np.ndarray:
    """Two-stage lasso: the coefficient vector of a lasso of centered y on X̂."""
    return two_stage_lasso_estimate(y, x, z, tuning, first_stage, rng=rng, n_jobs=n_jobs).b_hat[:, 0]


def lasso_estimate(y, x, tuning: Optional[TuningStrategy] = None, *, rng: Optional[SeededRng] = None,
                   n_jobs: int = 1) -> SdrEstimate:
    """One-stage lasso of y on X, ignoring any endogeneity."""
    rng = rng or SeededRng(0)
    response, design = center_inputs(y, x)
    report = select_penalty(design, response, tuning or TuningStrategy(), rng=rng.child(1), n_jobs=n_jobs)
    return assemble_estimate([report], [np.nan], "lasso")
