"""
Replicated Monte Carlo experiments.

Replicate r draws a fresh truth and dataset from seed ``rng.child(r).seed``
and fits every requested estimator on it. Estimator fits use the child
stream ``2 + ESTIMATORS.index(name)`` of the replicate seed, so a
replicate gives the same numbers whichever other estimators run with it.

Functions:
- fit_estimator(name, y, x, z, d, options, rng): One registered estimator on one dataset.
- run_replicate(config, estimators, replicate, seed, options): Metrics for one replicate.
- summarize(config, estimator, reports): Table row for one estimator.
- run_experiment(config, estimators, replicates, rng): The whole table.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from endosir.exceptions import BATCH_ERRORS, ConfigInvalid
from lasso.tuning import TuningStrategy
from numkit.rng import SeededRng
from sir.estimators import DEFAULT_SLICES, SdrEstimate, lasso_sir
from twostage.estimators import lasso_estimate, two_stage_lasso_estimate, two_stage_lasso_sir
from .design import Design, EndogeneityConfig, draw_dataset
from .metrics import MetricsReport, projection_error, selection_auc

logger = logging.getLogger(__name__)

ESTIMATORS = ("lasso", "lsir", "2slasso", "2slsir")
ENDOGENEITY_ESTIMATORS = ("lsir",)

SUMMARY_FIELDS = ("estimator", "model", "n", "p", "q", "z_kind", "replicates",
                  "mean_error", "sd_error", "mean_auc", "sd_auc", "failures")


@dataclass(frozen=True)
class EstimatorOptions:
    slices: int = DEFAULT_SLICES
    tuning: TuningStrategy = field(default_factory=TuningStrategy)
    first_stage: TuningStrategy = field(default_factory=lambda: TuningStrategy(kind="bic"))


@dataclass(frozen=True)
class Summary:
    estimator: str
    model: str
    n: int
    p: int
    q: int
    z_kind: str
    replicates: int
    mean_error: float
    sd_error: float
    mean_auc: float
    sd_auc: float
    failures: int

    def as_row(self) -> Dict[str, object]:
        return asdict(self)


@dataclass(frozen=True)
class ExperimentResult:
    summaries: Tuple[Summary, ...]
    reports: Tuple[MetricsReport, ...]
    errors: Tuple[str, ...]


def check_estimators(config: Design, estimators: Sequence[str]) -> List[str]:
    """Validate estimator names for a design, keeping the requested order."""
    names = list(estimators)
    allowed = ENDOGENEITY_ESTIMATORS if isinstance(config, EndogeneityConfig) else ESTIMATORS
    if not names:
        raise ConfigInvalid("no estimators requested", key="estimators")
    for name in names:
        if name not in allowed:
            raise ConfigInvalid(f"estimator {name!r} is not available for this design", key="estimators")
    if len(set(names)) != len(names):
        raise ConfigInvalid("estimators are listed more than once", key="estimators")
    return names


def fit_estimator(name: str, y, x, z, d: int, options: EstimatorOptions, rng: SeededRng,
                  n_jobs: int = 1) -> SdrEstimate:
    """Fit a registered estimator; ``z`` is ignored by the one-stage ones."""
    if name == "lasso":
        return lasso_estimate(y, x, options.tuning, rng=rng, n_jobs=n_jobs)
    if name == "lsir":
        return lasso_sir(y, x, options.slices, d, options.tuning, rng=rng, n_jobs=n_jobs)
    if name == "2slasso":
        return two_stage_lasso_estimate(y, x, z, options.tuning, options.first_stage, rng=rng, n_jobs=n_jobs)
    if name == "2slsir":
        return two_stage_lasso_sir(y, x, z, options.slices, d, options.tuning, options.first_stage,
                                   rng=rng, n_jobs=n_jobs)
    raise ConfigInvalid(f"unknown estimator {name!r}", key="estimators")


def _failed(name: str, replicate: int, seed: int, message: str) -> MetricsReport:
    return MetricsReport(estimator=name, replicate=replicate, seed=seed, projection_error=math.nan,
                         auc=math.nan, runtime=0.0, error=message)


def run_replicate(config: Design, estimators: Sequence[str], replicate: int, seed: int,
                  options: EstimatorOptions) -> List[MetricsReport]:
    """
    Metrics of every estimator on replicate ``replicate``.

    Failures never propagate: a failed draw marks every estimator as
    failed, a failed fit marks that estimator only.
    """
    rng = SeededRng(seed)
    try:
        data = draw_dataset(config, rng)
    except BATCH_ERRORS as exc:
        return [_failed(name, replicate, seed, f"replicate {replicate}: {exc}") for name in estimators]
    reports = []
    for name in estimators:
        started = time.perf_counter()
        try:
            estimate = fit_estimator(name, data.y, data.x, data.z, config.d, options,
                                     rng.child(2 + ESTIMATORS.index(name)))
            reports.append(MetricsReport(
                estimator=name,
                replicate=replicate,
                seed=seed,
                projection_error=projection_error(estimate.b_hat, data.truth.B),
                auc=selection_auc(estimate.b_hat, data.truth.support),
                runtime=time.perf_counter() - started,
            ))
        except BATCH_ERRORS as exc:
            reports.append(_failed(name, replicate, seed, f"replicate {replicate}, {name}: {exc}"))
    return reports


def _mean_sd(values: np.ndarray) -> Tuple[float, float]:
    if values.size == 0:
        return math.nan, math.nan
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1))


def summarize(config: Design, estimator: str, reports: Sequence[MetricsReport]) -> Summary:
    """Mean and standard deviation over the successful replicates of one estimator."""
    mine = [report for report in reports if report.estimator == estimator]
    ok = [report for report in mine if report.ok]
    mean_error, sd_error = _mean_sd(np.array([report.projection_error for report in ok]))
    mean_auc, sd_auc = _mean_sd(np.array([report.auc for report in ok]))
    return Summary(
        estimator=estimator,
        model=config.label,
        n=config.n,
        p=config.p,
        q=config.q,
        z_kind=config.z_kind,
        replicates=len(mine),
        mean_error=mean_error,
        sd_error=sd_error,
        mean_auc=mean_auc,
        sd_auc=sd_auc,
        failures=len(mine) - len(ok),
    )


def run_experiment(config: Design, estimators: Sequence[str], replicates: int, rng: Optional[SeededRng] = None,
                   *, options: Optional[EstimatorOptions] = None, n_jobs: int = 1) -> ExperimentResult:
    """
    Run ``replicates`` independent replicates of a design.

    Args:
        config (SimulationConfig | EndogeneityConfig): The design.
        estimators (list[str]): Names from ``ESTIMATORS``; the endogeneity
            design only accepts ``lsir``.
        replicates (int): Number of datasets.
        rng (SeededRng): Replicate r uses seed ``rng.child(r).seed``;
            defaults to ``SeededRng(config.seed)``.
        options (EstimatorOptions): Slices and tuning shared by all estimators.
        n_jobs (int): joblib workers over replicates.

    Returns:
        ExperimentResult: One summary per estimator in the requested order,
        all per-replicate reports and the failure messages.
    """
    names = check_estimators(config, estimators)
    if replicates < 1:
        raise ConfigInvalid("replicates must be at least 1", key="replicates")
    rng = rng or SeededRng(config.seed)
    options = options or EstimatorOptions()
    seeds = [rng.child(r).seed for r in range(replicates)]
    batches = Parallel(n_jobs=n_jobs)(
        delayed(run_replicate)(config, names, r, seeds[r], options) for r in range(replicates))
    reports = tuple(report for batch in batches for report in batch)
    errors = tuple(report.error for report in reports if report.error is not None)
    for message in errors:
        logger.warning("%s", message)
    for name in names:
        runtimes = [report.runtime for report in reports if report.estimator == name and report.ok]
        if runtimes:
            logger.info("%s on %s: %.3fs per replicate", name, config.label, float(np.mean(runtimes)))
    summaries = tuple(summarize(config, name, reports) for name in names)
    return ExperimentResult(summaries=summaries, reports=reports, errors=errors)
