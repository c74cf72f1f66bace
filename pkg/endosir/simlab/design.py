"""
Simulation designs.

``SimulationConfig`` describes the instrumented multiple-index designs:
X = ZΓ + U with sparse Γ, (U, ε) jointly Gaussian with an endogenous
last column, and one of five outcome models

- i:   y = Xᵀβ₁ + ε
- ii:  y = exp(Xᵀβ₁ + ε)
- iii: y = sinh(Xᵀβ₁ + ε)
- iv:  y = (Xᵀβ₂)·exp(Xᵀβ₁ + ε)
- v:   y = exp(Xᵀβ₁ + ε) / (3/2 + Xᵀβ₂ + ε)

``EndogeneityConfig`` is the small p = 4 design used to show that one-stage
lasso SIR is inconsistent once ε correlates with X.
"""

import logging
from dataclasses import dataclass
from typing import ClassVar, Optional, Tuple, Union

import numpy as np
from scipy import linalg as sla

from endosir.exceptions import CannotAchievePD, ConfigInvalid, DimensionMismatch, NonFinite, NotPositiveDefinite
from numkit.linalg import cholesky, gram_schmidt
from numkit.rng import SeededRng

logger = logging.getLogger(__name__)

MODELS = ("i", "ii", "iii", "iv", "v")
Z_KINDS = ("normal", "bernoulli")
AR_COEFFICIENT = 0.2
EXTRA_ENDOGENOUS = 5
EXTRA_COVARIANCE = 0.3
VARIANCE_INFLATION = 0.2
PD_RETRIES = 20
DENOMINATOR_TOL = 1e-8
RESAMPLE_ROUNDS = 100

SCENARIOS = {
    "I": (0.5, 0.5, 0.0, 0.0),
    "II": (0.5, -0.5, 0.0, 0.0),
    "III": (-0.5, -0.5, 0.5, 0.5),
}
LINKS = ("linear", "sine")


@dataclass(frozen=True)
class SimulationConfig:
    model: str = "i"
    n: int = 200
    p: int = 40
    q: int = 40
    s: int = 5
    r: int = 5
    z_kind: str = "normal"
    gamma_range: Tuple[float, float] = (0.75, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigInvalid(f"unknown model {self.model!r}", key="model")
        if self.z_kind not in Z_KINDS:
            raise ConfigInvalid(f"unknown instrument kind {self.z_kind!r}", key="z_kind")
        for key in ("n", "p", "q", "s", "r"):
            if getattr(self, key) < 1:
                raise ConfigInvalid(f"{key} must be positive", key=key)
        if self.s > self.p:
            raise ConfigInvalid("support size s exceeds p", key="s")
        if self.r > self.q:
            raise ConfigInvalid("instruments per covariate r exceeds q", key="r")
        if self.d > self.s:
            raise ConfigInvalid("support size s is smaller than the model dimension", key="s")
        low, high = self.gamma_range
        if not 0 < low <= high:
            raise ConfigInvalid("gamma_range must satisfy 0 < a <= b", key="gamma_range")

    @property
    def d(self) -> int:
        return 2 if self.model in ("iv", "v") else 1

    @property
    def label(self) -> str:
        return self.model


@dataclass(frozen=True)
class EndogeneityConfig:
    scenario: str = "I"
    link: str = "linear"
    n: int = 100
    seed: int = 0

    p: ClassVar[int] = 4
    q: ClassVar[int] = 0
    d: ClassVar[int] = 1
    z_kind: ClassVar[str] = "none"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigInvalid(f"unknown scenario {self.scenario!r}", key="scenario")
        if self.link not in LINKS:
            raise ConfigInvalid(f"unknown link {self.link!r}", key="link")
        if self.n < 1:
            raise ConfigInvalid("n must be positive", key="n")

    @property
    def label(self) -> str:
        return f"endogeneity-{self.scenario}-{self.link}"


Design = Union[SimulationConfig, EndogeneityConfig]


@dataclass(frozen=True)
class GroundTruth:
    """
    True parameters of a design.

    ``Sigma`` is the (p+1)×(p+1) covariance of (U, ε). ``Gamma`` is q×p
    (empty for the endogeneity design).
    """
    B: np.ndarray
    Gamma: np.ndarray
    Sigma: np.ndarray
    support: Tuple[int, ...]

    @property
    def sigma_u(self) -> np.ndarray:
        return self.Sigma[:-1, :-1]

    @property
    def sigma_ue(self) -> np.ndarray:
        return self.Sigma[:-1, -1]


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    x: np.ndarray
    z: Optional[np.ndarray]
    truth: GroundTruth
    resampled: int = 0

    @property
    def n(self) -> int:
        return int(self.y.shape[0])


def _signed_basis(config: SimulationConfig, support: np.ndarray, rng: SeededRng) -> np.ndarray:
    coefficients = np.zeros((config.p, config.d))
    coefficients[support] = rng.signed_uniform(0.5, 1.0, (config.s, config.d))
    if config.d > 1:
        # orthogonalise later columns but keep every column's drawn length
        lengths = np.linalg.norm(coefficients, axis=0)
        coefficients = gram_schmidt(coefficients) * lengths
    return coefficients


def _instrument_matrix(config: SimulationConfig, rng: SeededRng) -> np.ndarray:
    low, high = config.gamma_range
    gamma = np.zeros((config.q, config.p))
    for j in range(config.p):
        rows = rng.choice(config.q, config.r)
        gamma[rows, j] = rng.signed_uniform(low, high, config.r)
    return gamma


def make_truth(config: SimulationConfig, rng: Optional[SeededRng] = None) -> GroundTruth:
    """
    Draw B, Γ and Σ for a simulation design.

    The last column of Σ is −Σ_SS·β₁S on the support, 0.3 at five random
    positions outside it and zero elsewhere. Its last entry is
    Σ_Uεᵀ Σ_U⁻¹ Σ_Uε + U(0, 0.2), which keeps the Schur complement
    positive. Every accepted Σ has passed a Cholesky factorisation; the
    five extra positions are redrawn up to 20 times otherwise.

    Raises:
        CannotAchievePD: If no positive definite Σ was found.
    """
    rng = rng or SeededRng(config.seed)
    p = config.p
    support = np.sort(rng.choice(p, config.s))
    coefficients = _signed_basis(config, support, rng)
    gamma = _instrument_matrix(config, rng)
    sigma_u = sla.toeplitz(AR_COEFFICIENT ** np.arange(p))
    outside = np.setdiff1d(np.arange(p), support)
    inflation = rng.uniform(0.0, VARIANCE_INFLATION)

    for attempt in range(PD_RETRIES):
        sigma_ue = np.zeros(p)
        sigma_ue[support] = -sigma_u[np.ix_(support, support)] @ coefficients[support, 0]
        extra = rng.choice(outside, min(EXTRA_ENDOGENOUS, outside.size))
        sigma_ue[extra] = EXTRA_COVARIANCE
        sigma = np.zeros((p + 1, p + 1))
        sigma[:p, :p] = sigma_u
        sigma[:p, p] = sigma[p, :p] = sigma_ue
        sigma[p, p] = sigma_ue @ sla.solve(sigma_u, sigma_ue, assume_a="pos") + inflation
        try:
            cholesky(sigma)
        except NotPositiveDefinite as exc:
            logger.debug("covariance draw %d not positive definite at pivot %s", attempt, exc.pivot)
            continue
        return GroundTruth(B=coefficients, Gamma=gamma, Sigma=sigma, support=tuple(int(j) for j in support))
    raise CannotAchievePD(f"no positive definite covariance after {PD_RETRIES} draws", p=p)


def instrument_variance(config: SimulationConfig) -> float:
    return 1.0 if config.z_kind == "normal" else 0.25


def endogeneity_angle(config: SimulationConfig, truth: GroundTruth) -> float:
    """
    Angle in radians between Σ_X⁻¹Σ_Xε and col(B).

    Σ_X = ΓᵀΣ_ZΓ + Σ_U and Σ_Xε = Σ_Uε since Z is independent of (U, ε).
    A positive angle means one-stage SIR targets the wrong subspace.
    """
    if truth.Gamma.shape != (config.q, config.p):
        raise DimensionMismatch("truth does not match the configuration", q=config.q, p=config.p)
    sigma_x = instrument_variance(config) * truth.Gamma.T @ truth.Gamma + truth.sigma_u
    direction = sla.solve(sigma_x, truth.sigma_ue, assume_a="pos")
    if not np.any(direction):
        return 0.0
    basis, _ = np.linalg.qr(truth.B)
    inside = basis @ (basis.T @ direction)
    return float(np.arctan2(np.linalg.norm(direction - inside), np.linalg.norm(inside)))


def _draw_instruments(config: SimulationConfig, rng: SeededRng, rows: int) -> np.ndarray:
    if config.z_kind == "normal":
        return rng.normal((rows, config.q))
    return rng.bernoulli(0.5, (rows, config.q))


def _outcome(model: str, x: np.ndarray, coefficients: np.ndarray, noise: np.ndarray) -> np.ndarray:
    index = x @ coefficients[:, 0] + noise
    with np.errstate(over="ignore"):
        if model == "i":
            return index
        if model == "ii":
            return np.exp(index)
        if model == "iii":
            return np.sinh(index)
        second = x @ coefficients[:, 1]
        if model == "iv":
            return second * np.exp(index)
        return np.exp(index) / (1.5 + second + noise)


def _draw_rows(config: SimulationConfig, truth: GroundTruth, rng: SeededRng, rows: int, outcome_noise: bool):
    z = _draw_instruments(config, rng, rows)
    joint = rng.multivariate_normal(truth.Sigma, rows)
    noise = joint[:, -1] if outcome_noise else np.zeros(rows)
    x = z @ truth.Gamma + joint[:, :-1]
    return z, x, noise


def generate(config: SimulationConfig, truth: GroundTruth, rng: Optional[SeededRng] = None, *,
             outcome_noise: bool = True) -> Dataset:
    """
    Draw n observations (y, X, Z) from a simulation design.

    Model v rows whose denominator is within 1e-8 of zero are redrawn and
    counted in ``Dataset.resampled``. All columns are centered.

    Args:
        outcome_noise (bool): If False, ε is set to zero in the outcome.

    Raises:
        DimensionMismatch: If ``truth`` was drawn for other dimensions.
        NonFinite: If the outcome overflows or model v keeps producing
            near-zero denominators.
    """
    if truth.B.shape != (config.p, config.d) or truth.Gamma.shape != (config.q, config.p):
        raise DimensionMismatch("truth does not match the configuration", p=config.p, q=config.q, d=config.d)
    rng = rng or SeededRng(config.seed)
    z, x, noise = _draw_rows(config, truth, rng, config.n, outcome_noise)
    resampled = 0
    if config.model == "v":
        for _ in range(RESAMPLE_ROUNDS):
            bad = np.flatnonzero(np.abs(1.5 + x @ truth.B[:, 1] + noise) < DENOMINATOR_TOL)
            if bad.size == 0:
                break
            resampled += bad.size
            z[bad], x[bad], noise[bad] = _draw_rows(config, truth, rng, bad.size, outcome_noise)
        else:
            raise NonFinite("model v denominator stays near zero", resampled=resampled)
        if resampled:
            logger.warning("resampled %d observations with a near-zero denominator", resampled)
    y = _outcome(config.model, x, truth.B, noise)
    if not np.all(np.isfinite(y)):
        raise NonFinite("simulated outcome is not finite", model=config.model)
    return Dataset(y=y - y.mean(), x=x - x.mean(axis=0), z=z - z.mean(axis=0), truth=truth, resampled=resampled)


def endogeneity_truth(config: EndogeneityConfig) -> GroundTruth:
    coefficients = np.array([[1.0], [1.0], [0.0], [0.0]])
    sigma = np.eye(config.p + 1)
    sigma[:-1, -1] = sigma[-1, :-1] = SCENARIOS[config.scenario]
    return GroundTruth(B=coefficients, Gamma=np.zeros((0, config.p)), Sigma=sigma, support=(0, 1))


def generate_endogeneity(config: EndogeneityConfig, rng: Optional[SeededRng] = None) -> Dataset:
    """
    Draw (y, X) with X ~ N(0, I₄), Var ε = 1 and Cov(X, ε) set by the scenario.

    ε is built as cᵀX + √(1 − ‖c‖²)·e, which stays valid when the joint
    covariance is singular (scenario III). y = Xβ + ε or sin(Xβ + ε).
    """
    rng = rng or SeededRng(config.seed)
    truth = endogeneity_truth(config)
    x = rng.normal((config.n, config.p))
    c = truth.sigma_ue
    noise = x @ c + np.sqrt(max(0.0, 1.0 - float(c @ c))) * rng.normal(config.n)
    index = x @ truth.B[:, 0] + noise
    y = index if config.link == "linear" else np.sin(index)
    return Dataset(y=y - y.mean(), x=x - x.mean(axis=0), z=None, truth=truth)


def draw_dataset(config: Design, rng: SeededRng) -> Dataset:
    """Truth and data for one replicate; the truth is redrawn from ``rng.child(0)``."""
    if isinstance(config, EndogeneityConfig):
        return generate_endogeneity(config, rng.child(1))
    return generate(config, make_truth(config, rng.child(0)), rng.child(1))
