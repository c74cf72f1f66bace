"""
Run configuration for the management commands.

A run is configured from three layers, lowest precedence first:

1. ``settings.ENDOSIR`` defaults,
2. a flat YAML file passed with ``--config``,
3. command-line flags.

Keys are the flag names with dashes replaced by underscores, for example::

    model: ii
    n: 200
    estimators: [lsir, 2slsir]
    replicates: 100
    seed: 7

Every key is validated before any computation; unknown keys and keys
that do not belong to the command raise ``ConfigInvalid`` naming the key.
"""

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml
from django.conf import settings

from lasso.tuning import TuningStrategy
from simlab.design import EndogeneityConfig, SimulationConfig
from simlab.experiment import ESTIMATORS, EstimatorOptions
from twostage.dimension import REGRESSOR_CHOICES
from twostage.stability import ESTIMATORS as STABILITY_ESTIMATORS
from .exceptions import ConfigInvalid, IoError

logger = logging.getLogger(__name__)

SECOND_STAGE_KINDS = ("cv", "bic", "ebic", "fixed")
FIT_ESTIMATORS = ESTIMATORS
DESIGNS = ("table", "endogeneity")

COMMON_KEYS = {"seed", "threads", "out_dir"}
TUNING_KEYS = {"slices", "directions", "tuning", "first_stage_tuning", "folds", "cv_repeats", "ebic_gamma",
               "theory_constant", "penalty", "standardize"}
DATA_KEYS = {"y", "x", "z"}
COMMAND_KEYS = {
    "simulate": COMMON_KEYS | TUNING_KEYS | {"design", "model", "n", "p", "q", "s", "r", "z_kind", "scenario",
                                             "link", "estimators", "replicates"},
    "fit": COMMON_KEYS | TUNING_KEYS | DATA_KEYS | {"estimator"},
    "select_dim": COMMON_KEYS | DATA_KEYS | {"slices", "regressor", "repeats", "dim_folds", "first_stage_tuning",
                                             "ebic_gamma", "theory_constant", "penalty", "standardize"},
    "stability": COMMON_KEYS | DATA_KEYS | {"slices", "directions", "estimator", "first_stage_tuning", "ebic_gamma",
                                            "theory_constant", "penalty", "standardize", "subsamples", "cutoff",
                                            "threshold", "error_bound"},
}

# RunConfig field -> settings.ENDOSIR key
SETTINGS_KEYS = {
    "seed": "SEED",
    "threads": "THREADS",
    "out_dir": "OUT_DIR",
    "slices": "SLICES",
    "directions": "DIRECTIONS",
    "folds": "CV_FOLDS",
    "cv_repeats": "CV_REPEATS",
    "tuning": "SECOND_STAGE_TUNING",
    "first_stage_tuning": "FIRST_STAGE_TUNING",
    "ebic_gamma": "EBIC_GAMMA",
    "theory_constant": "THEORY_CONSTANT",
    "standardize": "STANDARDIZE",
    "repeats": "DIM_REPEATS",
    "dim_folds": "DIM_FOLDS",
    "subsamples": "STABILITY_SUBSAMPLES",
    "cutoff": "STABILITY_CUTOFF",
    "threshold": "STABILITY_THRESHOLD",
    "error_bound": "STABILITY_ERROR_BOUND",
    "replicates": "REPLICATES",
    "s": "SPARSITY",
    "r": "INSTRUMENTS_PER_COVARIATE",
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    seed: int = 0
    threads: int = 1
    out_dir: str = "runs"
    # estimators
    slices: int = 10
    directions: int = 1
    tuning: str = "cv"
    first_stage_tuning: str = "bic"
    folds: int = 10
    cv_repeats: int = 1
    ebic_gamma: float = 0.5
    theory_constant: float = 1.0
    penalty: Optional[float] = None
    standardize: bool = False
    # simulate
    design: str = "table"
    model: str = "i"
    n: int = 200
    p: int = 40
    q: int = 40
    s: int = 5
    r: int = 5
    z_kind: str = "normal"
    scenario: str = "I"
    link: str = "linear"
    estimators: Tuple[str, ...] = ESTIMATORS
    replicates: int = 100
    # data commands
    y: Optional[str] = None
    x: Optional[str] = None
    z: Optional[str] = None
    estimator: Optional[str] = None
    regressor: Optional[str] = None
    repeats: int = 50
    dim_folds: int = 5
    subsamples: int = 100
    cutoff: float = 0.75
    threshold: float = 0.5
    error_bound: float = 1.0

    def __post_init__(self):
        validate(self)

    def second_stage(self) -> TuningStrategy:
        return TuningStrategy(kind=self.tuning, folds=self.folds, repeats=self.cv_repeats, penalty=self.penalty,
                              ebic_gamma=self.ebic_gamma, standardize=self.standardize)

    def first_stage(self) -> TuningStrategy:
        return TuningStrategy(kind=self.first_stage_tuning, penalty=self.penalty, ebic_gamma=self.ebic_gamma,
                              constant=self.theory_constant, standardize=self.standardize)

    def estimator_options(self) -> EstimatorOptions:
        return EstimatorOptions(slices=self.slices, tuning=self.second_stage(), first_stage=self.first_stage())

    def simulation_design(self):
        """The SimulationConfig or EndogeneityConfig described by this run."""
        if self.design == "endogeneity":
            return EndogeneityConfig(scenario=self.scenario, link=self.link, n=self.n, seed=self.seed)
        return SimulationConfig(model=self.model, n=self.n, p=self.p, q=self.q, s=self.s, r=self.r,
                                z_kind=self.z_kind, seed=self.seed)

    def as_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, key) for key in sorted(COMMAND_KEYS[self.command])}


FIELD_TYPES = {field.name: field.type for field in dataclasses.fields(RunConfig)}


def _require(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise ConfigInvalid(message, key=key)


def validate(config: RunConfig) -> None:
    """Range and membership checks; raises ConfigInvalid naming the first bad key."""
    _require(config.command in COMMAND_KEYS, "command", f"unknown command {config.command!r}")
    _require(config.seed >= 0, "seed", "seed must be nonnegative")
    _require(config.threads >= 1 or config.threads == -1, "threads", "threads must be positive or -1")
    _require(config.slices >= 2, "slices", "slices must be at least 2")
    _require(config.directions >= 1, "directions", "directions must be at least 1")
    _require(config.tuning in SECOND_STAGE_KINDS, "tuning", f"unknown tuning {config.tuning!r}")
    _require(config.first_stage_tuning in TuningStrategy.KINDS, "first_stage_tuning",
             f"unknown first-stage tuning {config.first_stage_tuning!r}")
    _require(config.folds >= 2, "folds", "folds must be at least 2")
    _require(config.cv_repeats >= 1, "cv_repeats", "cv_repeats must be at least 1")
    _require(config.ebic_gamma >= 0, "ebic_gamma", "ebic_gamma must be nonnegative")
    _require(config.theory_constant > 0, "theory_constant", "theory_constant must be positive")
    uses_fixed = config.tuning == "fixed" or config.first_stage_tuning == "fixed"
    _require(not uses_fixed or (config.penalty is not None and config.penalty >= 0), "penalty",
             "fixed tuning needs a nonnegative penalty")
    _require(config.design in DESIGNS, "design", f"unknown design {config.design!r}")
    _require(config.replicates >= 1, "replicates", "replicates must be at least 1")
    _require(bool(config.estimators), "estimators", "no estimators requested")
    for name in config.estimators:
        _require(name in ESTIMATORS, "estimators", f"unknown estimator {name!r}")
    _require(config.repeats >= 1, "repeats", "repeats must be at least 1")
    _require(config.dim_folds >= 2, "dim_folds", "dim_folds must be at least 2")
    _require(config.subsamples >= 1, "subsamples", "subsamples must be at least 1")
    _require(0.5 < config.cutoff <= 1.0, "cutoff", "cutoff must lie in (0.5, 1]")
    _require(0.0 < config.threshold <= 1.0, "threshold", "threshold must lie in (0, 1]")
    _require(config.error_bound > 0, "error_bound", "error_bound must be positive")
    if config.command == "simulate":
        if config.design == "endogeneity":
            _require(set(config.estimators) <= {"lsir"}, "estimators", "the endogeneity design only runs lsir")
        config.simulation_design()
        return
    _require(config.y is not None, "y", "a response file is required")
    _require(config.x is not None, "x", "a covariate file is required")
    needs_z = False
    if config.command == "fit":
        _require(config.estimator in FIT_ESTIMATORS, "estimator", f"unknown estimator {config.estimator!r}")
        needs_z = config.estimator in ("2slasso", "2slsir")
    elif config.command == "stability":
        _require(config.estimator in STABILITY_ESTIMATORS, "estimator", f"unknown estimator {config.estimator!r}")
        needs_z = config.estimator != "one-stage"
    elif config.command == "select_dim":
        _require(config.regressor is not None, "regressor", "choose a regressor: Z, X or Xhat")
        _require(config.regressor in REGRESSOR_CHOICES, "regressor", f"unknown regressor {config.regressor!r}")
        needs_z = config.regressor != "X"
    _require(not needs_z or config.z is not None, "z", "an instrument file is required")


def _coerce(key: str, value: Any) -> Any:
    """Convert a YAML or flag value to the field's type."""
    kind = FIELD_TYPES[key]
    try:
        if value is None:
            return None
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if kind in (float, Optional[float]):
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if kind is bool:
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "yes", "no", "1", "0"):
                    raise ValueError(value)
                return value.lower() in ("true", "yes", "1")
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        if key == "estimators":
            items = value.split(",") if isinstance(value, str) else list(value)
            return tuple(str(item).strip() for item in items if str(item).strip())
        if isinstance(value, (list, dict)):
            raise ValueError(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"invalid value {value!r} for {key}", key=key) from exc


def read_config_file(path) -> Dict[str, Any]:
    """
    Load a flat YAML mapping.

    Raises:
        IoError: If the file cannot be read.
        ConfigInvalid: If the content is not a flat mapping of keys to scalars or lists.
    """
    try:
        with open(path, encoding="utf-8") as handle:
            content = yaml.safe_load(handle)
    except OSError as exc:
        raise IoError(f"cannot read config file: {exc}", path=str(path)) from exc
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"config file is not valid YAML: {exc}", key=None, path=str(path)) from exc
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise ConfigInvalid("config file must hold a mapping of keys to values", key=None, path=str(path))
    return {str(key).replace("-", "_"): value for key, value in content.items()}


def _defaults(command: str) -> Dict[str, Any]:
    layer = {}
    overrides = getattr(settings, "ENDOSIR", {})
    for key, setting in SETTINGS_KEYS.items():
        if key in COMMAND_KEYS[command] and setting in overrides:
            layer[key] = overrides[setting]
    if "out_dir" in layer:
        layer["out_dir"] = str(layer["out_dir"])
    if command == "fit":
        layer["estimator"] = "2slsir"
    elif command == "stability":
        layer["estimator"] = "two-stage"
    return layer


def load_run_config(command: str, path=None, flags: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Merge settings, the optional config file and flags into a RunConfig.

    Args:
        command (str): ``simulate``, ``fit``, ``select_dim`` or ``stability``.
        path (str | Path, optional): YAML config file.
        flags (dict, optional): Flag values; None means "not given".

    Raises:
        ConfigInvalid: For unknown keys, keys foreign to the command and bad values.
        IoError: If the config file cannot be read.
    """
    if command not in COMMAND_KEYS:
        raise ConfigInvalid(f"unknown command {command!r}", key="command")
    allowed = COMMAND_KEYS[command]
    merged = _defaults(command)
    layers = [("file", read_config_file(path) if path else {}),
              ("flag", {key: value for key, value in (flags or {}).items() if value is not None})]
    for source, values in layers:
        for key, value in values.items():
            if key not in FIELD_TYPES or key == "command":
                raise ConfigInvalid(f"unknown {source} key {key!r}", key=key)
            if key not in allowed:
                raise ConfigInvalid(f"{key!r} does not apply to {command}", key=key)
            merged[key] = value
    if merged.get("design") == "endogeneity" and "estimators" not in merged:
        merged["estimators"] = ("lsir",)
    values = {key: _coerce(key, value) for key, value in merged.items()}
    config = RunConfig(command=command, **values)
    logger.debug("run configuration: %s", config.as_dict())
    return config


def output_dir(config: RunConfig) -> Path:
    path = Path(config.out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory: {exc}", path=str(path)) from exc
    return path
