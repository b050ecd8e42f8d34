"""Experiment specification module for the TANS toolkit.

An experiment spec is a YAML file with the sections ``signal``, ``cost``,
``sweep``, ``series``, ``analytic``, ``calibration``, ``output`` and
``logging``. See ``config/experiment.example.yaml`` for the documented schema.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, List, Optional

import numpy as np
import yaml

from tans import TansError

SIGNAL_MODELS = ("ar1", "markov_ar1", "binary_hmm")
EXPERIMENT_KINDS = ("rate_distortion", "ar1_roots")
SAMPLER_KINDS = (
    "uniform",
    "uniform_baseline",
    "greedy_ar1",
    "greedy_markov",
    "genie_greedy",
    "dp_source_coding",
    "adp_markov",
    "greedy_acf",
)
# Samplers that need a particular signal model
SAMPLER_MODELS = {
    "greedy_ar1": ("ar1",),
    "greedy_markov": ("markov_ar1",),
    "genie_greedy": ("markov_ar1",),
    "adp_markov": ("markov_ar1",),
    "dp_source_coding": ("binary_hmm",),
}
RECONSTRUCTION_METHODS = ("glp", "clc", "nclc", "fill")
ACF_MODES = ("model", "conditional", "estimated")
MEASURES = ("mse", "hamming")
ESTIMATOR_PRIORS = ("auto", "chain", "literal")


class SpecError(TansError):
    """Exception raised when an experiment spec fails validation."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass
class SignalConfig:
    """Signal model, parameters, trace length and seed list."""

    model: str = "ar1"
    alpha: Optional[float] = None
    alpha0: Optional[float] = None
    alpha1: Optional[float] = None
    p01: Optional[float] = None
    p10: Optional[float] = None
    eps0: Optional[float] = None
    eps1: Optional[float] = None
    length: int = 100_000
    seeds: List[int] = field(default_factory=lambda: list(range(20)))

    def __post_init__(self) -> None:
        """Validate configuration values."""
        if self.model not in SIGNAL_MODELS:
            raise ValueError(f"model must be one of {SIGNAL_MODELS}")
        if self.length < 1:
            raise ValueError("length must be at least 1")
        if not self.seeds:
            raise ValueError("seeds must list at least one seed")
        self.seeds = [int(s) for s in self.seeds]
        # Builds the parameter object, which validates the ranges
        self.params()

    def params(self):
        """Return the generator parameter object for this model."""
        from tans.signals import Ar1Params, BinaryHmmParams, MarkovAr1Params

        try:
            if self.model == "ar1":
                return Ar1Params(alpha=float(self.alpha))
            if self.model == "markov_ar1":
                return MarkovAr1Params(
                    alpha0=float(self.alpha0),
                    alpha1=float(self.alpha1),
                    p01=float(self.p01),
                    p10=float(self.p10),
                )
            return BinaryHmmParams(eps0=float(self.eps0), eps1=float(self.eps1))
        except TypeError:
            raise ValueError(f"missing parameters for model '{self.model}'")


@dataclass
class CostConfig:
    """Cost parameters shared by every series (rho comes from the sweep)."""

    sigma_max_sq: float = 1.0
    t_up: int = 200

    def __post_init__(self) -> None:
        """Validate configuration values."""
        if self.sigma_max_sq < 1.0:
            raise ValueError("sigma_max_sq must be at least 1 for unit-power models")
        if self.t_up < 2:
            raise ValueError("t_up must be at least 2")


@dataclass
class SweepConfig:
    """Rate-award values for TANS series and target rates for baselines."""

    rho: List[float] = field(default_factory=list)
    rho_min: Optional[float] = None
    rho_max: Optional[float] = None
    rho_num: int = 16
    rate: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        """Expand a log-spaced rho range and validate values."""
        if not self.rho and self.rho_min is not None and self.rho_max is not None:
            if not 0 < self.rho_min < self.rho_max:
                raise ValueError("rho range must satisfy 0 < rho_min < rho_max")
            if self.rho_num < 2:
                raise ValueError("rho_num must be at least 2")
            grid = np.logspace(np.log10(self.rho_min), np.log10(self.rho_max), self.rho_num)
            self.rho = [float(v) for v in grid]
        self.rho = [float(v) for v in self.rho]
        self.rate = [float(v) for v in self.rate]
        if any(v <= 0 for v in self.rho):
            raise ValueError("rho values must be positive")
        if any(not 0 < v <= 1 for v in self.rate):
            raise ValueError("rate values must lie in (0, 1]")


@dataclass
class SamplerConfig:
    """Sampling function selection and its parameters."""

    kind: str = "greedy_markov"
    period: int = 1
    order: int = 10
    cost_model: str = "approx"
    prior: str = "auto"
    beta: float = 0.5
    gamma: float = 0.1
    quality_sign: str = "flipped"
    quality_nodes: int = 0
    dp_t_max: int = 20
    dp_tol: float = 1e-10
    dp_max_iters: int = 1_000_000
    allow_large_increments: bool = False
    acf_estimator: str = "window"
    window: int = 200
    max_lag: int = 50
    step: float = 0.05

    def __post_init__(self) -> None:
        """Validate configuration values."""
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"kind must be one of {SAMPLER_KINDS}")
        if self.period < 1:
            raise ValueError("period must be a positive integer")
        if self.order < 1:
            raise ValueError("order must be a positive integer")
        if self.kind in ("greedy_markov", "adp_markov") and self.order < 2:
            raise ValueError("order must be at least 2 for state estimation")
        if self.cost_model not in ("approx", "exact"):
            raise ValueError("cost_model must be 'approx' or 'exact'")
        if self.prior not in ESTIMATOR_PRIORS:
            raise ValueError(f"prior must be one of {ESTIMATOR_PRIORS}")
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.quality_sign not in ("flipped", "literal"):
            raise ValueError("quality_sign must be 'flipped' or 'literal'")
        if self.quality_nodes < 0:
            raise ValueError("quality_nodes must be non-negative")
        if self.dp_t_max < 1 or self.dp_tol <= 0 or self.dp_max_iters < 1:
            raise ValueError("dp_t_max, dp_tol and dp_max_iters must be positive")
        if self.acf_estimator not in ("window", "gradient"):
            raise ValueError("acf_estimator must be 'window' or 'gradient'")
        if self.window < 2 or self.max_lag < 1:
            raise ValueError("window must be at least 2 and max_lag at least 1")
        if not 0 < self.step <= 1:
            raise ValueError("step must lie in (0, 1]")


@dataclass
class ReconstructionConfig:
    """Reconstruction method and distortion accounting."""

    method: str = "glp"
    order: int = 1
    acf_mode: str = "model"
    estimator_order: int = 10
    window: int = 200
    max_lag: int = 50
    measure: str = "mse"
    exclude_sample_times: bool = False

    def __post_init__(self) -> None:
        """Validate configuration values."""
        if self.method not in RECONSTRUCTION_METHODS:
            raise ValueError(f"method must be one of {RECONSTRUCTION_METHODS}")
        if self.acf_mode not in ACF_MODES:
            raise ValueError(f"acf_mode must be one of {ACF_MODES}")
        if self.measure not in MEASURES:
            raise ValueError(f"measure must be one of {MEASURES}")
        if self.order < 1:
            raise ValueError("order must be a positive integer")
        if self.estimator_order < 2:
            raise ValueError("estimator_order must be at least 2")
        if self.window < 2 or self.max_lag < 1:
            raise ValueError("window must be at least 2 and max_lag at least 1")

    @property
    def label(self) -> str:
        """Short identifier used in result files."""
        if self.method == "glp":
            return f"glp(m={self.order},{self.acf_mode})"
        return self.method


@dataclass
class SeriesConfig:
    """One curve of an experiment: a sampler plus a reconstruction."""

    label: str = ""
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    reconstruction: ReconstructionConfig = field(default_factory=ReconstructionConfig)

    def __post_init__(self) -> None:
        """Default the label to the sampler and reconstruction ids."""
        if not self.label:
            self.label = f"{self.sampler.kind}+{self.reconstruction.label}"


@dataclass
class AnalyticConfig:
    """Estimator error probabilities for analytical bound curves."""

    pe: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        """Validate configuration values."""
        self.pe = [float(v) for v in self.pe]
        if any(not 0 <= v <= 1 for v in self.pe):
            raise ValueError("pe values must lie in [0, 1]")


@dataclass
class CalibrationConfig:
    """Grid of ADP (beta, gamma) pairs searched per rate-award value.

    Both axes exclude 0, where ADP reduces to the greedy sampler. The grid is
    scored on ``seeds``, which must not overlap the signal seeds; left empty,
    they continue after the largest signal seed.
    """

    beta: List[float] = field(default_factory=list)
    gamma: List[float] = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        """Validate configuration values."""
        self.beta = [float(v) for v in self.beta]
        self.gamma = [float(v) for v in self.gamma]
        self.seeds = [int(s) for s in self.seeds]
        if any(not 0 < v < 1 for v in self.beta):
            raise ValueError("beta values must lie in (0, 1)")
        if any(not v > 0 for v in self.gamma):
            raise ValueError("gamma values must be positive")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")

    @property
    def enabled(self) -> bool:
        """True when both axes of the grid are populated."""
        return bool(self.beta) and bool(self.gamma)


@dataclass
class OutputConfig:
    """Output location for result files."""

    directory: Path = field(default_factory=lambda: Path("results"))

    def __post_init__(self) -> None:
        """Convert string path to Path object if necessary."""
        if isinstance(self.directory, str):
            self.directory = Path(self.directory)


@dataclass
class LoggingConfig:
    """Logging configuration settings."""

    level: str = "INFO"
    file: Optional[Path] = None
    max_size_mb: int = 10
    backup_count: int = 5

    def __post_init__(self) -> None:
        """Validate and convert configuration values."""
        if isinstance(self.file, str):
            self.file = Path(self.file)
        valid_levels = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
        if self.level.upper() not in valid_levels:
            raise ValueError(f"level must be one of {valid_levels}")
        self.level = self.level.upper()


@dataclass
class ExperimentSpec:
    """Main experiment container."""

    name: str = "experiment"
    experiment: str = "rate_distortion"
    signal: SignalConfig = field(default_factory=SignalConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    series: List[SeriesConfig] = field(default_factory=list)
    analytic: AnalyticConfig = field(default_factory=AnalyticConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    jobs: int = 0
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        """Create an ExperimentSpec from a dictionary.

        Raises:
            SpecError: With the dotted path of the first invalid field.
        """
        if not isinstance(data, dict):
            raise SpecError("", "experiment spec must be a mapping")

        signal = _build("signal", SignalConfig, data.get("signal", {}))
        cost = _build("cost", CostConfig, data.get("cost", {}))
        sweep = _build("sweep", SweepConfig, data.get("sweep", {}))
        analytic = _build("analytic", AnalyticConfig, data.get("analytic", {}))
        calibration = _build("calibration", CalibrationConfig, data.get("calibration", {}))
        output = _build("output", OutputConfig, data.get("output", {}))
        logging_cfg = _build("logging", LoggingConfig, data.get("logging", {}))

        series = []
        for i, entry in enumerate(data.get("series", []) or []):
            path = f"series[{i}]"
            if not isinstance(entry, dict):
                raise SpecError(path, "must be a mapping")
            sampler = _build(f"{path}.sampler", SamplerConfig, entry.get("sampler", {}))
            recon = _build(
                f"{path}.reconstruction",
                ReconstructionConfig,
                entry.get("reconstruction", {}),
            )
            allowed = SAMPLER_MODELS.get(sampler.kind)
            if allowed is not None and signal.model not in allowed:
                raise SpecError(
                    f"{path}.sampler.kind",
                    f"sampler '{sampler.kind}' requires signal model {allowed}, "
                    f"got '{signal.model}'",
                )
            if recon.measure == "hamming" and signal.model != "binary_hmm":
                raise SpecError(
                    f"{path}.reconstruction.measure",
                    "hamming distortion requires a binary signal",
                )
            series.append(
                SeriesConfig(label=entry.get("label", ""), sampler=sampler, reconstruction=recon)
            )

        experiment = data.get("experiment", "rate_distortion")
        if experiment not in EXPERIMENT_KINDS:
            raise SpecError("experiment", f"must be one of {EXPERIMENT_KINDS}")
        if experiment == "ar1_roots":
            if signal.model != "ar1":
                raise SpecError("signal.model", "ar1_roots experiments require model 'ar1'")
            if not sweep.rho:
                raise SpecError("sweep.rho", "ar1_roots experiments need rho values")
        elif not series and not analytic.pe:
            raise SpecError("series", "at least one series or analytic curve is required")

        if calibration.enabled:
            if not calibration.seeds:
                top = max(signal.seeds) + 1
                calibration.seeds = list(range(top, top + len(signal.seeds)))
            elif set(calibration.seeds) & set(signal.seeds):
                raise SpecError("calibration.seeds", "must not overlap signal.seeds")

        jobs = data.get("jobs", 0)
        if not isinstance(jobs, int) or jobs < 0:
            raise SpecError("jobs", "must be a non-negative integer (0 uses every core)")

        return cls(
            name=str(data.get("name", "experiment")),
            experiment=experiment,
            signal=signal,
            cost=cost,
            sweep=sweep,
            series=series,
            analytic=analytic,
            calibration=calibration,
            output=output,
            jobs=jobs,
            logging=logging_cfg,
        )

    def to_dict(self) -> dict:
        """Convert the spec to a plain dictionary (the manifest echo)."""
        data = asdict(self)
        data["output"]["directory"] = str(self.output.directory)
        data["logging"]["file"] = str(self.logging.file) if self.logging.file else None
        return data


def _build(path: str, section_cls: Any, values: Any) -> Any:
    """Instantiate one config section, tagging failures with its path."""
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise SpecError(path, "must be a mapping")
    try:
        return section_cls(**values)
    except TypeError as e:
        raise SpecError(path, f"unknown or malformed field ({e})")
    except ValueError as e:
        message = str(e)
        # Messages start with the offending field name
        field_name = message.split(" ", 1)[0]
        if field_name in getattr(section_cls, "__dataclass_fields__", {}):
            raise SpecError(f"{path}.{field_name}", message)
        raise SpecError(path, message)


def load_spec(spec_path: Path) -> ExperimentSpec:
    """Load an experiment spec from a YAML file.

    Args:
        spec_path: Path to the spec file.

    Returns:
        Validated ExperimentSpec.

    Raises:
        SpecError: If the file is missing, empty or invalid.
    """
    spec_path = Path(spec_path)
    if not spec_path.exists():
        raise SpecError("", f"spec file not found: {spec_path}")

    with open(spec_path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise SpecError("", f"cannot parse {spec_path}: {e}")

    if data is None:
        raise SpecError("", f"spec file is empty: {spec_path}")

    return ExperimentSpec.from_dict(data)


def save_spec(spec: ExperimentSpec, spec_path: Path) -> None:
    """Save an experiment spec to a YAML file.

    Args:
        spec: Spec to save.
        spec_path: Destination path.
    """
    spec_path = Path(spec_path)
    spec_path.parent.mkdir(parents=True, exist_ok=True)

    with open(spec_path, "w", encoding="utf-8") as f:
        yaml.safe_dump(spec.to_dict(), f, default_flow_style=False, sort_keys=False)
