"""Experiment orchestration for the TANS toolkit.

This module folds sampling functions over generated traces, reconstructs the
traces, and aggregates rate-distortion points, analytical bound curves and
AR(1) root sweeps for an experiment spec.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from math import floor
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from tans import TansError, __version__
from tans.config import ExperimentSpec, ReconstructionConfig, SamplerConfig, SeriesConfig
from tans.dp import sc_reconstruct
from tans.greedy import (
    CostParams,
    RdBounds,
    RootHypothesisError,
    ar1_greedy_increment,
    ar1_root,
    greedy_rd_bounds,
)
from tans.logger import get_logger
from tans.prediction import AutocorrFn, SamplingState
from tans.reconstruct import (
    Reconstruction,
    SampleSet,
    decode_regimes,
    distortion,
    pointwise_distortion,
    reconstruct_clc,
    reconstruct_glp,
    reconstruct_nclc,
)
from tans.samplers import NO_DECISION, SamplingFunction, build_sampler
from tans.signals import (
    BIT_GENERATOR,
    Ar1Params,
    MarkovAr1Params,
    SignalParams,
    SignalTrace,
    generate,
)

logger = get_logger(__name__)

# Samplers whose increments follow a regime estimate of the sampling state
ESTIMATING_SAMPLERS = ("greedy_markov", "adp_markov")


class HarnessError(TansError):
    """Exception raised for invalid experiment runs."""

    pass


def run_sampler(trace: SignalTrace, sampler: SamplingFunction) -> SampleSet:
    """Fold a sampling function over a trace.

    The first ``sampler.order`` indices are taken as initialization samples;
    afterwards t_{i+1} = t_i + f(S_{t_i}) until the trace ends.

    Raises:
        HarnessError: If the trace is too short or lacks the hidden states a
            genie-aided sampler needs.
    """
    m = sampler.order
    if len(trace) <= m + sampler.max_increment:
        raise HarnessError(
            f"trace length {len(trace)} must exceed order {m} plus the largest "
            f"increment {sampler.max_increment}"
        )
    if sampler.uses_hidden and trace.hidden_states.size == 0:
        raise HarnessError(f"sampler '{sampler.kind}' needs a trace with hidden states")

    values = trace.values
    times = list(range(m))
    taken = values[:m].tolist()
    regimes = [NO_DECISION] * m
    p_errors = [float("nan")] * m
    increments: List[int] = []

    sampler.reset()
    state = SamplingState(tuple(times), tuple(taken))
    t = m - 1
    while True:
        hidden = int(trace.hidden_states[t]) if sampler.uses_hidden else None
        step = sampler.increment(state, hidden)
        if not 1 <= step <= sampler.max_increment:
            raise HarnessError(f"sampler '{sampler.kind}' returned invalid increment {step}")
        regimes[-1] = sampler.last_regime
        p_errors[-1] = sampler.last_p_error

        t += step
        if t >= len(trace):
            break
        x = float(values[t])
        times.append(t)
        taken.append(x)
        regimes.append(NO_DECISION)
        p_errors.append(float("nan"))
        increments.append(step)
        state = state.advance(t, x)

    return SampleSet(
        times=np.asarray(times, dtype=np.int64),
        values=np.asarray(taken),
        length=len(trace),
        init_count=m,
        increments=np.asarray(increments, dtype=np.int64),
        regimes=np.asarray(regimes, dtype=np.int64),
        p_errors=np.asarray(p_errors),
        origin={"sampler": sampler.describe(), "seed": trace.seed, "model": trace.model},
    )


def replay_times(
    samples: SampleSet,
    sampler: SamplingFunction,
    hidden: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Recompute sampling times from the values, the sampler and the init times.

    ``hidden`` gives the regime known at each sample for genie-aided samplers
    (the recorded ``samples.regimes`` by default).
    """
    m = samples.init_count
    if sampler.uses_hidden and hidden is None:
        hidden = samples.regimes
    values = samples.values.tolist()
    times = samples.times[:m].tolist()

    sampler.reset()
    state = SamplingState(tuple(times), tuple(values[:m]))
    for k in range(m, samples.n):
        known = int(hidden[k - 1]) if sampler.uses_hidden else None
        t = times[-1] + sampler.increment(state, known)
        times.append(t)
        state = state.advance(t, values[k])
    return np.asarray(times, dtype=np.int64)


def round_half_up(x: Fraction) -> int:
    return floor(x + Fraction(1, 2))


def run_uniform_baseline(trace: SignalTrace, rate: float) -> SampleSet:
    """Modified uniform sampling at an arbitrary average rate.

    One initialization sample sits at t = 0; the i-th following sample is at
    round_half_up(i / rate), so the long-run rate is exactly ``rate``.
    """
    if not 0.0 < rate <= 1.0:
        raise HarnessError(f"rate must lie in (0, 1], got {rate}")
    period = 1 / Fraction(rate).limit_denominator(1_000_000)

    times = [0]
    i = 1
    while True:
        t = round_half_up(i * period)
        if t >= len(trace):
            break
        if t > times[-1]:
            times.append(t)
        i += 1

    times_arr = np.asarray(times, dtype=np.int64)
    return SampleSet(
        times=times_arr,
        values=trace.values[times_arr],
        length=len(trace),
        init_count=1,
        increments=np.diff(times_arr),
        origin={"sampler": f"uniform_baseline(R={rate})", "seed": trace.seed, "model": trace.model},
    )


def regime_truth(trace: SignalTrace, samples: SampleSet) -> np.ndarray:
    """True regime class of the last interval ending at each sample.

    Class a if the hidden chain stayed in a over the interval, 2 if it
    switched; 2 for the first sample.
    """
    truth = np.full(samples.n, NO_DECISION, dtype=np.int64)
    for k in range(1, samples.n):
        segment = trace.hidden_states[samples.times[k - 1] : samples.times[k]]
        if segment.size and np.all(segment == segment[0]):
            truth[k] = int(segment[0])
    return truth


def model_autocorr(params: SignalParams) -> AutocorrFn:
    """Stationary autocorrelation model of a signal."""
    if isinstance(params, Ar1Params):
        return AutocorrFn.ar1(params.alpha)
    if isinstance(params, MarkovAr1Params):
        return AutocorrFn.mixture(params.alphas, params.stationary)
    raise HarnessError("GLP reconstruction needs a real-valued signal model")


def reconstruct_samples(
    samples: SampleSet,
    recon: ReconstructionConfig,
    params: SignalParams,
    sampler: Optional[SamplerConfig] = None,
) -> Reconstruction:
    """Reconstruct a sample set with the configured method.

    Conditional GLP decodes regimes with the sampler's own estimator (order
    and prior) when the sampler estimates regimes, so the decoder replays the
    sampler's decisions. The genie sampler's true regimes are used as is.
    """
    if recon.method == "clc":
        return reconstruct_clc(samples)
    if recon.method == "nclc":
        return reconstruct_nclc(samples)
    if recon.method == "fill":
        return sc_reconstruct(samples)

    if recon.acf_mode == "estimated":
        return reconstruct_glp(
            samples, recon.order, acf_mode="estimated", window=recon.window, max_lag=recon.max_lag
        )
    if recon.acf_mode == "conditional" and isinstance(params, MarkovAr1Params):
        if sampler is not None and sampler.kind == "genie_greedy":
            regimes = samples.regimes
        elif sampler is not None and sampler.kind in ESTIMATING_SAMPLERS:
            regimes = decode_regimes(samples, params, sampler.order, sampler.prior)
        else:
            regimes = decode_regimes(samples, params, recon.estimator_order)
        return reconstruct_glp(
            samples,
            recon.order,
            acf=AutocorrFn.conditional(params.alphas),
            acf_mode="conditional",
            regimes=regimes,
        )
    return reconstruct_glp(samples, recon.order, acf=model_autocorr(params))


@dataclass
class RunMetrics:
    """Rate, distortion and realized cost of one run over one trace."""

    rate: float
    distortion: float
    cost: float
    p_error_mean: float = float("nan")
    p_error_min: float = float("nan")
    p_error_max: float = float("nan")
    misclassification: float = float("nan")


def evaluate_run(
    trace: SignalTrace,
    samples: SampleSet,
    recon: Reconstruction,
    measure: str = "mse",
    exclude_sample_times: bool = False,
    rho: Optional[float] = None,
    score_regimes: bool = False,
) -> RunMetrics:
    """Score a run over the indices after the last initialization sample.

    The realized cost is the sum of the interior errors plus rho/T for every
    increment, per time index. With ``score_regimes`` and a trace that carries
    its hidden chain, the regime estimate behind each decision is scored
    against the true regime class of the interval it closes.
    """
    start = samples.last_init_time + 1
    dist = distortion(trace, recon, measure, exclude_sample_times, start)

    cost = float("nan")
    if rho is not None:
        errors = pointwise_distortion(trace, recon, measure)
        interior = np.zeros(errors.size, dtype=bool)
        interior[start:] = True
        interior[samples.times] = False
        total = errors[interior].sum() + rho * np.sum(1.0 / samples.increments)
        cost = float(total / samples.horizon)

    decided = samples.p_errors[np.isfinite(samples.p_errors)]
    metrics = RunMetrics(rate=samples.rate, distortion=dist, cost=cost)
    if decided.size:
        metrics.p_error_mean = float(np.mean(decided))
        metrics.p_error_min = float(np.min(decided))
        metrics.p_error_max = float(np.max(decided))
        if score_regimes and trace.hidden_states.size and samples.regimes.size:
            mask = np.isfinite(samples.p_errors)
            truth = regime_truth(trace, samples)
            metrics.misclassification = float(np.mean(samples.regimes[mask] != truth[mask]))
    return metrics


def cost_params(spec: ExperimentSpec, rho: float) -> CostParams:
    return CostParams(rho=rho, sigma_max_sq=spec.cost.sigma_max_sq, t_up=spec.cost.t_up)


def run_series(
    spec: ExperimentSpec,
    series: SeriesConfig,
    value: float,
    seed: int,
) -> RunMetrics:
    """Generate one trace and score one series at one sweep value."""
    params = spec.signal.params()
    trace = generate(params, spec.signal.length, seed)

    if series.sampler.kind == "uniform_baseline":
        samples = run_uniform_baseline(trace, value)
        rho = None
    else:
        rho = value
        sampler = build_sampler(series.sampler, params, cost_params(spec, rho))
        samples = run_sampler(trace, sampler)

    recon = reconstruct_samples(samples, series.reconstruction, params, series.sampler)
    return evaluate_run(
        trace,
        samples,
        recon,
        series.reconstruction.measure,
        series.reconstruction.exclude_sample_times,
        rho,
        score_regimes=series.sampler.kind in ESTIMATING_SAMPLERS,
    )


@dataclass
class RateDistortionPoint:
    """Seed-averaged rate-distortion point of one series at one sweep value."""

    rho: float
    rate: float
    distortion: float
    stderr_rate: float
    stderr_distortion: float
    sampler: str
    recon: str
    seeds: int
    cost: float = float("nan")
    stderr_cost: float = float("nan")
    label: str = ""
    extra: Dict[str, Any] = field(default_factory=dict)


def _stderr(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(values.size))


def aggregate(
    series: SeriesConfig,
    value: float,
    runs: Sequence[RunMetrics],
) -> RateDistortionPoint:
    """Average per-seed metrics; baselines store NaN in ``rho``."""
    rates = np.asarray([r.rate for r in runs])
    dists = np.asarray([r.distortion for r in runs])
    costs = np.asarray([r.cost for r in runs])
    baseline = series.sampler.kind == "uniform_baseline"

    extra: Dict[str, Any] = {}
    if baseline:
        extra["target_rate"] = value
    p_errors = [r for r in runs if np.isfinite(r.p_error_mean)]
    if p_errors:
        extra["p_error_mean"] = float(np.mean([r.p_error_mean for r in p_errors]))
        extra["p_error_min"] = float(min(r.p_error_min for r in p_errors))
        extra["p_error_max"] = float(max(r.p_error_max for r in p_errors))
    scored = [r.misclassification for r in runs if np.isfinite(r.misclassification)]
    if scored:
        extra["misclassification"] = float(np.mean(scored))

    return RateDistortionPoint(
        rho=float("nan") if baseline else float(value),
        rate=float(rates.mean()),
        distortion=float(dists.mean()),
        stderr_rate=_stderr(rates),
        stderr_distortion=_stderr(dists),
        sampler=series.sampler.kind,
        recon=series.reconstruction.label,
        seeds=len(runs),
        cost=float(costs.mean()) if np.all(np.isfinite(costs)) else float("nan"),
        stderr_cost=_stderr(costs) if np.all(np.isfinite(costs)) else float("nan"),
        label=series.label,
        extra=extra,
    )


def rd_point(spec: ExperimentSpec, series: SeriesConfig, value: float) -> RateDistortionPoint:
    """Seed-averaged point of one series at one rho (or target rate), run serially."""
    runs = [run_series(spec, series, value, seed) for seed in spec.signal.seeds]
    return aggregate(series, value, runs)


@dataclass
class AnalyticCurve:
    """Collapsed bounds (pe_low = pe_up = pe) across a rho sweep."""

    pe: float
    rhos: List[float]
    bounds: List[RdBounds]

    def points(self) -> List[Tuple[float, float, float]]:
        """(rho, rate, distortion) triples."""
        return [(rho, b.rate_low, b.dist_low) for rho, b in zip(self.rhos, self.bounds)]


def analytic_curves(
    params: MarkovAr1Params,
    rhos: Sequence[float],
    pes: Sequence[float],
    sigma_max_sq: float = 1.0,
    t_up: int = 200,
) -> List[AnalyticCurve]:
    """Analytical rate-distortion curves, one per error probability."""
    curves = []
    for pe in pes:
        bounds = [
            greedy_rd_bounds(params, CostParams(rho=rho, sigma_max_sq=sigma_max_sq, t_up=t_up), pe, pe)
            for rho in rhos
        ]
        curves.append(AnalyticCurve(pe=float(pe), rhos=[float(r) for r in rhos], bounds=bounds))
    return curves


@dataclass
class RootRow:
    rho: float
    t_star: int
    t_root: float


def ar1_root_sweep(
    alpha: float,
    rhos: Sequence[float],
    sigma_max_sq: float = 1.0,
    t_up: int = 200,
) -> List[RootRow]:
    """Brute-force greedy increments next to the root of the difference equation.

    ``t_root`` is NaN where the root hypothesis fails.
    """
    rows = []
    for rho in rhos:
        t_star = ar1_greedy_increment(alpha, CostParams(rho=rho, sigma_max_sq=sigma_max_sq, t_up=t_up))
        try:
            t_root = ar1_root(alpha, rho)
        except RootHypothesisError:
            t_root = float("nan")
        rows.append(RootRow(rho=float(rho), t_star=t_star, t_root=t_root))
    return rows


@dataclass
class CalibrationChoice:
    """ADP parameters chosen for one series at one rho."""

    label: str
    rho: float
    beta: float
    gamma: float
    cost: float


@dataclass
class AdpComparison:
    """Calibrated ADP cost against the greedy cost at one rho, same traces."""

    label: str
    rho: float
    adp_cost: float
    greedy_cost: float
    slack: float

    @property
    def holds(self) -> bool:
        return self.adp_cost <= self.greedy_cost + self.slack


def compare_adp_to_greedy(points: Sequence[RateDistortionPoint]) -> List[AdpComparison]:
    """Pair every ADP point with the greedy point at the same rho.

    The slack is three standard errors of the cost difference. Pairs where
    ADP exceeds it are logged as warnings.
    """
    greedy = {p.rho: p for p in points if p.sampler == "greedy_markov"}
    comparisons = []
    for point in points:
        if point.sampler != "adp_markov" or point.rho not in greedy:
            continue
        ref = greedy[point.rho]
        slack = 3.0 * float(np.hypot(point.stderr_cost, ref.stderr_cost))
        comparison = AdpComparison(
            label=point.label, rho=point.rho, adp_cost=point.cost, greedy_cost=ref.cost, slack=slack
        )
        if not comparison.holds:
            logger.warning(
                f"{point.label} @ rho={point.rho:g}: ADP cost {point.cost:.5f} exceeds "
                f"greedy cost {ref.cost:.5f} by more than {slack:.5f}"
            )
        comparisons.append(comparison)
    return comparisons


@dataclass
class ExperimentResult:
    """Everything an experiment produces."""

    name: str
    points: List[RateDistortionPoint] = field(default_factory=list)
    curves: List[AnalyticCurve] = field(default_factory=list)
    roots: List[RootRow] = field(default_factory=list)
    calibration: List[CalibrationChoice] = field(default_factory=list)
    comparisons: List[AdpComparison] = field(default_factory=list)


def _run_task(task: Tuple[ExperimentSpec, SeriesConfig, float, int]) -> RunMetrics:
    spec, series, value, seed = task
    return run_series(spec, series, value, seed)


def _with_adp(series: SeriesConfig, beta: float, gamma: float) -> SeriesConfig:
    sampler: SamplerConfig = replace(series.sampler, beta=beta, gamma=gamma)
    return replace(series, sampler=sampler)


class ExperimentRunner:
    """Runs every series of an experiment spec, optionally in parallel.

    Work units are (series, sweep value, seed) triples; results are gathered
    in submission order, so the output does not depend on ``jobs``.
    """

    def __init__(self, spec: ExperimentSpec, jobs: Optional[int] = None):
        """Initialize the runner.

        Args:
            spec: Validated experiment spec.
            jobs: Worker processes; defaults to the spec's value, where 0
                means one per available core.
        """
        self.spec = spec
        requested = spec.jobs if jobs is None else jobs
        self.jobs = requested if requested > 0 else (os.cpu_count() or 1)

    def _map(self, tasks: List[Tuple[ExperimentSpec, SeriesConfig, float, int]]) -> List[RunMetrics]:
        if self.jobs <= 1 or len(tasks) <= 1:
            return [_run_task(task) for task in tasks]
        with ProcessPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(_run_task, tasks))

    def _sweep_values(self, series: SeriesConfig) -> List[float]:
        values = self.spec.sweep.rate if series.sampler.kind == "uniform_baseline" else self.spec.sweep.rho
        if not values:
            raise HarnessError(
                f"series '{series.label}' has no sweep values "
                f"({'sweep.rate' if series.sampler.kind == 'uniform_baseline' else 'sweep.rho'})"
            )
        return list(values)

    def calibrate_adp(self, series: SeriesConfig, rho: float) -> CalibrationChoice:
        """Grid-search (beta, gamma) for the lowest mean realized cost.

        The grid is scored on the calibration seeds, never on the seeds the
        points are reported on. Ties keep the earliest grid point
        (beta-major order).
        """
        grid = [(b, g) for b in self.spec.calibration.beta for g in self.spec.calibration.gamma]
        seeds = self.spec.calibration.seeds
        tasks = [
            (self.spec, _with_adp(series, b, g), rho, seed) for b, g in grid for seed in seeds
        ]
        results = self._map(tasks)

        best: Optional[CalibrationChoice] = None
        for k, (b, g) in enumerate(grid):
            runs = results[k * len(seeds) : (k + 1) * len(seeds)]
            cost = float(np.mean([r.cost for r in runs]))
            if best is None or cost < best.cost:
                best = CalibrationChoice(label=series.label, rho=rho, beta=b, gamma=g, cost=cost)

        logger.info(
            f"Calibrated {series.label} @ rho={rho:g}: beta={best.beta}, "
            f"gamma={best.gamma}, cost={best.cost:.5f}"
        )
        return best

    def run(self) -> ExperimentResult:
        """Run the experiment and return its results."""
        spec = self.spec
        result = ExperimentResult(name=spec.name)
        logger.info(f"Running experiment '{spec.name}' with {self.jobs} job(s)")

        if spec.experiment == "ar1_roots":
            result.roots = ar1_root_sweep(
                spec.signal.alpha, spec.sweep.rho, spec.cost.sigma_max_sq, spec.cost.t_up
            )
            return result

        if spec.analytic.pe:
            params = spec.signal.params()
            if not isinstance(params, MarkovAr1Params):
                raise HarnessError("analytic curves need a markov_ar1 signal")
            result.curves = analytic_curves(
                params, spec.sweep.rho, spec.analytic.pe, spec.cost.sigma_max_sq, spec.cost.t_up
            )

        seeds = spec.signal.seeds
        for series in spec.series:
            values = self._sweep_values(series)
            runnable = []
            for value in values:
                if series.sampler.kind == "adp_markov" and spec.calibration.enabled:
                    choice = self.calibrate_adp(series, value)
                    result.calibration.append(choice)
                    runnable.append(_with_adp(series, choice.beta, choice.gamma))
                else:
                    runnable.append(series)

            tasks = [
                (spec, run_cfg, value, seed)
                for run_cfg, value in zip(runnable, values)
                for seed in seeds
            ]
            metrics = self._map(tasks)
            for k, (run_cfg, value) in enumerate(zip(runnable, values)):
                point = aggregate(run_cfg, value, metrics[k * len(seeds) : (k + 1) * len(seeds)])
                if run_cfg.sampler.kind == "adp_markov":
                    point.extra.update(beta=run_cfg.sampler.beta, gamma=run_cfg.sampler.gamma)
                logger.info(
                    f"{series.label} @ {value:g}: rate={point.rate:.5f} "
                    f"distortion={point.distortion:.5f}"
                )
                result.points.append(point)

        result.comparisons = compare_adp_to_greedy(result.points)
        return result


def tool_metadata() -> dict:
    """Toolkit version and RNG identifiers recorded in every manifest."""
    return {
        "software": {"name": "tans-sampling", "version": __version__},
        "rng": {"bit_generator": BIT_GENERATOR, "numpy": np.__version__},
    }


def run_metadata(spec: ExperimentSpec, result: Optional[ExperimentResult] = None) -> dict:
    """Manifest content of an experiment run: tool metadata plus the spec echo."""
    manifest = tool_metadata()
    manifest["spec"] = spec.to_dict()
    if result is not None and result.calibration:
        manifest["calibration"] = [
            {"label": c.label, "rho": c.rho, "beta": c.beta, "gamma": c.gamma, "cost": c.cost}
            for c in result.calibration
        ]
    if result is not None and result.comparisons:
        manifest["adp_vs_greedy"] = [
            {
                "label": c.label,
                "rho": c.rho,
                "adp_cost": c.adp_cost,
                "greedy_cost": c.greedy_cost,
                "slack": c.slack,
                "holds": c.holds,
            }
            for c in result.comparisons
        ]
    return manifest
