"""Full-trace reconstruction from a set of samples.

Every method reproduces the sample values exactly at the sample times and
fills the indices in between: causal generalized linear prediction (GLP),
causal line extrapolation (CLC), linear interpolation (NCLC), or holding the
most recent sample (used for binary signals).
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Union

import numpy as np

from tans import TansError
from tans.greedy import estimate_theta
from tans.logger import get_logger
from tans.prediction import (
    AutocorrFn,
    PredictionError,
    SamplingState,
    acf_estimate_window,
    glp_solve_many,
)
from tans.signals import MarkovAr1Params, SignalTrace

logger = get_logger(__name__)


class ReconstructionError(TansError):
    """Exception raised for invalid reconstruction requests."""

    pass


def _empty_int() -> np.ndarray:
    return np.zeros(0, dtype=np.int64)


@dataclass
class SampleSet:
    """Samples taken by one run over a trace of ``length`` indices.

    The first ``init_count`` samples are the initialization samples. When
    present, ``regimes`` and ``p_errors`` hold, for every sample, the regime
    estimate (or true regime) and its error probability used to choose the
    increment that followed it; 2 and NaN mark samples without a decision.
    """

    times: np.ndarray
    values: np.ndarray
    length: int
    init_count: int = 1
    increments: np.ndarray = field(default_factory=_empty_int)
    regimes: np.ndarray = field(default_factory=_empty_int)
    p_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    origin: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        self.increments = np.asarray(self.increments, dtype=np.int64)
        self.regimes = np.asarray(self.regimes, dtype=np.int64)
        self.p_errors = np.asarray(self.p_errors, dtype=float)

        if self.times.size == 0:
            raise ReconstructionError("a sample set needs at least one sample")
        if self.times.size != self.values.size:
            raise ReconstructionError("times and values must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ReconstructionError("sample times must be strictly increasing")
        if self.times[0] < 0 or self.times[-1] >= self.length:
            raise ReconstructionError(f"sample times must lie in [0, {self.length})")
        if not 1 <= self.init_count <= self.times.size:
            raise ReconstructionError("init_count must lie in [1, number of samples]")
        for name in ("regimes", "p_errors"):
            size = getattr(self, name).size
            if size and size != self.times.size:
                raise ReconstructionError(f"{name} must have one entry per sample")

    @property
    def n(self) -> int:
        return int(self.times.size)

    @property
    def last_init_time(self) -> int:
        return int(self.times[self.init_count - 1])

    @property
    def horizon(self) -> int:
        """Number of indices after the last initialization sample."""
        return self.length - 1 - self.last_init_time

    @property
    def rate(self) -> float:
        """Samples per time index over the evaluation window."""
        if self.horizon <= 0:
            raise ReconstructionError("no indices after the initialization samples")
        return (self.n - self.init_count) / self.horizon


@dataclass
class Reconstruction:
    """Reconstructed values over the full time axis."""

    values: np.ndarray
    method: str
    sample_times: np.ndarray


def _finish(samples: SampleSet, values: np.ndarray, method: str) -> Reconstruction:
    values[samples.times] = samples.values
    return Reconstruction(values=values, method=method, sample_times=samples.times.copy())


def decode_regimes(
    samples: SampleSet,
    params: MarkovAr1Params,
    order: int,
    prior: str = "auto",
) -> np.ndarray:
    """Regime estimates recomputed from the sample values alone."""
    regimes = np.full(samples.n, 2, dtype=np.int64)
    times, values = samples.times.tolist(), samples.values.tolist()
    for i in range(1, samples.n):
        lo = max(0, i - order + 1)
        state = SamplingState(tuple(times[lo : i + 1]), tuple(values[lo : i + 1]))
        regimes[i] = estimate_theta(state, params, prior=prior).theta_hat
    return regimes


def reconstruct_glp(
    samples: SampleSet,
    m: int,
    acf: Optional[AutocorrFn] = None,
    acf_mode: str = "model",
    regimes: Optional[np.ndarray] = None,
    window: int = 200,
    max_lag: int = 50,
) -> Reconstruction:
    """Causal GLP reconstruction from the m most recent samples.

    Args:
        samples: Samples to reconstruct from.
        m: Predictor order; fewer samples are used at the head.
        acf: Model autocorrelation (``model``) or per-regime coefficients
            (``conditional``). Ignored for ``estimated``.
        acf_mode: ``model``, ``conditional`` or ``estimated``.
        regimes: Regime per sample, required for ``conditional``.
        window: Window size of the online estimator (``estimated``).
        max_lag: Largest estimated lag (``estimated``).

    Returns:
        Reconstruction; indices before the first sample are zero.
    """
    if m < 1:
        raise ReconstructionError(f"m must be at least 1, got {m}")
    if acf_mode in ("model", "conditional") and acf is None:
        raise ReconstructionError(f"acf_mode '{acf_mode}' needs an autocorrelation")
    if acf_mode == "conditional":
        if regimes is None or len(regimes) != samples.n:
            raise ReconstructionError("conditional reconstruction needs one regime per sample")
    elif acf_mode not in ("model", "estimated"):
        raise ReconstructionError(f"unknown acf_mode '{acf_mode}'")

    times, values = samples.times, samples.values
    out = np.zeros(samples.length)
    cache: Dict[tuple, np.ndarray] = {}

    for i in range(samples.n):
        start = int(times[i])
        stop = int(times[i + 1]) if i + 1 < samples.n else samples.length
        if stop - start <= 1:
            continue

        lo = max(0, i - m + 1)
        state = SamplingState(tuple(times[lo : i + 1].tolist()), tuple(values[lo : i + 1].tolist()))
        horizons = np.arange(1, stop - start, dtype=np.int64)

        if acf_mode == "estimated":
            w_lo = int(np.searchsorted(times, start - window + 1))
            pairs = list(zip(times[w_lo : i + 1].tolist(), values[w_lo : i + 1].tolist()))
            try:
                weights = glp_solve_many(state, horizons, acf_estimate_window(pairs, window, max_lag)).weights
            except PredictionError as e:
                logger.debug(f"Estimated predictor unavailable at t={start}, holding zero: {e}")
                weights = np.zeros((horizons.size, state.m))
        else:
            gap_acf = acf.resolve(int(regimes[i])) if acf_mode == "conditional" else acf
            key = (
                int(regimes[i]) if acf_mode == "conditional" else -1,
                tuple((times[lo : i + 1] - start).tolist()),
                stop - start,
            )
            weights = cache.get(key)
            if weights is None:
                weights = glp_solve_many(state, horizons, gap_acf).weights
                cache[key] = weights

        out[start + 1 : stop] = weights @ values[lo : i + 1][::-1]

    return _finish(samples, out, f"glp(m={m},{acf_mode})")


def reconstruct_clc(samples: SampleSet) -> Reconstruction:
    """Extend the line through the two most recent samples.

    Before the second sample the first value is held.
    """
    if samples.n < 2:
        raise ReconstructionError("line-connecting reconstruction needs at least two samples")
    t = np.arange(samples.length)
    idx = np.clip(np.searchsorted(samples.times, t, side="right") - 1, 0, None)

    slopes = np.zeros(samples.n)
    slopes[1:] = np.diff(samples.values) / np.diff(samples.times)
    offsets = np.maximum(t - samples.times[idx], 0)
    out = samples.values[idx] + slopes[idx] * offsets
    return _finish(samples, out, "clc")


def reconstruct_nclc(samples: SampleSet) -> Reconstruction:
    """Linear interpolation between the bracketing samples."""
    if samples.n < 2:
        raise ReconstructionError("line-connecting reconstruction needs at least two samples")
    t = np.arange(samples.length)
    out = np.interp(t, samples.times, samples.values)
    return _finish(samples, out, "nclc")


def reconstruct_hold(samples: SampleSet, method: str = "hold") -> Reconstruction:
    """Every missing index takes the value of the most recent sample."""
    t = np.arange(samples.length)
    idx = np.clip(np.searchsorted(samples.times, t, side="right") - 1, 0, None)
    return _finish(samples, samples.values[idx].copy(), method)


def pointwise_distortion(
    truth: Union[SignalTrace, np.ndarray],
    recon: Reconstruction,
    measure: str = "mse",
) -> np.ndarray:
    """Per-index distortion between truth and reconstruction."""
    truth_values = np.asarray(getattr(truth, "values", truth), dtype=float)
    if truth_values.size != recon.values.size:
        raise ReconstructionError(
            f"truth has {truth_values.size} indices, reconstruction {recon.values.size}"
        )
    if measure == "mse":
        return (truth_values - recon.values) ** 2
    if measure == "hamming":
        if not np.all(np.isin(truth_values, (0.0, 1.0))):
            raise ReconstructionError("hamming distortion needs a binary signal")
        return (truth_values != np.round(recon.values)).astype(float)
    raise ReconstructionError(f"unknown distortion measure '{measure}'")


def distortion(
    truth: Union[SignalTrace, np.ndarray],
    recon: Reconstruction,
    measure: str = "mse",
    exclude_sample_times: bool = False,
    start: int = 0,
) -> float:
    """Average distortion over indices t >= start.

    Args:
        truth: True signal.
        recon: Reconstruction of the same length.
        measure: ``mse`` (squared error) or ``hamming`` (0/1 mismatch).
        exclude_sample_times: Average over non-sample indices only.
        start: First evaluated index.
    """
    errors = pointwise_distortion(truth, recon, measure)
    mask = np.zeros(errors.size, dtype=bool)
    mask[start:] = True
    if exclude_sample_times:
        mask[recon.sample_times] = False
    if not mask.any():
        raise ReconstructionError("no indices left to evaluate")
    return float(errors[mask].mean())
