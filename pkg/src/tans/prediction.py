"""Generalized linear prediction over nonuniformly spaced samples.

The predictor of X(t) from the m most recent samples solves the normal
equations R w = p, where R holds the autocorrelation between the sample
times and p the autocorrelation between t and each sample time. The
prediction error variance is r(0) - p^T w.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lu_factor, lu_solve

from tans import TansError
from tans.logger import get_logger

logger = get_logger(__name__)

# Condition number beyond which R gets diagonal loading
CONDITION_LIMIT = 1e12
LOADING = 1e-10
VARIANCE_TOLERANCE = 1e-8

ACF_KINDS = ("model", "conditional", "estimated", "white")


class PredictionError(TansError):
    """Exception raised when a prediction problem is ill-posed."""

    pass


@dataclass(frozen=True)
class SamplingState:
    """The most recent (time, value) samples, oldest first."""

    times: Tuple[int, ...]
    values: Tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have equal length")
        if not self.times:
            raise ValueError("a sampling state needs at least one sample")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("sample times must be strictly increasing")

    @property
    def m(self) -> int:
        return len(self.times)

    @property
    def last_time(self) -> int:
        return self.times[-1]

    @property
    def last_value(self) -> float:
        return self.values[-1]

    def increments(self) -> Tuple[int, ...]:
        """Gaps between consecutive sample times, oldest first."""
        return tuple(b - a for a, b in zip(self.times, self.times[1:]))

    def advance(self, time: int, value: float) -> "SamplingState":
        """Append a newer sample and drop the oldest one."""
        return SamplingState(self.times[1:] + (int(time),), self.values[1:] + (float(value),))


@dataclass(frozen=True)
class AutocorrFn:
    """Autocorrelation function r(k) of a real zero-mean signal.

    ``model`` is a mixture sum_c weights[c] * alphas[c]**|k| scaled by
    ``power`` (a single component gives the AR(1) model). ``conditional``
    holds per-regime coefficients and must be resolved with a regime label.
    ``estimated`` looks lags up in ``table``, where NaN marks lags without
    data; such lags are treated as uncorrelated. ``white`` is r(0) = power and
    zero elsewhere.
    """

    kind: str
    alphas: Tuple[float, ...] = ()
    weights: Tuple[float, ...] = ()
    table: Optional[np.ndarray] = field(default=None, compare=False)
    power: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ACF_KINDS:
            raise ValueError(f"kind must be one of {ACF_KINDS}")
        if self.kind == "estimated" and self.table is None:
            raise ValueError("estimated autocorrelation needs a table")

    @classmethod
    def ar1(cls, alpha: float, power: float = 1.0) -> "AutocorrFn":
        return cls(kind="model", alphas=(alpha,), weights=(1.0,), power=power)

    @classmethod
    def mixture(cls, alphas: Sequence[float], weights: Sequence[float]) -> "AutocorrFn":
        """Stationary mixture of AR(1) correlations with regime weights."""
        return cls(kind="model", alphas=tuple(alphas), weights=tuple(weights))

    @classmethod
    def conditional(cls, alphas: Sequence[float], power: float = 1.0) -> "AutocorrFn":
        return cls(kind="conditional", alphas=tuple(alphas), power=power)

    @classmethod
    def estimated(cls, table: np.ndarray) -> "AutocorrFn":
        table = np.array(table, dtype=float)
        power = float(table[0]) if table.size and np.isfinite(table[0]) else 1.0
        return cls(kind="estimated", table=table, power=power)

    @classmethod
    def white(cls, power: float = 1.0) -> "AutocorrFn":
        return cls(kind="white", power=power)

    @property
    def r0(self) -> float:
        return float(self(np.zeros(1, dtype=np.int64))[0])

    def resolve(self, theta: int) -> "AutocorrFn":
        """Pick the regime model; regime 2 (in-state transition) is white."""
        if self.kind != "conditional":
            return self
        if theta == 2:
            return AutocorrFn.white(self.power)
        return AutocorrFn.ar1(self.alphas[theta], self.power)

    def available(self, lag: int) -> bool:
        if self.kind != "estimated":
            return True
        lag = abs(int(lag))
        return lag < self.table.size and bool(np.isfinite(self.table[lag]))

    def __call__(self, lags) -> np.ndarray:
        lags = np.abs(np.asarray(lags, dtype=np.int64))
        if self.kind == "model":
            out = np.zeros(lags.shape)
            for a, w in zip(self.alphas, self.weights):
                out = out + w * np.power(a, lags)
            return self.power * out
        if self.kind == "white":
            return np.where(lags == 0, self.power, 0.0)
        if self.kind == "estimated":
            out = np.zeros(lags.shape)
            inside = lags < self.table.size
            looked_up = self.table[lags[inside]]
            out[inside] = np.where(np.isfinite(looked_up), looked_up, 0.0)
            return out
        raise PredictionError("conditional autocorrelation must be resolved with a regime first")


@dataclass(frozen=True)
class GlpSolution:
    """Predictor weights for one horizon, most recent sample first."""

    weights: np.ndarray = field(compare=False)
    lags: Tuple[int, ...]
    err_variance: float
    regularized: bool = False
    residual: float = 0.0


class GlpBatch(NamedTuple):
    """Predictor weights for several horizons sharing one state."""

    horizons: np.ndarray
    weights: np.ndarray  # (len(horizons), m), most recent sample first
    err_variance: np.ndarray
    regularized: bool
    residual: float


def _factor(R: np.ndarray):
    try:
        return cho_solve, cho_factor(R, lower=True, check_finite=False)
    except LinAlgError:
        return lu_solve, lu_factor(R, check_finite=False)


def glp_solve_many(state: SamplingState, horizons: Sequence[int], acf: AutocorrFn) -> GlpBatch:
    """Solve the normal equations for every horizon with one factorization.

    Raises:
        PredictionError: On an invalid horizon or an error variance outside
            [0, r(0)] by more than the tolerance.
    """
    horizons = np.asarray(horizons, dtype=np.int64)
    if horizons.size == 0 or horizons.min() < 1:
        raise PredictionError("horizons must be positive integers")

    times = np.asarray(state.times[::-1], dtype=np.int64)
    r0 = float(acf(np.zeros(1, dtype=np.int64))[0])
    if not r0 > 0.0:
        raise PredictionError(f"signal power r(0) must be positive, got {r0}")

    R = acf(times[:, None] - times[None, :])
    P = acf((state.last_time + horizons)[None, :] - times[:, None])

    regularized = False
    if np.linalg.cond(R) > CONDITION_LIMIT:
        regularized = True
        R_solve = R + LOADING * r0 * np.eye(len(times))
        logger.warning(
            f"Near-singular autocorrelation matrix for times {state.times}; "
            f"applying diagonal loading {LOADING * r0:.3g}"
        )
    else:
        R_solve = R

    try:
        solve, factors = _factor(R_solve)
        W = solve(factors, P, check_finite=False)
    except (LinAlgError, ValueError) as e:
        raise PredictionError(f"cannot solve normal equations: {e}")
    if not np.all(np.isfinite(W)):
        raise PredictionError("normal equations have no finite solution")

    residual = float(np.max(np.abs(R @ W - P))) if W.size else 0.0
    err = r0 - np.einsum("kh,kh->h", P, W)

    if np.any(err < -VARIANCE_TOLERANCE) or np.any(err > r0 + VARIANCE_TOLERANCE):
        raise PredictionError(
            f"prediction error variance outside [0, {r0}] "
            f"(min {err.min():.3g}, max {err.max():.3g})"
        )
    err = np.clip(err, 0.0, r0)

    return GlpBatch(
        horizons=horizons,
        weights=W.T,
        err_variance=err,
        regularized=regularized,
        residual=residual,
    )


def glp_solve(state: SamplingState, horizon: int, acf: AutocorrFn) -> GlpSolution:
    """Optimal linear predictor of X(t_i + horizon) from ``state``."""
    if horizon < 1:
        raise PredictionError(f"horizon must be at least 1, got {horizon}")
    batch = glp_solve_many(state, [horizon], acf)
    last = state.last_time + horizon
    return GlpSolution(
        weights=batch.weights[0],
        lags=tuple(last - t for t in reversed(state.times)),
        err_variance=float(batch.err_variance[0]),
        regularized=batch.regularized,
        residual=batch.residual,
    )


def glp_predict(state: SamplingState, horizon: int, acf: AutocorrFn) -> Tuple[float, float]:
    """Predicted value of X(t_i + horizon) and its error variance."""
    solution = glp_solve(state, horizon, acf)
    recent_first = np.asarray(state.values[::-1])
    return float(solution.weights @ recent_first), solution.err_variance


def acf_update_gradient(
    table: AutocorrFn,
    new_sample: Tuple[int, float],
    window: Sequence[Tuple[int, float]],
    step: float,
) -> AutocorrFn:
    """Move each estimated lag toward the products the new sample provides.

    Lags present in the table but still unavailable are initialized to the
    product. Lags beyond the table size are skipped.
    """
    if table.kind != "estimated":
        raise PredictionError("gradient updates need an estimated autocorrelation")
    if not 0.0 < step <= 1.0:
        raise PredictionError(f"step must lie in (0, 1], got {step}")

    t_new, x_new = new_sample
    updated = table.table.copy()
    for t, x in list(window) + [new_sample]:
        lag = int(t_new) - int(t)
        if lag < 0 or lag >= updated.size:
            continue
        product = float(x_new) * float(x)
        if np.isfinite(updated[lag]):
            updated[lag] += step * (product - updated[lag])
        else:
            updated[lag] = product
    return AutocorrFn.estimated(updated)


def acf_estimate_window(
    samples: Sequence[Tuple[int, float]],
    window_size: int,
    max_lag: int,
) -> AutocorrFn:
    """Average available products X(t)X(t-j) over pairs inside the window.

    The window ends at the most recent sample time; lags without pairs stay
    NaN.
    """
    if window_size < 2:
        raise PredictionError(f"window_size must be at least 2, got {window_size}")
    if not samples:
        raise PredictionError("window estimation needs at least one sample")

    times = np.asarray([t for t, _ in samples], dtype=np.int64)
    values = np.asarray([x for _, x in samples], dtype=float)
    keep = times >= times.max() - window_size + 1
    times, values = times[keep], values[keep]

    order = np.argsort(times, kind="stable")
    times, values = times[order], values[order]

    sums = np.zeros(max_lag + 1)
    counts = np.zeros(max_lag + 1, dtype=np.int64)
    # Distinct times: pairs d positions apart are at least d steps apart
    for d in range(min(max_lag, times.size - 1) + 1):
        lags = times[d:] - times[: times.size - d]
        products = values[d:] * values[: values.size - d]
        keep = lags <= max_lag
        sums += np.bincount(lags[keep], weights=products[keep], minlength=max_lag + 1)
        counts += np.bincount(lags[keep], minlength=max_lag + 1)

    table = np.full(max_lag + 1, np.nan)
    has_pairs = counts > 0
    table[has_pairs] = sums[has_pairs] / counts[has_pairs]
    return AutocorrFn.estimated(table)
