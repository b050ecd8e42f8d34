"""Greedy sampling functions.

A greedy sampling function picks the next increment T that minimizes the
per-state cost c(S, T) = d(S, T) + rho / T, where d is the expected
reconstruction distortion over the T - 1 skipped indices. All argmins are
exhaustive scans over [1, t_up] with ties going to the smaller increment.
"""

from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import bisect
from scipy.special import gammaln, logsumexp

from tans import TansError
from tans.logger import get_logger
from tans.prediction import AutocorrFn, PredictionError, SamplingState, glp_solve_many
from tans.signals import MarkovAr1Params

logger = get_logger(__name__)

ROOT_XTOL = 1e-12
COST_MODELS = ("approx", "exact")
PRIORS = ("auto", "chain", "literal")
LOG_2PI = float(np.log(2.0 * np.pi))


class GreedyError(TansError):
    """Exception raised for invalid greedy sampling requests."""

    pass


class RootHypothesisError(GreedyError):
    """Raised when a root equation has no root above T = 1."""

    pass


@dataclass(frozen=True)
class CostParams:
    """Rate award, maximum prediction variance and increment cap."""

    rho: float
    sigma_max_sq: float = 1.0
    t_up: int = 200

    def __post_init__(self) -> None:
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.sigma_max_sq < 1.0:
            raise ValueError("sigma_max_sq must be at least 1 for unit-power models")
        if self.t_up < 2:
            raise ValueError("t_up must be at least 2")


@dataclass(frozen=True)
class StateEstimate:
    """Estimated regime of a sampling state (2 = transition inside it)."""

    theta_hat: int
    p_error: float

    def __post_init__(self) -> None:
        if self.theta_hat not in (0, 1, 2):
            raise ValueError(f"theta_hat must be 0, 1 or 2, got {self.theta_hat}")
        if not 0.0 <= self.p_error <= 1.0:
            raise ValueError(f"p_error must lie in [0, 1], got {self.p_error}")


@dataclass(frozen=True)
class RdBounds:
    """Increment, distortion, rate and overall distortion bounds."""

    t0_low: int
    t0_up: int
    t1_low: int
    t1_up: int
    d0_low: float
    d0_up: float
    d1_low: float
    d1_up: float
    rate_low: float
    rate_up: float
    dist_low: float
    dist_up: float

    def to_dict(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=256)
def _distortion_prefix(alpha: float, size: int) -> np.ndarray:
    """S[T] = sum_{l=1}^{T-1} (1 - alpha^(2l)) for T in 0..size."""
    terms = 1.0 - np.power(alpha, 2 * np.arange(1, max(size, 1), dtype=np.int64))
    prefix = np.concatenate(([0.0, 0.0], np.cumsum(terms)))[: size + 1]
    prefix.setflags(write=False)
    return prefix


def _increments(t_up: int) -> np.ndarray:
    return np.arange(1, t_up + 1, dtype=np.int64)


def _argmin_increment(curve: np.ndarray) -> int:
    # np.argmin returns the first minimum, i.e. the smallest T
    return int(np.argmin(curve)) + 1


def ar1_cost_curve(alpha: float, cost: CostParams) -> np.ndarray:
    """c(S, T) of the AR(1) model for T = 1..t_up."""
    S = _distortion_prefix(alpha, cost.t_up)
    return S[1:] + cost.rho / _increments(cost.t_up)


def ar1_state_cost(alpha: float, T: int, cost: CostParams) -> float:
    """Expected skipped-index distortion plus rate penalty for increment T."""
    if T < 1:
        raise GreedyError(f"increment must be at least 1, got {T}")
    if T <= cost.t_up:
        return float(ar1_cost_curve(alpha, cost)[T - 1])
    S = _distortion_prefix(alpha, T)
    return float(S[T] + cost.rho / T)


def ar1_greedy_increment(alpha: float, cost: CostParams) -> int:
    """Optimal greedy increment T* for an AR(1) signal."""
    if not 0.0 < alpha < 1.0:
        raise GreedyError(f"alpha must lie in (0, 1), got {alpha}")
    return _argmin_increment(ar1_cost_curve(alpha, cost))


def ar1_greedy_distortion(alpha: float, T_star: int) -> float:
    """Expected distortion per time index when sampling every T_star steps."""
    if T_star < 1:
        raise GreedyError(f"increment must be at least 1, got {T_star}")
    return float(_distortion_prefix(alpha, T_star)[T_star] / T_star)


def _bisect_root(h: Callable[[float], float], condition: str) -> float:
    """Root of an increasing function on [1, inf) given h(1) < 0."""
    if not h(1.0) < 0.0:
        raise RootHypothesisError(f"no root above T = 1: requires {condition}")
    hi = 2.0
    while h(hi) <= 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise GreedyError("root bracket search diverged")
    return float(bisect(h, 1.0, hi, xtol=ROOT_XTOL))


def ar1_root(alpha: float, rho: float) -> float:
    """Root of (1 - alpha^(2T)) - rho / (T (T + 1)) on [1, inf).

    Raises:
        RootHypothesisError: Unless (1 - alpha^2) < rho / 2.
    """

    def h(T: float) -> float:
        return (1.0 - alpha ** (2.0 * T)) - rho / (T * (T + 1.0))

    return _bisect_root(h, "(1 - alpha^2) < rho / 2")


def markov_root(
    alpha: float,
    rho: float,
    pe: float,
    sigma_max_sq: float = 1.0,
    literal: bool = False,
) -> float:
    """Root locating the increment bound of a regime with error probability pe.

    The default equation is the cost difference c(T + 1) - c(T) of the
    conditional cost, (1 - pe)(1 - alpha^(2T)) + pe sigma_max^2 - rho/(T(T+1)).
    ``literal`` uses pe (T - 1) sigma_max^2 in place of pe sigma_max^2.
    """
    if literal:

        def h(T: float) -> float:
            return (
                (1.0 - pe) * (1.0 - alpha ** (2.0 * T))
                + pe * (T - 1.0) * sigma_max_sq
                - rho / (T * (T + 1.0))
            )

        condition = "(1 - pe)(1 - alpha^2) < rho / 2"
    else:

        def h(T: float) -> float:
            return (
                (1.0 - pe) * (1.0 - alpha ** (2.0 * T))
                + pe * sigma_max_sq
                - rho / (T * (T + 1.0))
            )

        condition = "(1 - pe)(1 - alpha^2) + pe sigma_max^2 < rho / 2"

    return _bisect_root(h, condition)


def _resolve_prior(prior: str, m: int) -> str:
    if prior not in PRIORS:
        raise GreedyError(f"prior must be one of {PRIORS}")
    if prior == "auto":
        return "literal" if m == 2 else "chain"
    return prior


def _log_normal(x: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def _log_prior(
    params: MarkovAr1Params,
    a: int,
    span_prev: int,
    T: np.ndarray,
    positions: np.ndarray,
    prior: str,
) -> Tuple[np.ndarray, np.ndarray]:
    """Log priors of 'regime a throughout' and of a -> b at each position.

    ``T`` and ``positions`` broadcast against each other.
    """
    b = 1 - a
    log_aa, log_ab = np.log(params.stay(a)), np.log(params.leave(a))
    log_bb = np.log(params.stay(b))

    if prior == "literal":
        steady = T * log_aa
        binom = gammaln(T + 1) - gammaln(positions + 1) - gammaln(T - positions + 1)
        switch = binom + positions * log_aa + (T - positions) * log_bb
        return steady, switch

    log_pi = np.log(params.stationary[a])
    span = span_prev + T
    steady = log_pi + (span - 1) * log_aa
    switch = log_pi + (span_prev + positions - 1) * log_aa + log_ab + (T - 1 - positions) * log_bb
    return steady, switch


def estimate_theta(
    state: SamplingState,
    params: MarkovAr1Params,
    last_increments: Optional[Sequence[int]] = None,
    prior: str = "auto",
) -> StateEstimate:
    """Maximum a posteriori regime of the sampling state.

    Hypotheses are: regime 0 throughout, regime 1 throughout, and one switch
    at every position of the most recent interval (either direction). Earlier
    intervals are assumed switch-free. Switch hypotheses pool into class 2.

    Args:
        state: Sampling state with at least two samples.
        params: Markov AR(1) parameters.
        last_increments: Optional increments, checked against the state.
        prior: ``chain`` (path probability of the chain), ``literal``
            (binomial position weights) or ``auto`` (``literal`` for two
            samples, ``chain`` otherwise).

    Returns:
        StateEstimate with p_error = 1 - posterior mass of the chosen class.
    """
    if state.m < 2:
        raise GreedyError("state estimation needs at least two samples")
    prior = _resolve_prior(prior, state.m)

    gaps = np.asarray(state.increments(), dtype=np.int64)
    if last_increments is not None:
        given = np.asarray(last_increments, dtype=np.int64)
        if given.size > gaps.size or np.any(gaps[gaps.size - given.size :] != given):
            raise GreedyError("last_increments do not match the state's sample times")

    x = np.asarray(state.values)
    prev, nxt = x[:-1], x[1:]
    T = int(gaps[-1])
    span_prev = int(gaps[:-1].sum())
    first = 1 if span_prev == 0 else 0
    positions = np.arange(first, T, dtype=np.int64)

    values, means, variances = [], [], []
    for a in (0, 1):
        alpha = params.alpha(a)
        decay = np.power(alpha, gaps)
        values.append(nxt)
        means.append(decay * prev)
        variances.append(1.0 - decay**2)
    for a in (0, 1):
        b = 1 - a
        decay = np.power(params.alpha(a), positions) * np.power(params.alpha(b), T - positions)
        values.append(np.full(positions.size, x[-1]))
        means.append(decay * x[-2])
        variances.append(1.0 - decay**2)

    logpdf = _log_normal(np.concatenate(values), np.concatenate(means), np.concatenate(variances))
    n = gaps.size
    steady_ll = [logpdf[:n].sum(), logpdf[n : 2 * n].sum()]
    switch_ll = np.split(logpdf[2 * n :], 2)

    log_post, class_of = [], []
    for a in (0, 1):
        steady_prior, switch_prior = _log_prior(params, a, span_prev, T, positions, prior)
        # Earlier intervals run in the pre-switch regime
        earlier = logpdf[a * n : a * n + n - 1].sum()
        log_post += [np.atleast_1d(steady_prior + steady_ll[a]), switch_prior + earlier + switch_ll[a]]
        class_of += [np.full(1, a), np.full(positions.size, 2)]

    log_post = np.concatenate(log_post)
    class_of = np.concatenate(class_of)
    log_post = log_post - logsumexp(log_post)
    mass = np.zeros(3)
    for c in (0, 1, 2):
        if np.any(class_of == c):
            mass[c] = np.exp(logsumexp(log_post[class_of == c]))
    theta_hat = int(np.argmax(mass))
    p_error = float(np.clip(1.0 - mass[theta_hat], 0.0, 1.0))
    return StateEstimate(theta_hat=theta_hat, p_error=p_error)


def estimate_theta_next(
    state: SamplingState,
    params: MarkovAr1Params,
    increments: Sequence[int],
    values: Sequence[float],
    prior: str = "auto",
) -> Tuple[np.ndarray, np.ndarray]:
    """Regime estimates after one more sample, for many candidate samples.

    Entry k equals ``estimate_theta(state.advance(last_time + increments[k],
    values[k]))``. The intervals shared by all candidates are scored once and
    the switch positions of the new interval are laid out as a masked
    (candidate, position) grid.

    Returns:
        (theta_hat, p_error) arrays with one entry per candidate.
    """
    if state.m < 2:
        raise GreedyError("state estimation needs at least two samples")
    prior = _resolve_prior(prior, state.m)
    Ts = np.asarray(increments, dtype=np.int64)
    x_new = np.asarray(values, dtype=float)
    if Ts.ndim != 1 or Ts.shape != x_new.shape or Ts.size == 0:
        raise GreedyError("increments and values must be non-empty 1-D arrays of equal length")
    if Ts.min() < 1:
        raise GreedyError("increments must be positive integers")

    # The oldest sample drops out; the rest become the earlier intervals
    gaps = np.asarray(state.increments()[1:], dtype=np.int64)
    x = np.asarray(state.values)
    x_last = x[-1]
    span_prev = int(gaps.sum())
    first = 1 if span_prev == 0 else 0

    T = Ts[:, None]
    j = np.arange(int(Ts.max()), dtype=np.int64)[None, :]
    valid = (j >= first) & (j < T)
    rest = np.maximum(T - j, 1)

    steady, switch = [], []
    with np.errstate(divide="ignore", invalid="ignore"):
        for a in (0, 1):
            alpha_a, alpha_b = params.alpha(a), params.alpha(1 - a)
            decay = np.power(alpha_a, gaps)
            earlier = _log_normal(x[2:], decay * x[1:-1], 1.0 - decay**2).sum()

            last = np.power(alpha_a, Ts)
            steady_ll = earlier + _log_normal(x_new, last * x_last, 1.0 - last**2)
            mixed = np.power(alpha_a, j) * np.power(alpha_b, rest)
            switch_ll = earlier + _log_normal(x_new[:, None], mixed * x_last, 1.0 - mixed**2)

            steady_prior, switch_prior = _log_prior(params, a, span_prev, T, j, prior)
            steady.append(steady_prior[:, 0] + steady_ll)
            switch.append(np.where(valid, switch_prior + switch_ll, -np.inf))

        log_class = np.column_stack(
            [steady[0], steady[1], logsumexp(np.concatenate(switch, axis=1), axis=1)]
        )
        mass = np.exp(log_class - logsumexp(log_class, axis=1, keepdims=True))

    theta_hat = np.argmax(mass, axis=1)
    p_error = np.clip(1.0 - mass[np.arange(Ts.size), theta_hat], 0.0, 1.0)
    return theta_hat.astype(np.int64), p_error


def _exact_expected_distortion(
    params: MarkovAr1Params,
    theta: int,
    cost: CostParams,
) -> np.ndarray:
    """Distortion of the skipped indices averaged over the first switch position."""
    t_up = cost.t_up
    S = _distortion_prefix(params.alpha(theta), t_up)
    stay, leave = params.stay(theta), params.leave(theta)

    j = np.arange(0, t_up, dtype=np.int64)
    w = np.power(stay, j) * leave
    cum_a = np.cumsum(w * S[j + 1])
    cum_b = np.cumsum(w)
    cum_c = np.cumsum(w * j)

    Ts = _increments(t_up)
    out = np.power(stay, Ts - 1) * S[Ts]
    k = Ts - 2
    has_switch = k >= 0
    kk = k[has_switch]
    out[has_switch] += cum_a[kk] + cost.sigma_max_sq * ((Ts[has_switch] - 1) * cum_b[kk] - cum_c[kk])
    return out


def _check_model(model: str) -> None:
    if model not in COST_MODELS:
        raise GreedyError(f"cost model must be one of {COST_MODELS}")


def _regime_distortion(params: MarkovAr1Params, theta: int, cost: CostParams, model: str) -> np.ndarray:
    """Expected skipped-index distortion for T = 1..t_up in regime theta."""
    _check_model(model)
    if model == "exact":
        return _exact_expected_distortion(params, theta, cost)
    return _distortion_prefix(params.alpha(theta), cost.t_up)[1:]


def markov_cost_curve(
    estimate: StateEstimate,
    params: MarkovAr1Params,
    cost: CostParams,
    model: str = "approx",
) -> np.ndarray:
    """Conditional state cost for T = 1..t_up given the regime estimate."""
    Ts = _increments(cost.t_up)
    worst = (Ts - 1) * cost.sigma_max_sq
    rate = cost.rho / Ts
    if estimate.theta_hat == 2:
        _check_model(model)
        return worst + rate

    d = _regime_distortion(params, estimate.theta_hat, cost, model)
    return (1.0 - estimate.p_error) * d + estimate.p_error * worst + rate


def markov_greedy_increments(
    theta_hat: np.ndarray,
    p_error: np.ndarray,
    params: MarkovAr1Params,
    cost: CostParams,
    model: str = "approx",
) -> np.ndarray:
    """Greedy increment for each of many regime estimates."""
    _check_model(model)
    theta_hat = np.asarray(theta_hat, dtype=np.int64)
    p_error = np.asarray(p_error, dtype=float)[:, None]
    Ts = _increments(cost.t_up)
    worst = (Ts - 1) * cost.sigma_max_sq
    rate = cost.rho / Ts

    curves = np.broadcast_to(worst + rate, (theta_hat.size, cost.t_up)).copy()
    for a in (0, 1):
        rows = theta_hat == a
        if np.any(rows):
            d = _regime_distortion(params, a, cost, model)
            curves[rows] = (1.0 - p_error[rows]) * d + p_error[rows] * worst + rate
    return np.argmin(curves, axis=1) + 1


def markov_cond_cost(
    estimate: StateEstimate,
    T: int,
    params: MarkovAr1Params,
    cost: CostParams,
    model: str = "approx",
) -> float:
    """Conditional state cost of increment T."""
    if not 1 <= T <= cost.t_up:
        raise GreedyError(f"increment {T} outside [1, {cost.t_up}]")
    return float(markov_cost_curve(estimate, params, cost, model)[T - 1])


def markov_cond_cost_exact(
    estimate: StateEstimate,
    T: int,
    params: MarkovAr1Params,
    cost: CostParams,
) -> float:
    """Conditional cost averaging over the first regime switch in the interval."""
    return markov_cond_cost(estimate, T, params, cost, model="exact")


def greedy_markov_step(
    state: SamplingState,
    params: MarkovAr1Params,
    cost: CostParams,
    model: str = "approx",
    prior: str = "auto",
    genie: Optional[StateEstimate] = None,
) -> Tuple[int, StateEstimate]:
    """One step of the estimator-driven greedy sampler.

    ``genie`` replaces the estimate with a known regime.
    """
    estimate = genie if genie is not None else estimate_theta(state, params, prior=prior)
    increment = _argmin_increment(markov_cost_curve(estimate, params, cost, model))
    return increment, estimate


def _regime_increment(alpha: float, pe: float, cost: CostParams) -> int:
    """Greedy increment of one regime for a fixed error probability."""
    S = _distortion_prefix(alpha, cost.t_up)
    Ts = _increments(cost.t_up)
    d = (1.0 - pe) * S[1:] + pe * (Ts - 1) * cost.sigma_max_sq
    return _argmin_increment(d + cost.rho / Ts)


def greedy_rd_bounds(
    params: MarkovAr1Params,
    cost: CostParams,
    pe_low: float,
    pe_up: float,
) -> RdBounds:
    """Rate and distortion bounds of the greedy sampler for a symmetric chain.

    Raises:
        GreedyError: If the chain is asymmetric or the error probabilities
            are not ordered within [0, 1].
    """
    if not params.symmetric:
        raise GreedyError("bounds are only available for symmetric chains (p01 == p10)")
    if not 0.0 <= pe_low <= pe_up <= 1.0:
        raise GreedyError(f"need 0 <= pe_low <= pe_up <= 1, got {pe_low}, {pe_up}")

    # A larger error probability penalizes long increments harder
    t0_low = _regime_increment(params.alpha0, pe_up, cost)
    t0_up = _regime_increment(params.alpha0, pe_low, cost)
    t1_low = _regime_increment(params.alpha1, pe_up, cost)
    t1_up = _regime_increment(params.alpha1, pe_low, cost)

    def per_index(alpha: float, pe: float, T: int) -> float:
        S = _distortion_prefix(alpha, T)
        return float(((1.0 - pe) * S[T] + pe * (T - 1) * cost.sigma_max_sq) / T)

    d0_up = per_index(params.alpha0, pe_up, t0_up)
    d0_low = per_index(params.alpha0, pe_low, t0_low)
    d1_up = per_index(params.alpha1, pe_up, t1_up)
    d1_low = per_index(params.alpha1, pe_low, t1_low)

    return RdBounds(
        t0_low=t0_low,
        t0_up=t0_up,
        t1_low=t1_low,
        t1_up=t1_up,
        d0_low=d0_low,
        d0_up=d0_up,
        d1_low=d1_low,
        d1_up=d1_up,
        rate_low=1.0 / (2 * t0_up) + 1.0 / (2 * t1_up),
        rate_up=1.0 / (2 * t0_low) + 1.0 / (2 * t1_low),
        dist_low=d0_low / 2 + d1_low / 2,
        dist_up=d0_up / 2 + d1_up / 2,
    )


def glp_cost_curve(
    state: SamplingState,
    acf: AutocorrFn,
    cost: CostParams,
) -> np.ndarray:
    """sum_{j=1}^{T-1} sigma_e^2(S, j) + rho / T for T = 1..t_up."""
    batch = glp_solve_many(state, np.arange(1, cost.t_up, dtype=np.int64), acf)
    distortion = np.concatenate(([0.0], np.cumsum(batch.err_variance)))
    return distortion + cost.rho / _increments(cost.t_up)


def glp_state_cost(state: SamplingState, T: int, acf: AutocorrFn, rho: float) -> float:
    """State cost under an arbitrary autocorrelation model."""
    if T < 1:
        raise GreedyError(f"increment must be at least 1, got {T}")
    if T == 1:
        return float(rho)
    batch = glp_solve_many(state, np.arange(1, T, dtype=np.int64), acf)
    return float(np.sum(batch.err_variance) + rho / T)


def greedy_acf_increment(state: SamplingState, acf: AutocorrFn, cost: CostParams) -> int:
    """Greedy increment using GLP error variances of ``acf``.

    Falls back to a white model when the estimated correlations do not give
    a valid predictor.
    """
    try:
        curve = glp_cost_curve(state, acf, cost)
    except PredictionError as e:
        logger.debug(f"Falling back to white autocorrelation: {e}")
        curve = glp_cost_curve(state, AutocorrFn.white(max(acf.power, 1e-12)), cost)
    return _argmin_increment(curve)
