"""Dynamic-programming sampling functions.

Two schemes are implemented:

* Online source coding of a binary Markov signal. The sampling state is the
  value of the most recent sample, so the Bellman equation has two unknowns
  J(0), J(1), solved by value iteration. Missing indices are reconstructed
  by holding the last sample (the most probable sequence when transitions
  are rare).
* Approximate dynamic programming (ADP) for Markov AR(1) signals: the greedy
  conditional cost corrected by a discounted one-step quality term
  q(S') = gamma * T_greedy(S') evaluated at the predicted next state.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from tans import TansError
from tans.greedy import (
    CostParams,
    StateEstimate,
    ar1_cost_curve,
    estimate_theta,
    estimate_theta_next,
    greedy_markov_step,
    markov_cost_curve,
    markov_greedy_increments,
)
from tans.logger import get_logger
from tans.prediction import AutocorrFn, SamplingState, glp_solve_many
from tans.reconstruct import Reconstruction, SampleSet, reconstruct_hold
from tans.signals import BinaryHmmParams, MarkovAr1Params

logger = get_logger(__name__)


class DpError(TansError):
    """Exception raised for invalid dynamic-programming requests."""

    pass


@dataclass(frozen=True)
class DpConfig:
    """Value-iteration settings.

    ``t_max`` must stay well below the mean sojourn times 1/eps; values above
    floor(0.2 * min(1/eps0, 1/eps1)) need ``allow_large_increments``.
    """

    beta: float = 0.9
    t_max: int = 20
    tol: float = 1e-10
    max_iters: int = 1_000_000
    allow_large_increments: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.t_max < 1:
            raise ValueError("t_max must be a positive integer")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")


@dataclass(frozen=True)
class AdpConfig:
    """ADP settings; beta = 0 or gamma_quality = 0 gives the greedy sampler.

    ``quality_sign`` ``flipped`` rewards a larger predicted greedy increment,
    ``literal`` adds the quality term as a cost. ``quality_nodes`` > 0
    averages the quality over the predicted value with Gauss-Hermite nodes.
    """

    beta: float = 0.5
    gamma_quality: float = 0.1
    quality_sign: str = "flipped"
    quality_nodes: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if self.gamma_quality < 0:
            raise ValueError("gamma_quality must be non-negative")
        if self.quality_sign not in ("flipped", "literal"):
            raise ValueError("quality_sign must be 'flipped' or 'literal'")
        if self.quality_nodes < 0:
            raise ValueError("quality_nodes must be non-negative")


@dataclass(frozen=True)
class PolicyTable:
    """Solved two-state policy: cost-to-go and increment per sample value."""

    rho: float
    beta: float
    j_values: Tuple[float, ...]
    increments: Tuple[int, ...]
    converged: bool
    iterations: int
    residual: float

    def increment(self, state: int) -> int:
        return self.increments[state]

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "beta": self.beta,
            "J": list(self.j_values),
            "T": list(self.increments),
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyTable":
        return cls(
            rho=float(data["rho"]),
            beta=float(data["beta"]),
            j_values=tuple(float(v) for v in data["J"]),
            increments=tuple(int(v) for v in data["T"]),
            converged=bool(data.get("converged", True)),
            iterations=int(data.get("iterations", 0)),
            residual=float(data.get("residual", 0.0)),
        )


def sc_cost_curve(eps: float, t_max: int, rho: float) -> np.ndarray:
    """sum_{j=1}^{T-1} (1-eps)^(j-1) eps (T-j) + rho/T for T = 1..t_max."""
    j = np.arange(1, t_max, dtype=np.int64)
    w = np.power(1.0 - eps, j - 1) * eps
    cum_w = np.concatenate(([0.0], np.cumsum(w)))
    cum_jw = np.concatenate(([0.0], np.cumsum(j * w)))
    Ts = np.arange(1, t_max + 1, dtype=np.int64)
    return Ts * cum_w - cum_jw + rho / Ts


def sc_state_cost(eps: float, T: int, rho: float) -> float:
    """Expected Hamming errors of holding a sample over T - 1 indices plus rho/T."""
    if T < 1:
        raise DpError(f"increment must be at least 1, got {T}")
    if not 0.0 < eps < 1.0:
        raise DpError(f"eps must lie in (0, 1), got {eps}")
    return float(sc_cost_curve(eps, T, rho)[T - 1])


def increment_limit(params: BinaryHmmParams) -> int:
    """Largest increment that stays well below both mean sojourn times."""
    return int(np.floor(0.2 * min(1.0 / params.eps0, 1.0 / params.eps1)))


def sc_bellman(
    j_values: np.ndarray,
    params: BinaryHmmParams,
    rho: float,
    cfg: DpConfig,
) -> Tuple[np.ndarray, np.ndarray]:
    """Apply the Bellman operator once; returns (BJ, argmin increments)."""
    Ts = np.arange(1, cfg.t_max + 1, dtype=np.int64)
    updated = np.empty(2)
    increments = np.empty(2, dtype=np.int64)
    for state in (0, 1):
        eps = params.eps(state)
        stay = np.power(1.0 - eps, Ts)
        q = sc_cost_curve(eps, cfg.t_max, rho) + cfg.beta * (
            stay * j_values[state] + (1.0 - stay) * j_values[1 - state]
        )
        k = int(np.argmin(q))
        updated[state] = q[k]
        increments[state] = k + 1
    return updated, increments


def sc_value_iteration(params: BinaryHmmParams, rho: float, cfg: DpConfig) -> PolicyTable:
    """Solve the two-state Bellman equation of online source coding.

    Raises:
        DpError: If ``t_max`` exceeds the rare-transition limit without
            ``allow_large_increments``.
    """
    limit = increment_limit(params)
    if cfg.t_max > limit and not cfg.allow_large_increments:
        raise DpError(
            f"t_max={cfg.t_max} exceeds floor(0.2 * min(1/eps0, 1/eps1)) = {limit}; "
            "set allow_large_increments to override"
        )

    j_values = np.zeros(2)
    iterations = 0
    converged = False
    while iterations < cfg.max_iters:
        updated, _ = sc_bellman(j_values, params, rho, cfg)
        iterations += 1
        delta = float(np.max(np.abs(updated - j_values)))
        j_values = updated
        if delta < cfg.tol:
            converged = True
            break

    applied, increments = sc_bellman(j_values, params, rho, cfg)
    residual = float(np.max(np.abs(applied - j_values)))

    if converged:
        logger.info(
            f"Value iteration converged in {iterations} iterations: "
            f"rho={rho}, T={tuple(increments.tolist())}, residual={residual:.3g}"
        )
    else:
        logger.warning(
            f"Value iteration did not converge within {cfg.max_iters} iterations "
            f"(rho={rho}, residual={residual:.3g})"
        )

    return PolicyTable(
        rho=float(rho),
        beta=cfg.beta,
        j_values=tuple(float(v) for v in j_values),
        increments=tuple(int(v) for v in increments),
        converged=converged,
        iterations=iterations,
        residual=residual,
    )


def ar1_value_iteration(alpha: float, cost: CostParams, cfg: DpConfig) -> PolicyTable:
    """Single-state Bellman equation of an AR(1) signal.

    Every sampling state of an AR(1) signal has the same cost function, so
    the fixed point is J = min_T c(T) / (1 - beta) with the greedy increment.
    """
    curve = ar1_cost_curve(alpha, cost)
    j_value = 0.0
    iterations = 0
    converged = False
    while iterations < cfg.max_iters:
        updated = float(np.min(curve + cfg.beta * j_value))
        iterations += 1
        delta = abs(updated - j_value)
        j_value = updated
        if delta < cfg.tol:
            converged = True
            break

    q = curve + cfg.beta * j_value
    return PolicyTable(
        rho=cost.rho,
        beta=cfg.beta,
        j_values=(j_value,),
        increments=(int(np.argmin(q)) + 1,),
        converged=converged,
        iterations=iterations,
        residual=float(abs(np.min(q) - j_value)),
    )


def sc_reconstruct(samples: SampleSet) -> Reconstruction:
    """Most probable binary sequence: hold the last sample value."""
    if samples.values.size and not np.all(np.isin(samples.values, (0.0, 1.0))):
        raise DpError("source-coding reconstruction needs binary samples")
    return reconstruct_hold(samples, method="fill")


@lru_cache(maxsize=32)
def _normalized_hermite(nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = hermegauss(nodes)
    return x, w / w.sum()


def adp_step(
    state: SamplingState,
    params: MarkovAr1Params,
    cost: CostParams,
    cfg: AdpConfig,
    model: str = "approx",
    prior: str = "auto",
    estimate: Optional[StateEstimate] = None,
) -> int:
    """One step of the ADP sampler.

    For each candidate T the next state is formed with the GLP prediction of
    X(t_i + T) in place of the unknown sample, and its greedy increment gives
    the quality of that candidate. All candidates (and quadrature nodes) are
    estimated in one batch.
    """
    if cfg.beta == 0.0 or cfg.gamma_quality == 0.0:
        return greedy_markov_step(state, params, cost, model=model, prior=prior, genie=estimate)[0]

    if estimate is None:
        estimate = estimate_theta(state, params, prior=prior)
    costs = markov_cost_curve(estimate, params, cost, model)

    horizons = np.arange(1, cost.t_up + 1, dtype=np.int64)
    acf = AutocorrFn.conditional(params.alphas).resolve(estimate.theta_hat)
    batch = glp_solve_many(state, horizons, acf)
    predicted = batch.weights @ np.asarray(state.values[::-1])

    if cfg.quality_nodes > 0:
        nodes, weights = _normalized_hermite(cfg.quality_nodes)
    else:
        nodes, weights = np.zeros(1), np.ones(1)

    # Row k holds the candidate values of horizon k, one per node
    candidates = predicted[:, None] + np.sqrt(batch.err_variance)[:, None] * nodes[None, :]
    theta_next, pe_next = estimate_theta_next(
        state, params, np.repeat(horizons, nodes.size), candidates.ravel(), prior=prior
    )
    following = markov_greedy_increments(theta_next, pe_next, params, cost, model)
    quality = cfg.gamma_quality * (following.reshape(horizons.size, nodes.size) @ weights)

    sign = -1.0 if cfg.quality_sign == "flipped" else 1.0
    total = costs + sign * cfg.beta * quality
    return int(np.argmin(total)) + 1
