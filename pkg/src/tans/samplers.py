"""Sampling functions: the next increment as a function of the sampling state.

Each sampler sees only the sampling state (and, for the genie-aided one, the
true regime), so a decoder that knows the sampler and the initialization
times recomputes every sampling time from the sample values.
"""

from collections import deque
from typing import Deque, Optional, Tuple

import numpy as np

from tans import TansError
from tans.config import SamplerConfig
from tans.dp import AdpConfig, DpConfig, PolicyTable, adp_step, sc_value_iteration
from tans.greedy import (
    CostParams,
    StateEstimate,
    ar1_greedy_increment,
    estimate_theta,
    greedy_acf_increment,
    greedy_markov_step,
)
from tans.logger import get_logger
from tans.prediction import (
    AutocorrFn,
    SamplingState,
    acf_estimate_window,
    acf_update_gradient,
)
from tans.signals import Ar1Params, BinaryHmmParams, MarkovAr1Params, SignalParams

logger = get_logger(__name__)

NO_DECISION = 2


class SamplerError(TansError):
    """Exception raised when a sampler does not fit the signal."""

    pass


class SamplingFunction:
    """Base class of all sampling functions.

    Attributes:
        kind: Identifier used in result files.
        order: Number of samples in the sampling state.
        max_increment: Largest increment the sampler may return.
        uses_hidden: True if the sampler needs the true regime.
        last_regime: Regime used by the most recent decision.
        last_p_error: Error probability of that regime.
    """

    kind = "base"
    uses_hidden = False

    def __init__(self, order: int, max_increment: int):
        self.order = order
        self.max_increment = max_increment
        self.last_regime = NO_DECISION
        self.last_p_error = float("nan")

    def reset(self) -> None:
        """Forget any state carried between calls."""
        self.last_regime = NO_DECISION
        self.last_p_error = float("nan")

    def increment(self, state: SamplingState, hidden: Optional[int] = None) -> int:
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind


class ConstantSampler(SamplingFunction):
    """f(S) = period."""

    kind = "uniform"

    def __init__(self, period: int, order: int = 1):
        if period < 1:
            raise SamplerError(f"period must be a positive integer, got {period}")
        super().__init__(order=order, max_increment=period)
        self.period = period

    def increment(self, state: SamplingState, hidden: Optional[int] = None) -> int:
        return self.period

    def describe(self) -> str:
        return f"uniform(T={self.period})"


class Ar1GreedySampler(SamplingFunction):
    """Optimal greedy increment of an AR(1) signal (the same for every state)."""

    kind = "greedy_ar1"

    def __init__(self, params: Ar1Params, cost: CostParams):
        super().__init__(order=1, max_increment=cost.t_up)
        self.params = params
        self.cost = cost
        self.t_star = ar1_greedy_increment(params.alpha, cost)

    def increment(self, state: SamplingState, hidden: Optional[int] = None) -> int:
        return self.t_star


class MarkovGreedySampler(SamplingFunction):
    """Estimate the regime, then minimize the conditional cost."""

    kind = "greedy_markov"
    min_order = 2

    def __init__(
        self,
        params: MarkovAr1Params,
        cost: CostParams,
        order: int = 10,
        cost_model: str = "approx",
        prior: str = "auto",
    ):
        if order < self.min_order:
            raise SamplerError(f"{self.kind} needs an order of at least {self.min_order}")
        super().__init__(order=order, max_increment=cost.t_up)
        self.params = params
        self.cost = cost
        self.cost_model = cost_model
        self.prior = prior

    def _record(self, estimate: StateEstimate) -> None:
        self.last_regime = estimate.theta_hat
        self.last_p_error = estimate.p_error

    def increment(self, state: SamplingState, hidden: Optional[int] = None) -> int:
        T, estimate = greedy_markov_step(
            state, self.params, self.cost, model=self.cost_model, prior=self.prior
        )
        self._record(estimate)
        return T


class GenieGreedySampler(MarkovGreedySampler):
    """Greedy sampler told the true regime at each sample time."""

    kind = "genie_greedy"
    uses_hidden = True
    min_order = 1

    def increment(self, state: SamplingState, hidden: Optional[int] = None) -> int:
        if hidden is None:
            raise SamplerError("the genie-aided sampler needs the true regime")
        genie = StateEstimate(theta_hat=int(hidden), p_error=0.0)
        T, estimate = greedy_markov_step(
            state, self.params, self.cost, model=self.cost_model, genie=genie
        )
        self._record(estimate)
        return T


class AdpSampler(MarkovGreedySampler):
    """Greedy cost corrected by the discounted quality of the predicted next state."""

    kind = "adp_markov"

    def __init__(
        self,
        params: MarkovAr1Params,
        cost: CostParams,
        adp: AdpConfig,
        order: int = 10,
        cost_model: str = "approx",
        prior: str = "auto",
    ):
        super().__init__(params, cost, order=order, cost_model=cost_model, prior=prior)
        self.adp = adp

    def increment(self, state: SamplingState, hidden: Optional[int] = None) -> int:
        estimate = estimate_theta(state, self.params, prior=self.prior)
        self._record(estimate)
        return adp_step(
            state,
            self.params,
            self.cost,
            self.adp,
            model=self.cost_model,
            prior=self.prior,
            estimate=estimate,
        )

    def describe(self) -> str:
        return f"adp_markov(beta={self.adp.beta},gamma={self.adp.gamma_quality})"


class SourceCodingSampler(SamplingFunction):
    """Increment read from a solved policy by the last sample value."""

    kind = "dp_source_coding"

    def __init__(self, policy: PolicyTable):
        super().__init__(order=1, max_increment=max(policy.increments))
        self.policy = policy

    def increment(self, state: SamplingState, hidden: Optional[int] = None) -> int:
        value = int(round(state.last_value))
        if value not in (0, 1):
            raise SamplerError(f"source-coding sampler needs binary samples, got {state.last_value}")
        self.last_regime = value
        self.last_p_error = 0.0
        return self.policy.increment(value)


class AcfGreedySampler(SamplingFunction):
    """Greedy sampler driven by an autocorrelation estimated from taken samples.

    The estimate uses a window over past samples (``window``) or gradient
    updates (``gradient``); both are recomputed from the samples alone.
    """

    kind = "greedy_acf"

    def __init__(
        self,
        cost: CostParams,
        order: int = 10,
        estimator: str = "window",
        window: int = 200,
        max_lag: int = 50,
        step: float = 0.05,
    ):
        if estimator not in ("window", "gradient"):
            raise SamplerError(f"unknown autocorrelation estimator '{estimator}'")
        super().__init__(order=order, max_increment=cost.t_up)
        self.cost = cost
        self.estimator = estimator
        self.window = window
        self.max_lag = max_lag
        self.step = step
        self._history: Deque[Tuple[int, float]] = deque()
        self._table = AutocorrFn.estimated(np.full(max_lag + 1, np.nan))

    def reset(self) -> None:
        super().reset()
        self._history.clear()
        self._table = AutocorrFn.estimated(np.full(self.max_lag + 1, np.nan))

    def _observe(self, state: SamplingState) -> None:
        if not self._history:
            for t, x in zip(state.times, state.values):
                if self.estimator == "gradient":
                    self._table = acf_update_gradient(self._table, (t, x), list(self._history), self.step)
                self._history.append((t, x))
        else:
            sample = (state.last_time, state.last_value)
            if self.estimator == "gradient":
                self._table = acf_update_gradient(self._table, sample, list(self._history), self.step)
            self._history.append(sample)
        while self._history[0][0] < state.last_time - self.window + 1:
            self._history.popleft()

    def increment(self, state: SamplingState, hidden: Optional[int] = None) -> int:
        self._observe(state)
        if self.estimator == "window":
            self._table = acf_estimate_window(list(self._history), self.window, self.max_lag)
        return greedy_acf_increment(state, self._table, self.cost)

    def describe(self) -> str:
        return f"greedy_acf({self.estimator})"


def build_sampler(
    cfg: SamplerConfig,
    params: SignalParams,
    cost: Optional[CostParams],
) -> SamplingFunction:
    """Instantiate the sampling function a series config describes.

    Args:
        cfg: Sampler section of a series.
        params: Signal parameters.
        cost: Cost parameters, or None for uniform samplers.

    Raises:
        SamplerError: If the sampler does not fit the signal model.
    """
    kind = cfg.kind
    if kind == "uniform":
        return ConstantSampler(cfg.period)
    if cost is None:
        raise SamplerError(f"sampler '{kind}' needs cost parameters")

    if kind == "greedy_ar1":
        _require(params, Ar1Params, kind)
        return Ar1GreedySampler(params, cost)
    if kind == "greedy_markov":
        _require(params, MarkovAr1Params, kind)
        return MarkovGreedySampler(params, cost, cfg.order, cfg.cost_model, cfg.prior)
    if kind == "genie_greedy":
        _require(params, MarkovAr1Params, kind)
        return GenieGreedySampler(params, cost, order=1, cost_model=cfg.cost_model)
    if kind == "adp_markov":
        _require(params, MarkovAr1Params, kind)
        adp = AdpConfig(
            beta=cfg.beta,
            gamma_quality=cfg.gamma,
            quality_sign=cfg.quality_sign,
            quality_nodes=cfg.quality_nodes,
        )
        return AdpSampler(params, cost, adp, cfg.order, cfg.cost_model, cfg.prior)
    if kind == "dp_source_coding":
        _require(params, BinaryHmmParams, kind)
        dp_cfg = DpConfig(
            beta=cfg.beta,
            t_max=cfg.dp_t_max,
            tol=cfg.dp_tol,
            max_iters=cfg.dp_max_iters,
            allow_large_increments=cfg.allow_large_increments,
        )
        return SourceCodingSampler(sc_value_iteration(params, cost.rho, dp_cfg))
    if kind == "greedy_acf":
        if isinstance(params, BinaryHmmParams):
            raise SamplerError("greedy_acf needs a real-valued signal")
        return AcfGreedySampler(
            cost,
            order=cfg.order,
            estimator=cfg.acf_estimator,
            window=cfg.window,
            max_lag=cfg.max_lag,
            step=cfg.step,
        )
    raise SamplerError(f"unknown sampler kind '{kind}'")


def _require(params: SignalParams, expected: type, kind: str) -> None:
    if not isinstance(params, expected):
        raise SamplerError(
            f"sampler '{kind}' needs {expected.__name__}, got {type(params).__name__}"
        )
