"""Signal generators for the TANS toolkit.

Three signal classes are supported: a unit-power AR(1) process, an AR(1)
process whose coefficient follows a hidden two-state Markov chain, and a
binary signal that equals the state of a two-state Markov chain.

All generators use numpy's PCG64 bit generator seeded with the integer seed,
and draw their random numbers in a fixed order (initial value, initial chain
state, chain uniforms, innovation normals), so a given (params, length, seed)
triple always produces the same trace.
"""

from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np
from scipy.signal import lfilter

from tans import TansError
from tans.logger import get_logger

logger = get_logger(__name__)

BIT_GENERATOR = "PCG64"


class SignalError(TansError):
    """Exception raised for signal generation errors."""

    pass


def _check_unit_interval(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")


@dataclass(frozen=True)
class Ar1Params:
    """First-order autoregressive model X(t+1) = alpha X(t) + Z(t+1)."""

    alpha: float

    def __post_init__(self) -> None:
        _check_unit_interval("alpha", self.alpha)

    @property
    def noise_variance(self) -> float:
        """Innovation variance keeping the process at unit power."""
        return 1.0 - self.alpha**2


@dataclass(frozen=True)
class MarkovAr1Params:
    """AR(1) model whose coefficient is selected by a hidden two-state chain.

    ``p01`` is the probability of moving from state 0 to state 1 in one step,
    ``p10`` the probability of moving from state 1 to state 0.
    """

    alpha0: float
    alpha1: float
    p01: float
    p10: float

    def __post_init__(self) -> None:
        _check_unit_interval("alpha0", self.alpha0)
        _check_unit_interval("alpha1", self.alpha1)
        _check_unit_interval("p01", self.p01)
        _check_unit_interval("p10", self.p10)

    @property
    def alphas(self) -> Tuple[float, float]:
        return (self.alpha0, self.alpha1)

    @property
    def symmetric(self) -> bool:
        return self.p01 == self.p10

    @property
    def stationary(self) -> Tuple[float, float]:
        """Stationary distribution (pi_0, pi_1) of the hidden chain."""
        total = self.p01 + self.p10
        return (self.p10 / total, self.p01 / total)

    def alpha(self, theta: int) -> float:
        return self.alphas[theta]

    def leave(self, theta: int) -> float:
        """Probability of leaving state ``theta`` in one step."""
        return self.p01 if theta == 0 else self.p10

    def stay(self, theta: int) -> float:
        return 1.0 - self.leave(theta)


@dataclass(frozen=True)
class BinaryHmmParams:
    """Binary Markov signal: ``eps0`` is Pr[0 -> 1], ``eps1`` is Pr[1 -> 0]."""

    eps0: float
    eps1: float

    def __post_init__(self) -> None:
        _check_unit_interval("eps0", self.eps0)
        _check_unit_interval("eps1", self.eps1)

    @property
    def stationary(self) -> Tuple[float, float]:
        total = self.eps0 + self.eps1
        return (self.eps1 / total, self.eps0 / total)

    def eps(self, state: int) -> float:
        return self.eps0 if state == 0 else self.eps1


SignalParams = Union[Ar1Params, MarkovAr1Params, BinaryHmmParams]


@dataclass
class SignalTrace:
    """A finite signal realization plus its hidden-state ground truth."""

    values: np.ndarray
    hidden_states: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    seed: int = 0
    model: str = "ar1"

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.hidden_states = np.asarray(self.hidden_states, dtype=np.int64)
        if self.hidden_states.size and self.hidden_states.size != self.values.size:
            raise SignalError(
                f"hidden_states length {self.hidden_states.size} does not match "
                f"values length {self.values.size}"
            )

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def is_binary(self) -> bool:
        return self.model == "binary_hmm"


def make_rng(seed: int) -> np.random.Generator:
    """Return the toolkit's named generator for ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def _check_length(length: int) -> None:
    if length < 1:
        raise SignalError(f"length must be at least 1, got {length}")


def _draw_chain(
    rng: np.random.Generator,
    length: int,
    initial_one: float,
    leave: Tuple[float, float],
) -> np.ndarray:
    """Draw a two-state chain path with a stationary initial state."""
    states = np.empty(length, dtype=np.int64)
    state = 1 if rng.random() < initial_one else 0
    uniforms = rng.random(length - 1).tolist()
    states[0] = state
    for t, u in enumerate(uniforms, start=1):
        if u < leave[state]:
            state = 1 - state
        states[t] = state
    return states


def gen_ar1(params: Ar1Params, length: int, seed: int) -> SignalTrace:
    """Generate a stationary unit-power AR(1) trace.

    Args:
        params: AR(1) coefficient.
        length: Number of time indices.
        seed: Generator seed.

    Returns:
        SignalTrace with empty hidden_states.
    """
    _check_length(length)
    logger.debug(f"Generating ar1 trace: alpha={params.alpha}, length={length}, seed={seed}")

    rng = make_rng(seed)
    x0 = rng.standard_normal()
    noise = rng.standard_normal(length - 1) * np.sqrt(params.noise_variance)

    values = np.empty(length)
    values[0] = x0
    if length > 1:
        values[1:], _ = lfilter([1.0], [1.0, -params.alpha], noise, zi=[params.alpha * x0])

    return SignalTrace(values=values, seed=seed, model="ar1")


def gen_markov_ar1(params: MarkovAr1Params, length: int, seed: int) -> SignalTrace:
    """Generate a Markov-modulated AR(1) trace.

    The hidden state at time t selects the coefficient used for the step from
    X(t) to X(t+1).
    """
    _check_length(length)
    logger.debug(
        f"Generating markov_ar1 trace: alphas={params.alphas}, "
        f"p01={params.p01}, p10={params.p10}, length={length}, seed={seed}"
    )

    rng = make_rng(seed)
    x0 = rng.standard_normal()
    states = _draw_chain(rng, length, params.stationary[1], (params.p01, params.p10))
    noise = rng.standard_normal(length - 1)

    alphas = np.asarray(params.alphas)[states[:-1]]
    noise = noise * np.sqrt(1.0 - alphas**2)

    values = np.empty(length)
    x = x0
    values[0] = x
    for t, (a, z) in enumerate(zip(alphas.tolist(), noise.tolist()), start=1):
        x = a * x + z
        values[t] = x

    return SignalTrace(values=values, hidden_states=states, seed=seed, model="markov_ar1")


def gen_binary_hmm(params: BinaryHmmParams, length: int, seed: int) -> SignalTrace:
    """Generate a binary trace whose value equals the chain state."""
    _check_length(length)
    logger.debug(
        f"Generating binary_hmm trace: eps0={params.eps0}, eps1={params.eps1}, "
        f"length={length}, seed={seed}"
    )

    rng = make_rng(seed)
    states = _draw_chain(rng, length, params.stationary[1], (params.eps0, params.eps1))

    return SignalTrace(
        values=states.astype(float), hidden_states=states, seed=seed, model="binary_hmm"
    )


def generate(params: SignalParams, length: int, seed: int) -> SignalTrace:
    """Dispatch to the generator matching the parameter type."""
    if isinstance(params, Ar1Params):
        return gen_ar1(params, length, seed)
    if isinstance(params, MarkovAr1Params):
        return gen_markov_ar1(params, length, seed)
    if isinstance(params, BinaryHmmParams):
        return gen_binary_hmm(params, length, seed)
    raise SignalError(f"unsupported signal parameters: {type(params).__name__}")
