"""Tests for dp module."""

import itertools
import logging

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss

from tans.dp import (
    AdpConfig,
    DpConfig,
    DpError,
    PolicyTable,
    adp_step,
    ar1_value_iteration,
    increment_limit,
    sc_bellman,
    sc_cost_curve,
    sc_reconstruct,
    sc_state_cost,
    sc_value_iteration,
)
from tans.greedy import (
    CostParams,
    ar1_greedy_increment,
    estimate_theta,
    greedy_markov_step,
    markov_cost_curve,
)
from tans.prediction import AutocorrFn, SamplingState, glp_solve_many
from tans.reconstruct import SampleSet
from tans.signals import BinaryHmmParams, MarkovAr1Params, gen_markov_ar1


def evaluate_policy(params: BinaryHmmParams, rho: float, beta: float, t_max: int, policy):
    """Cost-to-go of a fixed policy from the linear policy-evaluation equations."""
    cost = np.empty(2)
    transition = np.empty((2, 2))
    for state in (0, 1):
        T = policy[state]
        eps = params.eps(state)
        cost[state] = sc_cost_curve(eps, t_max, rho)[T - 1]
        stay = (1 - eps) ** T
        transition[state, state] = stay
        transition[state, 1 - state] = 1 - stay
    return np.linalg.solve(np.eye(2) - beta * transition, cost)


def reference_adp_step(state, params, cost, cfg) -> int:
    """ADP step with every candidate state estimated one at a time."""
    estimate = estimate_theta(state, params)
    costs = markov_cost_curve(estimate, params, cost)
    acf = AutocorrFn.conditional(params.alphas).resolve(estimate.theta_hat)
    batch = glp_solve_many(state, np.arange(1, cost.t_up + 1), acf)
    predicted = batch.weights @ np.asarray(state.values[::-1])
    if cfg.quality_nodes:
        nodes, weights = hermegauss(cfg.quality_nodes)
        weights = weights / weights.sum()
    else:
        nodes, weights = np.zeros(1), np.ones(1)

    quality = np.zeros(cost.t_up)
    for k in range(cost.t_up):
        for x, w in zip(nodes, weights):
            value = predicted[k] + np.sqrt(batch.err_variance[k]) * x
            nxt = state.advance(state.last_time + k + 1, value)
            quality[k] += w * greedy_markov_step(nxt, params, cost)[0]
    sign = -1.0 if cfg.quality_sign == "flipped" else 1.0
    return int(np.argmin(costs + sign * cfg.beta * (cfg.gamma_quality * quality))) + 1


@pytest.fixture
def binary_params():
    """Binary Markov signal with rare transitions."""
    return BinaryHmmParams(eps0=0.1, eps1=0.01)


class TestDpConfig:
    """Tests for DpConfig and AdpConfig."""

    def test_beta_range(self):
        """Test that the discount must lie strictly inside (0, 1)."""
        with pytest.raises(ValueError, match="beta"):
            DpConfig(beta=1.0)
        with pytest.raises(ValueError, match="beta"):
            AdpConfig(beta=1.0)

    def test_quality_sign(self):
        """Test that an unknown quality sign raises error."""
        with pytest.raises(ValueError, match="quality_sign"):
            AdpConfig(quality_sign="negative")


class TestSourceCodingCost:
    """Tests for the online source-coding state cost."""

    def test_state_cost_values(self):
        """Test state costs by hand."""
        assert sc_state_cost(0.5, 1, 2.0) == pytest.approx(2.0)
        assert sc_state_cost(0.5, 2, 1.5) == pytest.approx(1.25)
        assert sc_state_cost(0.1, 3, 0.0) == pytest.approx(0.2 + 0.09)

    def test_curve_matches_sum(self):
        """Test the vectorized curve against the defining sum."""
        eps, rho = 0.05, 3.0
        curve = sc_cost_curve(eps, 15, rho)
        for T in range(1, 16):
            expected = sum((1 - eps) ** (j - 1) * eps * (T - j) for j in range(1, T)) + rho / T
            assert curve[T - 1] == pytest.approx(expected)

    def test_invalid_increment(self):
        """Test that T = 0 raises error."""
        with pytest.raises(DpError, match="increment"):
            sc_state_cost(0.1, 0, 1.0)

    def test_increment_limit(self, binary_params):
        """Test the rare-transition increment limit."""
        assert increment_limit(binary_params) == 2
        assert increment_limit(BinaryHmmParams(eps0=0.01, eps1=0.002)) == 20


class TestValueIteration:
    """Tests for sc_value_iteration."""

    @pytest.mark.parametrize("rho", [0.1, 0.3, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0])
    def test_matches_exhaustive_policy_search(self, binary_params, rho):
        """Test the solution against every stationary policy."""
        cfg = DpConfig(beta=0.9, t_max=20, tol=1e-12, allow_large_increments=True)
        policy = sc_value_iteration(binary_params, rho, cfg)
        assert policy.converged

        best = np.full(2, np.inf)
        for candidate in itertools.product(range(1, 21), repeat=2):
            best = np.minimum(best, evaluate_policy(binary_params, rho, 0.9, 20, candidate))

        np.testing.assert_allclose(policy.j_values, best, rtol=1e-8, atol=1e-8)
        chosen = evaluate_policy(binary_params, rho, 0.9, 20, policy.increments)
        np.testing.assert_allclose(chosen, best, rtol=1e-8, atol=1e-8)

    def test_fixed_point(self, binary_params):
        """Test that the solved values satisfy the Bellman equation."""
        cfg = DpConfig(beta=0.8, t_max=20, allow_large_increments=True)
        policy = sc_value_iteration(binary_params, 4.0, cfg)
        applied, increments = sc_bellman(np.asarray(policy.j_values), binary_params, 4.0, cfg)
        np.testing.assert_allclose(applied, policy.j_values, atol=1e-8)
        assert tuple(increments.tolist()) == policy.increments
        assert policy.residual < 1e-8

    def test_myopic_limit(self, binary_params):
        """Test that a vanishing discount gives the per-state greedy increment."""
        cfg = DpConfig(beta=1e-9, t_max=20, allow_large_increments=True)
        policy = sc_value_iteration(binary_params, 3.0, cfg)
        for state in (0, 1):
            curve = sc_cost_curve(binary_params.eps(state), 20, 3.0)
            assert policy.increment(state) == int(np.argmin(curve)) + 1

    def test_large_increments_need_override(self, binary_params):
        """Test that t_max above the limit raises error."""
        with pytest.raises(DpError, match="allow_large_increments"):
            sc_value_iteration(binary_params, 1.0, DpConfig(t_max=20))

    def test_not_converged(self, binary_params, caplog):
        """Test that hitting max_iters is reported, not raised."""
        cfg = DpConfig(t_max=2, max_iters=1)
        with caplog.at_level(logging.WARNING, logger="tans.dp"):
            policy = sc_value_iteration(binary_params, 1.0, cfg)
        assert not policy.converged
        assert policy.iterations == 1
        assert "did not converge" in caplog.text

    def test_policy_dict_round_trip(self, binary_params):
        """Test that a policy survives its dictionary form."""
        policy = sc_value_iteration(binary_params, 2.0, DpConfig(t_max=2))
        data = policy.to_dict()
        assert set(data) == {"rho", "beta", "J", "T", "iterations", "residual", "converged"}
        assert PolicyTable.from_dict(data) == policy


class TestAr1ValueIteration:
    """Tests for ar1_value_iteration."""

    def test_single_state_fixed_point(self):
        """Test that the AR(1) solution is the greedy cost over (1 - beta)."""
        cost = CostParams(rho=5.0, t_up=50)
        policy = ar1_value_iteration(0.9, cost, DpConfig(beta=0.9))
        assert policy.converged
        assert policy.increments == (ar1_greedy_increment(0.9, cost),)
        expected = (0.19 + 1 - 0.9**4 + 5.0 / 3) / (1 - 0.9)
        assert policy.j_values[0] == pytest.approx(expected, rel=1e-8)


class TestScReconstruct:
    """Tests for sc_reconstruct."""

    def test_hold_last_sample(self):
        """Test that missing indices repeat the most recent sample."""
        samples = SampleSet(times=[0, 3], values=[1.0, 0.0], length=6)
        recon = sc_reconstruct(samples)
        np.testing.assert_array_equal(recon.values, [1, 1, 1, 0, 0, 0])
        assert recon.method == "fill"

    def test_non_binary_samples(self):
        """Test that real-valued samples raise error."""
        with pytest.raises(DpError, match="binary"):
            sc_reconstruct(SampleSet(times=[0, 1], values=[0.5, 1.0], length=3))

    def test_fill_is_most_probable_completion(self):
        """Test that the fill is the most probable causal completion of every gap."""
        eps = 0.01

        def path_probability(start, path):
            prob, prev = 1.0, start
            for x in path:
                prob *= 1.0 - eps if x == prev else eps
                prev = x
            return prob

        rng = np.random.default_rng(5)
        for _ in range(20):
            inner = rng.choice(np.arange(1, 12), size=3, replace=False)
            times = np.sort(np.concatenate([[0], inner]))
            values = rng.integers(0, 2, size=times.size).astype(float)
            recon = sc_reconstruct(SampleSet(times=times, values=values, length=12))
            bounds = np.append(times, 12)
            for left, right, value in zip(bounds[:-1], bounds[1:], values):
                gap = int(right - left - 1)
                if gap == 0:
                    continue
                completions = itertools.product((0.0, 1.0), repeat=gap)
                best = max(completions, key=lambda path: path_probability(value, path))
                np.testing.assert_array_equal(recon.values[left + 1 : right], best)


class TestAdpStep:
    """Tests for adp_step."""

    @pytest.fixture
    def setup(self):
        params = MarkovAr1Params(alpha0=0.7, alpha1=0.99, p01=0.1, p10=0.1)
        cost = CostParams(rho=2.0, t_up=20)
        state = SamplingState((0, 2, 4, 6), (0.8, 0.75, 0.72, 0.7))
        return params, cost, state

    def test_no_discount_is_greedy(self, setup):
        """Test that beta = 0 reduces to the greedy step."""
        params, cost, state = setup
        greedy = greedy_markov_step(state, params, cost)[0]
        assert adp_step(state, params, cost, AdpConfig(beta=0.0)) == greedy

    def test_no_quality_is_greedy(self, setup):
        """Test that gamma = 0 reduces to the greedy step."""
        params, cost, state = setup
        greedy = greedy_markov_step(state, params, cost)[0]
        assert adp_step(state, params, cost, AdpConfig(beta=0.5, gamma_quality=0.0)) == greedy

    @pytest.mark.parametrize("sign", ["flipped", "literal"])
    @pytest.mark.parametrize("nodes", [0, 3])
    def test_increment_in_range(self, setup, sign, nodes):
        """Test that every quality variant returns a valid increment."""
        params, cost, state = setup
        cfg = AdpConfig(beta=0.5, gamma_quality=0.1, quality_sign=sign, quality_nodes=nodes)
        assert 1 <= adp_step(state, params, cost, cfg) <= cost.t_up

    def test_deterministic(self, setup):
        """Test that the step depends on the state alone."""
        params, cost, state = setup
        cfg = AdpConfig(beta=0.7, gamma_quality=0.2, quality_nodes=5)
        assert adp_step(state, params, cost, cfg) == adp_step(state, params, cost, cfg)

    @pytest.mark.parametrize("nodes", [0, 3])
    @pytest.mark.parametrize("sign", ["flipped", "literal"])
    @pytest.mark.parametrize("m", [2, 4, 8])
    def test_matches_candidate_loop(self, nodes, sign, m):
        """Test that the batched step equals estimating every candidate state separately."""
        params = MarkovAr1Params(alpha0=0.3, alpha1=0.98, p01=0.02, p10=0.02)
        cost = CostParams(rho=2.0, t_up=15)
        cfg = AdpConfig(beta=0.6, gamma_quality=0.3, quality_sign=sign, quality_nodes=nodes)
        trace = gen_markov_ar1(params, 2000, seed=m)
        for start in range(0, 1500, 150):
            times = tuple(range(start, start + 3 * m, 3))
            state = SamplingState(times, tuple(trace.values[list(times)]))
            assert adp_step(state, params, cost, cfg) == reference_adp_step(state, params, cost, cfg)
