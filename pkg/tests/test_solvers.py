import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softrl.backups import backup_v, boltzmann_backup, masked_kl
from softrl.equivalence import random_mdp, random_reference
from softrl.mdp import SoftConfig, TabularMdp, boltzmann_policy, greedy_policy, soft_state_value
from softrl.solvers import (
    ConvergenceError,
    eta,
    hard_value_iteration,
    occupancy_measure,
    policy_evaluation,
    soft_value_iteration,
    state_visitation,
)

from conftest import make_constant

seeds = st.integers(0, 2**32 - 1)


def random_instance(seed):
    rng = np.random.default_rng(seed)
    S, A = int(rng.integers(2, 7)), int(rng.integers(2, 5))
    mdp = random_mdp(rng, S, A)
    return rng, mdp, SoftConfig(float(rng.choice([0.01, 0.1, 1.0])), random_reference(rng, S, A))


def test_all_terminal_mdp_has_zero_values():
    P = np.zeros((2, 2, 2))
    P[0, :, 0] = 1.0
    P[1, :, 1] = 1.0
    mdp = TabularMdp(P, np.zeros((2, 2)), np.array([1.0, 0.0]), 0.9, {0, 1})
    v, q = policy_evaluation(mdp, np.full((2, 2), 0.5), SoftConfig.uniform(2, 2, 1.0))
    assert np.all(v == 0) and np.all(q == 0)


def test_constant_fixture_values():
    mdp = make_constant()
    cfg = SoftConfig.uniform(1, 2, 0.3)
    v, q = policy_evaluation(mdp, cfg.reference, cfg)
    assert v[0] == pytest.approx(10.0, abs=1e-12)
    assert eta(mdp, cfg.reference, cfg) == pytest.approx(10.0, abs=1e-12)
    sol = soft_value_iteration(mdp, cfg)
    assert np.allclose(sol.q_star, 10.0, atol=1e-8)
    assert np.allclose(sol.pi_star, 0.5)


def test_policy_evaluation_matches_iterated_backup(m1):
    cfg = SoftConfig.uniform(3, 2, 0.5)
    pi = np.full((3, 2), 0.5)
    v = np.zeros(3)
    for _ in range(10_000):
        v = backup_v(m1, pi, v, cfg)
    assert np.allclose(policy_evaluation(m1, pi, cfg)[0], v, atol=1e-8)


@settings(max_examples=30)
@given(seeds)
def test_value_is_policy_mean_of_q_minus_kl(seed):
    rng, mdp, cfg = random_instance(seed)
    pi = rng.dirichlet(np.ones(mdp.num_actions), size=mdp.num_states)
    v, q = policy_evaluation(mdp, pi, cfg)
    assert np.allclose(v, np.sum(pi * q, axis=1) - cfg.tau * masked_kl(mdp, pi, cfg), atol=1e-10)
    assert np.allclose(backup_v(mdp, pi, v, cfg), v, atol=1e-10)


def test_solution_invariants(m1, m1_cfg):
    sol = soft_value_iteration(m1, m1_cfg, tol=1e-10)
    assert sol.residual <= 1e-10
    assert np.allclose(sol.v_star, soft_state_value(sol.q_star, m1_cfg) * [1, 1, 0])
    assert np.allclose(sol.pi_star, boltzmann_policy(sol.q_star, m1_cfg))
    q_exact = soft_value_iteration(m1, m1_cfg, tol=1e-14).q_star
    assert np.max(np.abs(sol.q_star - q_exact)) <= 1e-10


def test_small_tau_close_to_hard_value_iteration(m1):
    tau = 1e-3
    sol = soft_value_iteration(m1, SoftConfig.uniform(3, 2, tau), tol=1e-12)
    _, v_hard = hard_value_iteration(m1, tol=1e-12)
    assert np.max(np.abs(sol.v_star - v_hard)) <= tau * math.log(2) / (1 - m1.gamma) + 1e-9


def test_convergence_error_carries_last_iterate(m1, m1_cfg):
    with pytest.raises(ConvergenceError) as info:
        soft_value_iteration(m1, m1_cfg, tol=1e-12, max_iters=3)
    assert info.value.iterations == 3 and info.value.q.shape == (3, 2)
    assert info.value.residual > 0


def test_value_iteration_needs_discount_below_one(m1, m1_cfg):
    with pytest.raises(ValueError):
        soft_value_iteration(m1.with_gamma(1.0), m1_cfg)


def test_occupancy_examples():
    mdp = make_constant(gamma=0.8)
    d = occupancy_measure(mdp, np.full((1, 2), 0.5))
    assert d.state_weights[0] == pytest.approx(5.0)
    assert np.allclose(d.state_action_weights, [[2.5, 2.5]])
    d0 = occupancy_measure(mdp.with_gamma(0.0), np.full((1, 2), 0.5))
    assert d0.state_weights[0] == pytest.approx(1.0)


def test_occupancy_matches_power_series(m1):
    pi = np.array([[0.3, 0.7], [0.6, 0.4], [0.5, 0.5]])
    P_pi = np.einsum("sa,sat->st", pi, m1.transition)
    d, term = np.zeros(3), m1.initial.copy()
    for _ in range(10_000):
        d += term
        term = m1.gamma * term @ P_pi
    occ = occupancy_measure(m1, pi)
    assert np.allclose(occ.state_weights, d, atol=1e-8)
    assert occ.state_weights.sum() == pytest.approx(1 / (1 - m1.gamma), abs=1e-8)


def test_state_visitation_excludes_terminals_and_handles_gamma_one(m1):
    pi = np.full((3, 2), 0.5)
    d = state_visitation(m1, pi)
    assert d[2] == 0.0
    assert np.allclose(d[:2], occupancy_measure(m1, pi).state_weights[:2])
    # expected number of non-terminal steps is finite at gamma = 1
    d1 = state_visitation(m1.with_gamma(1.0), pi)
    assert np.all(np.isfinite(d1)) and d1.sum() > d.sum()


def test_eta_tau_zero_optimal_policy_matches_hard_evaluation(m1):
    q_hard, v_hard = hard_value_iteration(m1, tol=1e-12)
    pi = greedy_policy(q_hard)
    cfg = SoftConfig.uniform(3, 2, 0.0)
    assert eta(m1, pi, cfg) == pytest.approx(v_hard[0], abs=1e-9)


def test_soft_optimum_beats_perturbed_policies_on_m1(m1, m1_cfg):
    sol = soft_value_iteration(m1, m1_cfg, tol=1e-12)
    best = eta(m1, sol.pi_star, m1_cfg)
    rng = np.random.default_rng(0)
    for _ in range(100):
        pi = sol.pi_star + rng.uniform(0, 0.3, size=(3, 2))
        pi /= pi.sum(axis=1, keepdims=True)
        assert eta(m1, pi, m1_cfg) <= best + 1e-12


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_soft_optimum_dominates_random_policies(seed):
    rng, mdp, cfg = random_instance(seed)
    sol = soft_value_iteration(mdp, cfg)
    best = eta(mdp, sol.pi_star, cfg)
    for _ in range(200):
        pi = rng.dirichlet(np.ones(mdp.num_actions) * rng.choice([0.2, 1.0, 5.0]),
                           size=mdp.num_states)
        assert eta(mdp, pi, cfg) <= best + 1e-6


@settings(max_examples=30)
@given(seeds)
def test_soft_policy_improvement(seed):
    rng, mdp, cfg = random_instance(seed)
    pi = rng.dirichlet(np.ones(mdp.num_actions), size=mdp.num_states)
    _, q = policy_evaluation(mdp, pi, cfg)
    assert eta(mdp, boltzmann_policy(q, cfg), cfg) >= eta(mdp, pi, cfg) - 1e-9


def test_fixed_point_residual_is_small(m1, m1_cfg):
    sol = soft_value_iteration(m1, m1_cfg, tol=1e-9)
    assert np.max(np.abs(boltzmann_backup(m1, sol.q_star, m1_cfg) - sol.q_star)) <= 1e-9
