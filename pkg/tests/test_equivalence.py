import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softrl.bandit import BanditEnv, bandit_optimal_policy
from softrl.equivalence import (
    FisherSystem,
    check_bandit_decomposition,
    check_damped_q_natgrad,
    check_kl_identity,
    check_pg_ql_equivalence,
    compare,
    damped_q_residuals,
    fisher_system,
    natural_gradient,
    pg_ql_sides,
    random_mdp,
    random_reference,
)
from softrl.gradients import (
    DuelingParameterization,
    Parameterization,
    exact_targets,
    grad_policy_loss,
    induced,
    sample_trajectory,
    score,
)
from softrl.mdp import SoftConfig, TabularMdp
from softrl.solvers import soft_value_iteration, state_visitation
from softrl.suites import pg_ql_suite, random_params

seeds = st.integers(0, 2**32 - 1)


def test_compare_report_fields():
    rep = compare("x", [2.0, -4.0], [2.0, -4.5], 0.2, tau=0.1)
    assert rep.abs_gap == 0.5 and rep.lhs_norm == 4.0 and rep.rhs_norm == 4.5
    assert rep.rel_gap == pytest.approx(0.125) and rep.passed
    assert rep.per_component_gaps == [0.0, 0.5]
    assert not compare("x", [0.1], [0.4], 0.2).passed  # rel = abs when ||lhs|| < 1
    assert rep.to_dict()["metadata"] == {"tau": 0.1}


# -- bandit identities -------------------------------------------------------

def test_kl_identity_fixture_b1():
    assert check_kl_identity([1.0, 0.0], [0.9, 0.1], 1.0).abs_gap <= 1e-12
    env = BanditEnv(np.array([1.0, 0.0]))
    rep = check_kl_identity([1.0, 0.0], bandit_optimal_policy(env, 1.0), 1.0)
    assert rep.abs_gap <= 1e-12 and rep.lhs_norm == pytest.approx(0.620115, abs=1e-6)


@settings(max_examples=100)
@given(seeds)
def test_kl_identity_random(seed):
    rng = np.random.default_rng(seed)
    A = int(rng.integers(2, 8))
    rep = check_kl_identity(rng.uniform(-1, 1, A), rng.dirichlet(np.ones(A)),
                            float(rng.choice([0.01, 0.1, 1.0])),
                            reference=rng.dirichlet(np.ones(A) * 2))
    assert rep.rel_gap <= 1e-10


def test_bandit_decomposition_at_matching_q():
    rbar = np.array([0.3, -0.7, 1.1])
    rep = check_bandit_decomposition(rbar, Parameterization.tabular(rbar[None]), 0.5)
    assert rep.abs_gap <= 1e-10


def test_bandit_decomposition_b1_random_theta_with_fd():
    rng = np.random.default_rng(4)
    for _ in range(20):
        params = Parameterization.tabular(rng.normal(size=(1, 2)) * 2)
        rep = check_bandit_decomposition([1.0, 0.0], params, 1.0, fd_tolerance=1e-6)
        assert rep.rel_gap <= 1e-9 and rep.metadata["fd_rel_gap"] <= 1e-6 and rep.passed


@settings(max_examples=50)
@given(seeds, st.sampled_from(["tabular", "linear"]))
def test_bandit_decomposition_random(seed, kind):
    rng = np.random.default_rng(seed)
    A = int(rng.integers(2, 7))
    params = random_params(rng, 1, A, kind)
    rep = check_bandit_decomposition(rng.uniform(-1, 1, A), params,
                                     float(rng.choice([0.01, 0.1, 1.0])),
                                     reference=rng.dirichlet(np.ones(A) * 2))
    assert rep.rel_gap <= 1e-9


# -- MDP identity ------------------------------------------------------------

def test_pg_ql_suite_passes():
    reports = pg_ql_suite(instances=30, seed=1)
    assert len(reports) == 30 * 2 * 3 * 3
    assert max(r.rel_gap for r in reports) <= 1e-8
    assert {r.metadata["kind"] for r in reports} == {"tabular", "linear"}


def test_pg_ql_at_soft_optimum_is_trivial(m1):
    cfg = SoftConfig.uniform(3, 2, 0.5)
    q_star = soft_value_iteration(m1, cfg, tol=1e-13).q_star
    params = Parameterization.tabular(q_star)
    lhs, pol, val = pg_ql_sides(m1, params, cfg, 1)
    assert np.max(np.abs(pol)) <= 1e-8 and np.max(np.abs(val)) <= 1e-8
    assert check_pg_ql_equivalence(m1, params, cfg, 1).rel_gap <= 1e-8


def _instance(seed):
    rng = np.random.default_rng(seed)
    S, A = int(rng.integers(2, 6)), int(rng.integers(2, 5))
    mdp = random_mdp(rng, S, A)
    cfg = SoftConfig(float(rng.choice([0.1, 1.0])), random_reference(rng, S, A))
    return rng, mdp, cfg, random_params(rng, S, A, "linear"), int(rng.integers(1, 6))


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(0.2, 5.0))
def test_pg_ql_invariant_under_reward_and_tau_scaling(seed, c):
    _, mdp, cfg, params, n = _instance(seed)
    scaled = TabularMdp(mdp.transition, c * mdp.reward, mdp.initial, mdp.gamma)
    rep = check_pg_ql_equivalence(scaled, params.with_theta(c * params.theta),
                                  cfg.with_tau(c * cfg.tau), n)
    assert rep.rel_gap <= 1e-8


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_pg_ql_invariant_under_state_permutation(seed):
    rng, mdp, cfg, params, n = _instance(seed)
    perm = rng.permutation(mdp.num_states)
    P = mdp.transition[perm][:, :, perm]
    permuted = TabularMdp(P, mdp.reward[perm], mdp.initial[perm], mdp.gamma)
    p_params = Parameterization.linear(params.features[perm], params.theta)
    p_cfg = SoftConfig(cfg.tau, cfg.reference[perm])
    original = pg_ql_sides(mdp, params, cfg, n)
    moved = pg_ql_sides(permuted, p_params, p_cfg, n)
    assert check_pg_ql_equivalence(permuted, p_params, p_cfg, n).rel_gap <= 1e-8
    for a, b in zip(original, moved):
        assert np.allclose(a, b, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(-3, 3))
def test_pg_ql_invariant_under_reward_shift(seed, shift):
    _, mdp, cfg, params, n = _instance(seed)
    shifted = TabularMdp(mdp.transition, mdp.reward + shift, mdp.initial, mdp.gamma)
    assert check_pg_ql_equivalence(shifted, params, cfg, n).rel_gap <= 1e-8


def test_unfrozen_targets_break_the_identity():
    rng, mdp, cfg, params, n = _instance(9)
    rep = check_pg_ql_equivalence(mdp, params, cfg, n, unfreeze_targets=True)
    assert not rep.passed and rep.rel_gap > 1e-4


# -- Fisher system and natural gradient --------------------------------------

def test_tabular_fisher_has_per_state_constant_null_direction(m1):
    cfg = SoftConfig.uniform(3, 2, 0.5)
    params = Parameterization.tabular(np.array([[0.3, -0.4], [1.0, 0.2], [0.0, 0.0]]))
    F = fisher_system(m1, params, cfg, 2).fisher
    for s in range(3):
        ones = np.zeros(6)
        ones[2 * s:2 * s + 2] = 1.0
        assert np.allclose(F @ ones, 0.0, atol=1e-10)
    assert np.allclose(F, F.T) and np.min(np.linalg.eigvalsh(F)) >= -1e-12


def test_entropy_correction_vanishes_at_reference_policy(m1):
    cfg = SoftConfig.uniform(3, 2, 0.5)
    params = Parameterization.tabular(np.zeros((3, 2)))
    fs = fisher_system(m1, params, cfg, 2)
    targets = exact_targets(m1, induced(params, m1, cfg), None, cfg, 2)
    rows = fs.row_index
    sw = np.sqrt(targets.weights[rows[:, 0], rows[:, 1]])
    assert np.allclose(fs.adv_vector, sw * targets.delta[rows[:, 0], rows[:, 1]], atol=1e-14)


def test_exact_fisher_gradient_is_policy_gradient(m1):
    cfg = SoftConfig.uniform(3, 2, 0.5)
    params = Parameterization.tabular(np.array([[0.3, -0.4], [1.0, 0.2], [0.0, 0.0]]))
    fs = fisher_system(m1, params, cfg, 3)
    targets = exact_targets(m1, induced(params, m1, cfg), None, cfg, 3)
    assert np.allclose(fs.gradient, -grad_policy_loss(m1, params, targets, cfg), atol=1e-12)


@pytest.mark.slow
def test_sampled_fisher_within_three_standard_errors(m1):
    cfg = SoftConfig.uniform(3, 2, 0.5)
    params = Parameterization.tabular(np.array([[0.3, -0.4], [1.0, 0.2], [0.0, 0.0]]))
    ind = induced(params, m1, cfg)
    psi = score(params, ind, cfg)
    d = state_visitation(m1, ind.pi_theta)
    exact = np.einsum("s,sa,sak,saj->kj", d, ind.pi_theta, psi, psi)
    rng = np.random.default_rng(2)
    per_traj = []
    for _ in range(20_000):
        traj = sample_trajectory(m1, ind.pi_theta, rng)
        per_traj.append(fisher_system(m1, params, cfg, 1, batch=[traj]).fisher)
    per_traj = np.array(per_traj)
    se = per_traj.std(axis=0, ddof=1) / np.sqrt(len(per_traj))
    assert np.all(np.abs(per_traj.mean(axis=0) - exact) <= 3 * se + 1e-12)


def test_sampled_fisher_rows_and_empty_batch(m1):
    cfg = SoftConfig.uniform(3, 2, 0.5)
    params = Parameterization.tabular(np.zeros((3, 2)))
    rng = np.random.default_rng(0)
    batch = [sample_trajectory(m1, cfg.reference, rng) for _ in range(3)]
    fs = fisher_system(m1, params, cfg, 1, batch=batch)
    assert fs.psi_matrix.shape[0] == sum(len(t.actions) for t in batch)
    with pytest.raises(ValueError):
        fisher_system(m1, params, cfg, 1, batch=[])


def test_natural_gradient_orthonormal_rows():
    Psi = np.eye(3)[:2]
    fs = FisherSystem(Psi, np.array([1.0, 0.0]), 1.0, np.zeros((2, 2), dtype=int))
    w, resid = natural_gradient(fs)
    assert np.allclose(w, Psi.T @ np.array([1.0, 0.0]), atol=1e-10)
    assert np.allclose(resid, 0.0, atol=1e-9)


def test_normal_equations_match_qr(rng):
    Psi = rng.normal(size=(12, 4))
    fs = FisherSystem(Psi, rng.normal(size=12), 0.7, np.zeros((12, 2), dtype=int))
    w_normal, _ = natural_gradient(fs, "normal")
    w_qr, resid = natural_gradient(fs, "qr")
    assert np.allclose(w_normal, w_qr, atol=1e-10)
    assert np.allclose(Psi.T @ resid, 0.0, atol=1e-10)  # least-squares optimality
    with pytest.raises(ValueError):
        natural_gradient(fs, "svd")


def test_exact_tabular_natural_gradient_matches_pseudo_inverse(m1):
    cfg = SoftConfig.uniform(3, 2, 0.5)
    params = Parameterization.tabular(np.array([[0.3, -0.4], [1.0, 0.2], [0.0, 0.0]]))
    ind = induced(params, m1, cfg)
    psi = score(params, ind, cfg)
    d = state_visitation(m1, ind.pi_theta)
    F = np.einsum("s,sa,sak,saj->kj", d, ind.pi_theta, psi, psi)
    g = -grad_policy_loss(m1, params, exact_targets(m1, ind, None, cfg, 2), cfg)
    w, _ = natural_gradient(fisher_system(m1, params, cfg, 2))
    assert np.allclose(w, np.linalg.pinv(F) @ g, atol=1e-8)


# -- damped Q regression -----------------------------------------------------

def _dueling_instance(seed, freeze=True):
    rng = np.random.default_rng(seed)
    S, A = int(rng.integers(2, 6)), int(rng.integers(2, 5))
    mdp = random_mdp(rng, S, A)
    cfg = SoftConfig(float(rng.choice([0.01, 0.1, 1.0])), random_reference(rng, S, A))
    K = int(rng.integers(1, S * (A - 1) + 1))
    duel = DuelingParameterization(rng.normal(size=S), rng.normal(size=(S, A, K)),
                                   rng.normal(size=K), freeze_value=freeze)
    return rng, mdp, cfg, duel


def test_zero_interpolation_gives_zero_residuals():
    _, mdp, cfg, duel = _dueling_instance(0)
    lhs, rhs = damped_q_residuals(duel, duel, mdp, cfg, 0.0, 3)
    assert np.allclose(lhs, 0.0) and np.allclose(rhs, 0.0)


@pytest.mark.parametrize("seed", range(20))
def test_damped_regression_matches_natural_gradient(seed):
    rng, mdp, cfg, duel = _dueling_instance(seed)
    eps = (0.1, 0.5, 1.0)[seed % 3]
    res, step = check_damped_q_natgrad(mdp, duel, cfg, eps, int(rng.integers(1, 6)),
                                       perturbation=0.1 * rng.normal(size=duel.theta.size))
    assert res.rel_gap <= 1e-10
    assert step.rel_gap <= 1e-6


def test_damped_check_requires_frozen_value_stream():
    _, mdp, cfg, duel = _dueling_instance(1, freeze=False)
    with pytest.raises(ValueError, match="frozen"):
        check_damped_q_natgrad(mdp, duel, cfg, 0.5, 2)
