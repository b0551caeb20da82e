"""Numerical checks of the soft-QL / policy-gradient identities.

Each ``check_*`` function evaluates both sides of an identity independently
with exact expectations and returns an ``EquivalenceReport``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .gradients import (
    DuelingParameterization,
    Parameterization,
    exact_targets,
    finite_difference,
    grad_policy_loss,
    grad_soft_q_loss,
    grad_value_loss,
    induced,
    kl_gradient,
    score,
    soft_q_loss,
)
from .mdp import SoftConfig, TabularMdp, kl_divergence, weighted_log_sum_exp

RIDGE = 1e-10


@dataclass
class EquivalenceReport:
    name: str
    lhs_norm: float
    rhs_norm: float
    abs_gap: float
    rel_gap: float
    per_component_gaps: list
    tolerance: float
    passed: bool
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def compare(name, lhs, rhs, tolerance, **metadata) -> EquivalenceReport:
    """Sup-norm comparison; rel_gap = abs_gap / max(1, ||lhs||_inf)."""
    lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    gaps = np.abs(lhs - rhs).ravel()
    lhs_norm = float(np.max(np.abs(lhs))) if lhs.size else 0.0
    abs_gap = float(gaps.max()) if gaps.size else 0.0
    rel_gap = abs_gap / max(1.0, lhs_norm)
    return EquivalenceReport(
        name=name,
        lhs_norm=lhs_norm,
        rhs_norm=float(np.max(np.abs(rhs))) if rhs.size else 0.0,
        abs_gap=abs_gap,
        rel_gap=rel_gap,
        per_component_gaps=gaps.tolist(),
        tolerance=tolerance,
        passed=bool(rel_gap <= tolerance),
        metadata=metadata,
    )


def random_mdp(rng: np.random.Generator, num_states: int, num_actions: int,
               gamma: float | None = None) -> TabularMdp:
    """Dirichlet(1) transition rows, rewards uniform in [-1, 1], no terminals."""
    P = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    r = rng.uniform(-1, 1, size=(num_states, num_actions))
    mu = rng.dirichlet(np.ones(num_states))
    if gamma is None:
        gamma = float(rng.choice([0.8, 0.9, 0.95]))
    return TabularMdp(P, r, mu, gamma)


def random_reference(rng: np.random.Generator, num_states: int, num_actions: int) -> np.ndarray:
    return rng.dirichlet(np.ones(num_actions) * 2.0, size=num_states)


# -- bandit identities -------------------------------------------------------

def _bandit_cfg(num_actions, tau, reference):
    ref = np.full(num_actions, 1.0 / num_actions) if reference is None else np.asarray(reference)
    return SoftConfig(tau, ref[None, :])


def check_kl_identity(rbar, pi, tau: float, reference=None,
                      tolerance: float = 1e-10) -> EquivalenceReport:
    """E_pi[r] - tau KL(pi || ref) against tau log E_ref[exp(r/tau)] - tau KL(pi || pi^B_r)."""
    rbar = np.asarray(rbar, dtype=float)
    pi = np.asarray(pi, dtype=float)
    cfg = _bandit_cfg(rbar.size, tau, reference)
    ref = cfg.reference[0]
    lhs = pi @ rbar - tau * kl_divergence(pi, ref)
    log_norm = weighted_log_sum_exp(rbar, ref, tau)
    pi_b = ref * np.exp((rbar - log_norm) / tau)
    rhs = log_norm - tau * kl_divergence(pi, pi_b / pi_b.sum())
    return compare("kl-ident", lhs, rhs, tolerance, tau=tau)


def bandit_value_loss(theta, params: Parameterization, rbar, weights, kl_frozen, cfg) -> float:
    q = params.with_theta(theta).q_values()[0]
    v = weighted_log_sum_exp(q, cfg.reference[0], cfg.tau)
    return float(0.5 * np.sum(weights * (v - (rbar - cfg.tau * kl_frozen)) ** 2))


def bandit_q_loss(theta, params: Parameterization, rbar, weights) -> float:
    q = params.with_theta(theta).q_values()[0]
    return float(0.5 * np.sum(weights * (q - rbar) ** 2))


def bandit_eta_of_theta(theta, params: Parameterization, rbar, cfg) -> float:
    ind = induced(params.with_theta(theta), None, cfg)
    pi = ind.pi_theta[0]
    return float(pi @ rbar - cfg.tau * kl_divergence(pi, cfg.reference[0]))


def bandit_decomposition_sides(rbar, params: Parameterization, tau: float, reference=None):
    """Analytic (LHS, policy part, value part) of the bandit loss-gradient split."""
    rbar = np.asarray(rbar, dtype=float)
    cfg = _bandit_cfg(rbar.size, tau, reference)
    ind = induced(params, None, cfg)
    pi = ind.pi_theta[0]
    phi = params.features[0]
    q = ind.q_theta[0]
    lhs = np.einsum("a,ak->k", pi * (q - rbar), phi)
    psi = score(params, ind, cfg)[0]
    grad_kl = kl_gradient(params, ind, cfg)[0]
    grad_eta = psi.T @ (pi * rbar) - tau * grad_kl
    kl = kl_divergence(pi, cfg.reference[0])
    grad_v = pi @ phi
    value_part = np.sum(pi * (ind.v_theta[0] - (rbar - tau * kl))) * grad_v
    return lhs, -tau * grad_eta, value_part


def check_bandit_decomposition(rbar, params: Parameterization, tau: float, reference=None,
                               tolerance: float = 1e-9,
                               fd_tolerance: float | None = None) -> EquivalenceReport:
    """grad of the squared error of q_theta against -tau grad eta + value-error gradient.

    With ``fd_tolerance`` set, each analytic side is also compared against central
    differences of its defining scalar; the report fails if either comparison does.
    """
    rbar = np.asarray(rbar, dtype=float)
    cfg = _bandit_cfg(rbar.size, tau, reference)
    lhs, policy_part, value_part = bandit_decomposition_sides(rbar, params, tau, reference)
    report = compare("bandit-decomp", lhs, policy_part + value_part, tolerance, tau=tau,
                     kind=params.kind)
    if fd_tolerance is not None:
        ind = induced(params, None, cfg)
        weights = ind.pi_theta[0]
        kl = kl_divergence(weights, cfg.reference[0])
        fd_lhs = finite_difference(lambda th: bandit_q_loss(th, params, rbar, weights),
                                   params.theta)
        fd_pg = -tau * finite_difference(lambda th: bandit_eta_of_theta(th, params, rbar, cfg),
                                         params.theta)
        fd_val = finite_difference(
            lambda th: bandit_value_loss(th, params, rbar, weights, kl, cfg), params.theta)
        fd_gap = max(_rel(lhs, fd_lhs), _rel(policy_part, fd_pg), _rel(value_part, fd_val))
        report.metadata["fd_rel_gap"] = fd_gap
        report.passed = report.passed and fd_gap <= fd_tolerance
    return report


def _rel(a, b) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(a))))


# -- MDP gradient identity ---------------------------------------------------

def pg_ql_sides(mdp: TabularMdp, params: Parameterization, cfg: SoftConfig, n: int):
    """(grad L_Q, tau grad L_policy, grad L_value) under one frozen target batch."""
    ind = induced(params, mdp, cfg)
    targets = exact_targets(mdp, ind, None, cfg, n)
    lhs = grad_soft_q_loss(mdp, params, targets, cfg)
    pol = cfg.tau * grad_policy_loss(mdp, params, targets, cfg)
    val = grad_value_loss(mdp, params, targets, cfg)
    return lhs, pol, val


def _coupled_q_loss(mdp, params, cfg, n):
    """Soft-Q loss with the targets and weights recomputed at every theta."""

    def loss(theta):
        p = params.with_theta(theta)
        return soft_q_loss(mdp, p, exact_targets(mdp, induced(p, mdp, cfg), None, cfg, n), cfg)

    return loss


def check_pg_ql_equivalence(mdp: TabularMdp, params: Parameterization, cfg: SoftConfig, n: int,
                            tolerance: float = 1e-8, seed=None,
                            unfreeze_targets: bool = False) -> EquivalenceReport:
    """grad L_Q = tau grad L_policy + grad L_value with frozen targets and weights.

    ``unfreeze_targets`` differentiates the soft-Q loss through its targets
    (by central differences); the identity is not expected to hold then.
    """
    lhs, pol, val = pg_ql_sides(mdp, params, cfg, n)
    if unfreeze_targets:
        lhs = finite_difference(_coupled_q_loss(mdp, params, cfg, n), params.theta)
    return compare("pg-ql", lhs, pol + val, tolerance, tau=cfg.tau, gamma=mdp.gamma, n=n,
                   seed=seed, kind=params.kind, unfrozen=unfreeze_targets)


# -- natural gradient --------------------------------------------------------

@dataclass(frozen=True)
class FisherSystem:
    """Rows psi_t = grad log pi(a_t|s_t) and entropy-corrected advantages."""

    psi_matrix: np.ndarray
    adv_vector: np.ndarray
    epsilon: float
    row_index: np.ndarray

    @property
    def fisher(self) -> np.ndarray:
        return self.psi_matrix.T @ self.psi_matrix

    @property
    def gradient(self) -> np.ndarray:
        return self.psi_matrix.T @ self.adv_vector


def fisher_system(mdp: TabularMdp, params: Parameterization, cfg: SoftConfig, n: int,
                  epsilon: float = 1.0, batch=None, frozen_v=None) -> FisherSystem:
    """Build (Psi, Delta~) exactly or from sampled episodes.

    Exact mode has one row per non-terminal (s, a) weighted by sqrt(d(s) pi(a|s)),
    so Psi^T Psi and Psi^T Delta~ are the occupancy-weighted Fisher matrix and
    policy gradient.  Sampled mode has one row per visited step, each scaled by
    1/sqrt(len(batch)) so the same products are unbiased estimates.
    """
    ind = induced(params, mdp, cfg)
    psi = score(params, ind, cfg)
    log_ratio = ind.log_pi_theta - np.log(cfg.reference)
    targets = exact_targets(mdp, ind, frozen_v, cfg, n)
    corrected = targets.delta - cfg.tau * (log_ratio - targets.kl[:, None])
    if batch is None:
        w = targets.weights
        rows = np.argwhere(w > 0)
        sw = np.sqrt(w[rows[:, 0], rows[:, 1]])
        Psi = sw[:, None] * psi[rows[:, 0], rows[:, 1]]
        adv = sw * corrected[rows[:, 0], rows[:, 1]]
        return FisherSystem(Psi, adv, epsilon, rows)
    if not batch:
        raise ValueError("empty batch")
    rows, discounts = [], []
    for traj in batch:
        for t, (s, a) in enumerate(zip(traj.states[:-1], traj.actions)):
            rows.append((s, a))
            discounts.append(mdp.gamma ** t)
    rows = np.array(rows, dtype=int)
    sw = np.sqrt(np.array(discounts) / len(batch))
    Psi = sw[:, None] * psi[rows[:, 0], rows[:, 1]]
    adv = sw * corrected[rows[:, 0], rows[:, 1]]
    return FisherSystem(Psi, adv, epsilon, rows)


def natural_gradient(fs: FisherSystem, method: str = "normal", ridge: float = RIDGE):
    """w = epsilon (Psi^T Psi)^+ Psi^T Delta~ and the residual Psi w - epsilon Delta~.

    ``method="normal"`` solves the ridge-regularized normal equations;
    ``method="qr"`` solves the least-squares problem through a QR factorization.
    """
    Psi, rhs = fs.psi_matrix, fs.epsilon * fs.adv_vector
    if method == "normal":
        K = Psi.shape[1]
        w = np.linalg.solve(Psi.T @ Psi + ridge * np.eye(K), Psi.T @ rhs)
    elif method == "qr":
        Qm, R = np.linalg.qr(Psi)
        w = np.linalg.solve(R, Qm.T @ rhs)
    else:
        raise ValueError(f"unknown method {method!r}")
    return w, Psi @ w - rhs


def damped_q_residuals(dueling: DuelingParameterization, old: DuelingParameterization,
                       mdp: TabularMdp, cfg: SoftConfig, epsilon: float, n: int):
    """(Q_theta - Q^eps, tau log(pi/pi_old) - eps Delta~) per (s, a) for the damped regression."""
    frozen_v = old.value
    old_params = old.policy_params(cfg)
    ind_old = induced(old_params, mdp, cfg)
    targets = exact_targets(mdp, ind_old, frozen_v, cfg, n)
    q_old = old.q_values(cfg)
    q_hat = old.value[:, None] + cfg.tau * targets.kl[:, None] + targets.delta
    q_damped = q_old + epsilon * (q_hat - q_old)
    lhs = dueling.q_values(cfg) - q_damped
    log_pi, log_pi_old = dueling.log_policy(cfg), old.log_policy(cfg)
    log_ratio_old = log_pi_old - np.log(cfg.reference)
    adv = targets.delta - cfg.tau * (log_ratio_old - targets.kl[:, None])
    rhs = cfg.tau * (log_pi - log_pi_old) - epsilon * adv
    mask = mdp.nonterminal
    return lhs[mask], rhs[mask]


def damped_gauss_newton_step(dueling: DuelingParameterization, mdp: TabularMdp,
                             cfg: SoftConfig, epsilon: float, n: int,
                             ridge: float = RIDGE) -> np.ndarray:
    """One Gauss-Newton step on sum d pi 1/2 (Q_theta - Q^eps)^2 over the advantage stream."""
    old_params = dueling.policy_params(cfg)
    ind = induced(old_params, mdp, cfg)
    targets = exact_targets(mdp, ind, dueling.value, cfg, n)
    q_old = dueling.q_values(cfg)
    q_hat = dueling.value[:, None] + cfg.tau * targets.kl[:, None] + targets.delta
    q_damped = q_old + epsilon * (q_hat - q_old)
    w = targets.weights
    sel = w > 0
    sw = np.sqrt(w[sel])
    J = sw[:, None] * dueling.q_jacobian(cfg)[sel]
    resid = sw * (q_old - q_damped)[sel]
    K = J.shape[1]
    # Ridge scaled by tau^2 so it matches RIDGE on Psi^T Psi, since J = tau Psi.
    return -np.linalg.solve(J.T @ J + ridge * cfg.tau ** 2 * np.eye(K), J.T @ resid)


def check_damped_q_natgrad(mdp: TabularMdp, dueling: DuelingParameterization, cfg: SoftConfig,
                           epsilon: float, n: int, residual_tolerance: float = 1e-10,
                           step_tolerance: float = 1e-6, perturbation=None, seed=None):
    """Residual identity of the damped Q regression and its Gauss-Newton step.

    The residual identity is checked at the current parameters and, when
    ``perturbation`` is given, at theta_old + perturbation.  The Gauss-Newton
    step of the damped regression with interpolation ``epsilon`` is compared to
    the natural-gradient least-squares step with step size ``epsilon / tau``.
    Returns ``(residual_report, step_report)``.
    """
    if not dueling.freeze_value:
        raise ValueError("damped Q regression matches the natural gradient only with the "
                         "value stream frozen")
    lhs, rhs = damped_q_residuals(dueling, dueling, mdp, cfg, epsilon, n)
    if perturbation is not None:
        moved = dueling.with_theta(dueling.theta + perturbation)
        lhs2, rhs2 = damped_q_residuals(moved, dueling, mdp, cfg, epsilon, n)
        lhs, rhs = np.concatenate([lhs, lhs2]), np.concatenate([rhs, rhs2])
    meta = dict(tau=cfg.tau, gamma=mdp.gamma, n=n, epsilon=epsilon, seed=seed)
    residual_report = compare("natgrad-residual", lhs, rhs, residual_tolerance, **meta)
    gn = damped_gauss_newton_step(dueling, mdp, cfg, epsilon, n)
    fs = fisher_system(mdp, dueling.policy_params(cfg), cfg, n, epsilon=epsilon / cfg.tau,
                       frozen_v=dueling.value)
    ng, _ = natural_gradient(fs)
    step_report = compare("natgrad-step", gn, ng, step_tolerance, **meta)
    return residual_report, step_report
