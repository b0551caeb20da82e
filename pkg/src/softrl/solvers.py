"""Exact solvers: policy evaluation, soft value iteration, occupancy, eta."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backups import boltzmann_backup, masked_kl, next_value
from .mdp import (
    SoftConfig,
    TabularMdp,
    boltzmann_policy,
    check_mdp,
    state_value,
)


class ConvergenceError(RuntimeError):
    """Value iteration hit ``max_iters`` before reaching the requested tolerance."""

    def __init__(self, message, q, iterations, residual):
        super().__init__(message)
        self.q = q
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class SoftSolution:
    q_star: np.ndarray
    v_star: np.ndarray
    pi_star: np.ndarray
    iterations: int
    residual: float


@dataclass(frozen=True)
class OccupancyMeasure:
    state_weights: np.ndarray
    state_action_weights: np.ndarray


def _policy_matrix(mdp: TabularMdp, pi, gamma=None) -> np.ndarray:
    """gamma * P_pi restricted so that terminal states carry no continuation."""
    gamma = mdp.gamma if gamma is None else gamma
    P_pi = np.einsum("sa,sat->st", np.asarray(pi, dtype=float), mdp.transition)
    return gamma * P_pi * mdp.nonterminal[None, :]


def policy_evaluation(mdp: TabularMdp, pi, cfg: SoftConfig):
    """Exact (V_pi, Q_pi) by a direct linear solve of V = r_pi - tau KL + gamma P_pi V."""
    check_mdp(mdp)
    pi = np.asarray(pi, dtype=float)
    S = mdp.num_states
    rhs = (np.sum(pi * mdp.reward, axis=1) - cfg.tau * masked_kl(mdp, pi, cfg)) * mdp.nonterminal
    v = np.linalg.solve(np.eye(S) - _policy_matrix(mdp, pi), rhs) * mdp.nonterminal
    q = (mdp.reward + mdp.gamma * next_value(mdp, v)) * mdp.nonterminal[:, None]
    return v, q


def hard_value_iteration(mdp: TabularMdp, tol=1e-10, max_iters=100_000):
    """Standard Bellman optimality iteration; returns (Q*, V*)."""
    cfg = SoftConfig.uniform(mdp.num_states, mdp.num_actions, 0.0)
    sol = soft_value_iteration(mdp, cfg, tol=tol, max_iters=max_iters)
    return sol.q_star, sol.v_star


def soft_value_iteration(mdp: TabularMdp, cfg: SoftConfig, tol: float = 1e-8,
                         max_iters: int = 100_000) -> SoftSolution:
    """Iterate Q <- T Q from Q = 0 until ||Q - Q*||_inf <= tol is guaranteed.

    The stopping rule converts the sup-norm change between iterates into a
    distance-to-fixed-point bound via the contraction factor gamma.
    """
    check_mdp(mdp)
    if not mdp.gamma < 1:
        raise ValueError("soft_value_iteration needs gamma < 1")
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    gamma = mdp.gamma
    threshold = np.inf if gamma == 0 else tol * (1 - gamma) / gamma
    q = np.zeros((mdp.num_states, mdp.num_actions))
    change = np.inf
    it = 0
    while it < max_iters:
        q_new = boltzmann_backup(mdp, q, cfg)
        change = float(np.max(np.abs(q_new - q)))
        q = q_new
        it += 1
        if change <= threshold:
            break
    residual = float(np.max(np.abs(boltzmann_backup(mdp, q, cfg) - q)))
    if change > threshold:
        raise ConvergenceError(
            f"no convergence after {it} iterations (last change {change:.3e})", q, it, residual)
    v = state_value(q, cfg) * mdp.nonterminal
    return SoftSolution(q, v, boltzmann_policy(q, cfg), it, residual)


def state_visitation(mdp: TabularMdp, pi, gamma=None) -> np.ndarray:
    """sum_t gamma^t P(s_t = s) over non-terminal states (terminal entries are zero).

    Works for gamma = 1 when the policy terminates with probability one.
    """
    A = np.eye(mdp.num_states) - _policy_matrix(mdp, pi, gamma).T
    mu = mdp.initial * mdp.nonterminal
    return np.linalg.solve(A, mu) * mdp.nonterminal


def occupancy_measure(mdp: TabularMdp, pi) -> OccupancyMeasure:
    """Discounted occupancy d = mu + gamma P_pi^T d under the raw (absorbing) dynamics."""
    if not mdp.gamma < 1:
        raise ValueError("occupancy_measure needs gamma < 1")
    pi = np.asarray(pi, dtype=float)
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    d = np.linalg.solve(np.eye(mdp.num_states) - mdp.gamma * P_pi.T, mdp.initial)
    return OccupancyMeasure(d, d[:, None] * pi)


def eta(mdp: TabularMdp, pi, cfg: SoftConfig) -> float:
    """Entropy-augmented return of ``pi`` from the initial distribution."""
    v, _ = policy_evaluation(mdp, pi, cfg)
    return float(mdp.initial @ v)
