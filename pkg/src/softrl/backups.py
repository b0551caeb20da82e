"""Expectation-level backup operators for the KL-regularized objective.

Every operator works on whole tables and treats terminal states as having
zero value: their entries in an input table are ignored and their rows in an
output table are zero.
"""
from __future__ import annotations

import numpy as np

from .mdp import SoftConfig, TabularMdp, boltzmann_policy, kl_rows, state_value


def masked_kl(mdp: TabularMdp, pi, cfg: SoftConfig) -> np.ndarray:
    """Per-state KL(pi || ref), zero at terminal states."""
    if cfg.tau == 0:
        return np.zeros(mdp.num_states)
    return kl_rows(pi, cfg.reference) * mdp.nonterminal


def next_value(mdp: TabularMdp, v) -> np.ndarray:
    """E_{s' ~ P(.|s,a)}[V(s')] with terminal values forced to zero, shape (S, A)."""
    return mdp.transition @ (np.asarray(v, dtype=float) * mdp.nonterminal)


def policy_value_of_q(mdp: TabularMdp, pi, q, cfg: SoftConfig) -> np.ndarray:
    """V(s) = E_{a~pi}[Q(s, a)] - tau KL(s), zero at terminals."""
    v = np.sum(np.asarray(pi) * np.asarray(q), axis=1) - cfg.tau * masked_kl(mdp, pi, cfg)
    return v * mdp.nonterminal


def backup_v(mdp: TabularMdp, pi, v, cfg: SoftConfig) -> np.ndarray:
    """[T_pi V](s) = E_{a~pi}[r + gamma E V(s')] - tau KL(pi || ref)(s)."""
    pi = np.asarray(pi, dtype=float)
    one_step = mdp.reward + mdp.gamma * next_value(mdp, v)
    out = np.sum(pi * one_step, axis=1) - cfg.tau * masked_kl(mdp, pi, cfg)
    return out * mdp.nonterminal


def backup_q(mdp: TabularMdp, pi, q, cfg: SoftConfig) -> np.ndarray:
    """[T_pi Q](s, a) = r + gamma E_{s'}[E_{a'~pi} Q(s', a') - tau KL(s')]."""
    v = policy_value_of_q(mdp, pi, q, cfg)
    return (mdp.reward + mdp.gamma * next_value(mdp, v)) * mdp.nonterminal[:, None]


def n_step_backup(mdp: TabularMdp, pi, x, cfg: SoftConfig, n: int) -> np.ndarray:
    """n-fold composition of ``backup_v`` (1-D input) or ``backup_q`` (2-D input)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    x = np.asarray(x, dtype=float)
    step = backup_v if x.ndim == 1 else backup_q
    for _ in range(n):
        x = step(mdp, pi, x, cfg)
    return x


def boltzmann_backup(mdp: TabularMdp, q, cfg: SoftConfig) -> np.ndarray:
    """[T Q](s, a) = r + gamma E_{s'}[V_Q(s')]; the hard optimality backup at tau = 0."""
    v = state_value(q, cfg)
    return (mdp.reward + mdp.gamma * next_value(mdp, v)) * mdp.nonterminal[:, None]


def boltzmann_backup_expectation_form(mdp: TabularMdp, q, cfg: SoftConfig) -> np.ndarray:
    """Same operator written as E_{pi^B}[Q] - tau KL(pi^B || ref) at the next state."""
    pi = boltzmann_policy(q, cfg)
    return backup_q(mdp, pi, q, cfg)


def boltzmann_nstep_backup(mdp: TabularMdp, q, cfg: SoftConfig, n: int) -> np.ndarray:
    """T_{pi^B, n} Q with the Boltzmann policy of the input Q held fixed.

    Equals tau KL(s) + E[sum_{t<n} gamma^t (r_t - tau KL_t) + gamma^n V_Q(s_n)];
    the leading KL cancels the t = 0 penalty, leaving r + gamma P W_{n-1} where
    W_0 = V_Q and W_k = T_pi W_{k-1} on state values.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    pi = boltzmann_policy(q, cfg)
    w = state_value(q, cfg) * mdp.nonterminal
    for _ in range(n - 1):
        w = backup_v(mdp, pi, w, cfg)
    return (mdp.reward + mdp.gamma * next_value(mdp, w)) * mdp.nonterminal[:, None]


def policy_q_transition(mdp: TabularMdp, pi) -> np.ndarray:
    """Matrix M with (M X)(s, a) = E_{s'}[E_{a'~pi} X(s', a')], flattened to (SA, SA)."""
    S, A = mdp.num_states, mdp.num_actions
    pi_masked = np.asarray(pi, dtype=float) * mdp.nonterminal[:, None]
    M = mdp.transition[:, :, :, None] * pi_masked[None, None, :, :]
    M = M.reshape(S * A, S * A)
    M[np.repeat(~mdp.nonterminal, A)] = 0.0
    return M


def td_lambda_backup(mdp: TabularMdp, q, cfg: SoftConfig, lam: float,
                     first_residual: str = "corrected") -> np.ndarray:
    """TD(lambda) Boltzmann backup, solved exactly as a linear system.

    Returns Q + x with x = delta_0 + gamma lambda M x, where M is the policy
    transition of pi^B_Q.  ``first_residual="corrected"`` uses
    delta_0(s, a) = r + gamma E V_Q(s') - Q(s, a), which reproduces the
    operator series exactly; ``"uniform"`` uses the same residual at every step,
    r - tau KL(s) + gamma E V_Q(s') - V_Q(s).
    """
    if cfg.tau <= 0:
        raise ValueError("td_lambda_backup needs tau > 0")
    if not 0 <= lam < 1:
        raise ValueError(f"lambda must lie in [0, 1), got {lam}")
    q = np.asarray(q, dtype=float)
    S, A = q.shape
    pi = boltzmann_policy(q, cfg)
    v = state_value(q, cfg) * mdp.nonterminal
    backed = mdp.reward + mdp.gamma * next_value(mdp, v)
    if first_residual == "corrected":
        delta0 = backed - q
    elif first_residual == "uniform":
        delta0 = backed - cfg.tau * masked_kl(mdp, pi, cfg)[:, None] - v[:, None]
    else:
        raise ValueError(f"unknown first_residual {first_residual!r}")
    # delta0 depends on a only through r and P, so later residuals are the
    # same table averaged over a' ~ pi^B: a single linear solve covers both.
    M = mdp.gamma * lam * policy_q_transition(mdp, pi)
    x = np.linalg.solve(np.eye(S * A) - M, delta0.reshape(-1)).reshape(S, A)
    out = q + x
    return out * mdp.nonterminal[:, None]


def td_lambda_series(mdp: TabularMdp, q, cfg: SoftConfig, lam: float,
                     tol: float = 1e-12, max_terms: int = 100_000) -> np.ndarray:
    """(1 - lambda) sum_k lambda^k T_{pi^B}^{k+1} Q, truncated once (gamma lambda)^k < tol."""
    pi = boltzmann_policy(q, cfg)
    x = backup_q(mdp, pi, q, cfg)
    total = (1 - lam) * x
    coef = 1.0
    for k in range(1, max_terms):
        coef *= lam
        x = backup_q(mdp, pi, x, cfg)
        total = total + (1 - lam) * coef * x
        if (mdp.gamma * lam) ** k < tol:
            break
    # The truncated tail of the geometric weights sits on the last iterate.
    return total + coef * lam * x


def expected_residuals(mdp: TabularMdp, v, cfg: SoftConfig, pi) -> np.ndarray:
    """delta(s, a) = r(s, a) - tau KL(s) + gamma E[V(s')] - V(s), zero at terminals."""
    v = np.asarray(v, dtype=float) * mdp.nonterminal
    kl = masked_kl(mdp, pi, cfg)
    delta = mdp.reward - cfg.tau * kl[:, None] + mdp.gamma * next_value(mdp, v) - v[:, None]
    return delta * mdp.nonterminal[:, None]
