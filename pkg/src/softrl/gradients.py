"""Differentiable Q parameterizations and exact gradients of the soft losses.

Q_theta(s, a) = phi(s, a) . theta.  The induced V_theta is the soft value of
Q_theta and pi_theta its Boltzmann policy, so ``grad log pi_theta(a|s) =
(phi(s, a) - E_{b~pi} phi(s, b)) / tau``.  All losses use the semi-gradient
convention: targets and the state-action sampling weights are frozen in a
``TargetBatch`` and carry no dependence on theta.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .backups import expected_residuals, masked_kl, next_value
from .mdp import (
    SoftConfig,
    TabularMdp,
    boltzmann_log_policy,
    kl_rows,
    soft_state_value,
)
from .solvers import policy_evaluation, state_visitation


@dataclass(frozen=True)
class Parameterization:
    """Linear-in-features Q function; ``kind="tabular"`` means one-hot features."""

    features: np.ndarray
    theta: np.ndarray
    kind: str = "linear"

    def __post_init__(self):
        phi = np.asarray(self.features, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        if phi.ndim != 3:
            raise ValueError(f"features must have shape (S, A, K), got {phi.shape}")
        if theta.shape != (phi.shape[2],):
            raise ValueError(f"theta must have shape {(phi.shape[2],)}, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        object.__setattr__(self, "features", phi)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def tabular(cls, q_table) -> "Parameterization":
        q = np.asarray(q_table, dtype=float)
        S, A = q.shape
        return cls(np.eye(S * A).reshape(S, A, S * A), q.reshape(-1), kind="tabular")

    @classmethod
    def linear(cls, features, theta=None) -> "Parameterization":
        phi = np.asarray(features, dtype=float)
        theta = np.zeros(phi.shape[2]) if theta is None else theta
        return cls(phi, theta, kind="linear")

    @property
    def num_params(self) -> int:
        return self.theta.shape[0]

    def with_theta(self, theta) -> "Parameterization":
        return replace(self, theta=np.asarray(theta, dtype=float))

    def q_values(self) -> np.ndarray:
        return self.features @ self.theta


@dataclass(frozen=True)
class InducedQuantities:
    q_theta: np.ndarray
    v_theta: np.ndarray
    pi_theta: np.ndarray
    log_pi_theta: np.ndarray


def induced(params: Parameterization, mdp: TabularMdp | None, cfg: SoftConfig) -> InducedQuantities:
    """Q_theta, its soft value V_theta and Boltzmann policy pi_theta."""
    if cfg.tau <= 0:
        raise ValueError("induced quantities need tau > 0")
    q = params.q_values()
    if mdp is not None and q.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(f"parameterization gives Q of shape {q.shape}, MDP needs "
                         f"{(mdp.num_states, mdp.num_actions)}")
    log_pi = boltzmann_log_policy(q, cfg)
    return InducedQuantities(q, soft_state_value(q, cfg), np.exp(log_pi), log_pi)


def value_gradient(params: Parameterization, ind: InducedQuantities) -> np.ndarray:
    """grad V_theta(s) = E_{a~pi_theta} phi(s, a), shape (S, K)."""
    return np.einsum("sa,sak->sk", ind.pi_theta, params.features)


def score(params: Parameterization, ind: InducedQuantities, cfg: SoftConfig) -> np.ndarray:
    """grad log pi_theta(a|s), shape (S, A, K)."""
    return (params.features - value_gradient(params, ind)[:, None, :]) / cfg.tau


def kl_gradient(params: Parameterization, ind: InducedQuantities, cfg: SoftConfig) -> np.ndarray:
    """grad KL(pi_theta || ref)(s) = E_{a~pi}[grad log pi(a|s) log(pi/ref)(a|s)], shape (S, K)."""
    log_ratio = ind.log_pi_theta - np.log(cfg.reference)
    return np.einsum("sa,sak->sk", ind.pi_theta * log_ratio, score(params, ind, cfg))


@dataclass(frozen=True)
class TargetBatch:
    """Frozen regression targets and sampling weights.

    ``delta[s, a]`` is E[sum_{d<n} gamma^d delta_{t+d} | s, a] under the frozen
    policy and value table.  ``q_target`` is the n-step soft-Q target and
    ``v_target`` the matching value target; ``state_weights`` and ``policy``
    define the frozen weighting d(s) pi(a|s).
    """

    delta: np.ndarray
    q_target: np.ndarray
    v_target: np.ndarray
    kl: np.ndarray
    frozen_v: np.ndarray
    state_weights: np.ndarray
    policy: np.ndarray
    n: int

    @property
    def weights(self) -> np.ndarray:
        return self.state_weights[:, None] * self.policy


def n_step_advantage(mdp: TabularMdp, pi, frozen_v, cfg: SoftConfig, n: int) -> np.ndarray:
    """E[sum_{d<n} gamma^d delta_{t+d} | s_t = s, a_t = a] with later actions from ``pi``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    pi = np.asarray(pi, dtype=float)
    delta = expected_residuals(mdp, frozen_v, cfg, pi)
    u = np.zeros(mdp.num_states)
    for _ in range(n - 1):
        u = np.sum(pi * (delta + mdp.gamma * next_value(mdp, u)), axis=1) * mdp.nonterminal
    return delta + mdp.gamma * next_value(mdp, u)


def exact_targets(mdp: TabularMdp, ind: InducedQuantities, frozen_v, cfg: SoftConfig,
                  n: int, state_weights=None) -> TargetBatch:
    """Exact n-step targets for the current policy, frozen with respect to theta.

    ``frozen_v=None`` uses V_theta evaluated at the current parameters.
    """
    frozen_v = ind.v_theta.copy() if frozen_v is None else np.asarray(frozen_v, dtype=float)
    pi = ind.pi_theta.copy()
    delta = n_step_advantage(mdp, pi, frozen_v, cfg, n)
    kl = masked_kl(mdp, pi, cfg)
    q_target = cfg.tau * kl[:, None] + frozen_v[:, None] + delta
    v_target = frozen_v[:, None] + delta
    if state_weights is None:
        state_weights = state_visitation(mdp, pi)
    return TargetBatch(delta, q_target, v_target, kl, frozen_v, np.asarray(state_weights), pi, n)


def policy_loss(mdp, params: Parameterization, targets: TargetBatch, cfg: SoftConfig) -> float:
    """sum w(s,a) [-log pi_theta(a|s) Delta(s,a)] + tau sum d(s) KL(pi_theta || ref)(s)."""
    ind = induced(params, mdp, cfg)
    surrogate = -np.sum(targets.weights * ind.log_pi_theta * targets.delta)
    kl = kl_rows(ind.pi_theta, cfg.reference)
    return float(surrogate + cfg.tau * np.sum(targets.state_weights * kl))


def value_loss(mdp, params: Parameterization, targets: TargetBatch, cfg: SoftConfig) -> float:
    """sum d(s) E_{a~pi}[1/2 (V_theta(s) - v_target(s, a))^2]."""
    ind = induced(params, mdp, cfg)
    err = ind.v_theta[:, None] - targets.v_target
    return float(0.5 * np.sum(targets.weights * err ** 2))


def soft_q_loss(mdp, params: Parameterization, targets: TargetBatch, cfg: SoftConfig) -> float:
    """sum w(s,a) 1/2 (Q_theta(s,a) - y(s,a))^2."""
    err = params.q_values() - targets.q_target
    return float(0.5 * np.sum(targets.weights * err ** 2))


def grad_policy_loss(mdp, params: Parameterization, targets: TargetBatch,
                     cfg: SoftConfig) -> np.ndarray:
    ind = induced(params, mdp, cfg)
    surrogate = -np.einsum("sa,sak->k", targets.weights * targets.delta, score(params, ind, cfg))
    kl_term = targets.state_weights @ kl_gradient(params, ind, cfg)
    return surrogate + cfg.tau * kl_term


def grad_value_loss(mdp, params: Parameterization, targets: TargetBatch,
                    cfg: SoftConfig) -> np.ndarray:
    ind = induced(params, mdp, cfg)
    err = ind.v_theta[:, None] - targets.v_target
    per_state = np.sum(targets.weights * err, axis=1)
    return per_state @ value_gradient(params, ind)


def grad_soft_q_loss(mdp, params: Parameterization, targets: TargetBatch,
                     cfg: SoftConfig) -> np.ndarray:
    err = params.q_values() - targets.q_target
    return np.einsum("sa,sak->k", targets.weights * err, params.features)


def exact_policy_gradient_g(mdp: TabularMdp, params: Parameterization, cfg: SoftConfig,
                            gamma_pg: float | None = None) -> np.ndarray:
    """Ascent direction sum_s d(s) [E_pi[grad log pi (Q_pi - V_pi)] - tau grad KL(s)].

    Q_pi and V_pi are exact evaluations of pi_theta at discount ``gamma_pg``;
    d is the matching discounted visitation.  With gamma_pg = 1 on a terminating
    MDP this is the gradient of the undiscounted entropy-augmented return.
    """
    m = mdp if gamma_pg is None else mdp.with_gamma(gamma_pg)
    ind = induced(params, m, cfg)
    v, q = policy_evaluation(m, ind.pi_theta, cfg)
    d = state_visitation(m, ind.pi_theta)
    adv = (q - v[:, None]) * ind.pi_theta
    per_state = (np.einsum("sa,sak->sk", adv, score(params, ind, cfg))
                 - cfg.tau * kl_gradient(params, ind, cfg))
    return d @ per_state


def finite_difference(loss, theta, h: float = 1e-5) -> np.ndarray:
    """Central differences with per-coordinate step h * max(1, |theta_k|)."""
    if not h > 0:
        raise ValueError(f"h must be > 0, got {h}")
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for k in range(theta.size):
        step = h * max(1.0, abs(theta[k]))
        up = theta.copy()
        down = theta.copy()
        up[k] += step
        down[k] -= step
        grad[k] = (loss(up) - loss(down)) / (2 * step)
    return grad


@dataclass(frozen=True)
class DuelingParameterization:
    """Q(s, a) = V(s) + tau log(pi_theta(a|s) / ref(a|s)) with a tabular value stream.

    The advantage stream is a softmax policy with logits ``phi . theta`` on top
    of the reference policy.
    """

    value: np.ndarray
    policy_features: np.ndarray
    theta: np.ndarray
    freeze_value: bool = True

    def __post_init__(self):
        object.__setattr__(self, "value", np.asarray(self.value, dtype=float))
        object.__setattr__(self, "policy_features", np.asarray(self.policy_features, dtype=float))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))

    def with_theta(self, theta) -> "DuelingParameterization":
        return replace(self, theta=np.asarray(theta, dtype=float))

    def policy_params(self, cfg: SoftConfig) -> Parameterization:
        """Q parameterization whose Boltzmann policy equals this advantage stream."""
        return Parameterization(cfg.tau * self.policy_features, self.theta)

    def log_policy(self, cfg: SoftConfig) -> np.ndarray:
        logits = np.log(cfg.reference) + self.policy_features @ self.theta
        m = logits.max(axis=1, keepdims=True)
        return logits - m - np.log(np.sum(np.exp(logits - m), axis=1, keepdims=True))

    def q_values(self, cfg: SoftConfig) -> np.ndarray:
        return self.value[:, None] + cfg.tau * (self.log_policy(cfg) - np.log(cfg.reference))

    def q_jacobian(self, cfg: SoftConfig) -> np.ndarray:
        """d Q(s, a) / d theta with the value stream held fixed, shape (S, A, K)."""
        pi = np.exp(self.log_policy(cfg))
        mean_phi = np.einsum("sa,sak->sk", pi, self.policy_features)
        return cfg.tau * (self.policy_features - mean_phi[:, None, :])


@dataclass(frozen=True)
class Trajectory:
    """One sampled episode; ``states`` has one more entry than ``actions``."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminated: bool


def sample_action(probs, rng: np.random.Generator) -> int:
    """Inverse-CDF draw; uses exactly one uniform so coupled runs stay aligned."""
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1)


def sample_trajectory(mdp: TabularMdp, pi, rng: np.random.Generator, max_steps: int = 1000,
                      reward_noise: float = 0.0) -> Trajectory:
    pi = np.asarray(pi, dtype=float)
    s = sample_action(mdp.initial, rng)
    states, actions, rewards = [s], [], []
    terminated = s in mdp.terminals
    while not terminated and len(actions) < max_steps:
        a = sample_action(pi[s], rng)
        r = mdp.reward[s, a]
        if reward_noise > 0:
            r += reward_noise * rng.standard_normal()
        s = sample_action(mdp.transition[s, a], rng)
        actions.append(a)
        rewards.append(r)
        states.append(s)
        terminated = s in mdp.terminals
    return Trajectory(np.array(states), np.array(actions, dtype=int), np.array(rewards), terminated)


def sampled_pg_estimate(batch, params: Parameterization, cfg: SoftConfig, mode: str, n: int,
                        gamma: float, value=None) -> np.ndarray:
    """Monte-Carlo policy-gradient estimate (ascent direction) from sampled episodes.

    ``mode="naive"`` uses raw n-step reward returns with a one-step KL gradient;
    ``mode="proper"`` also subtracts tau KL(s_{t+d}) inside the return.  Both
    bootstrap with ``value`` (default V_theta) and weight step t by gamma^t, so
    the proper estimator is unbiased for the occupancy-weighted exact term.
    """
    if not batch:
        raise ValueError("empty batch")
    if mode not in ("naive", "proper"):
        raise ValueError(f"unknown mode {mode!r}")
    ind = induced(params, None, cfg)
    psi = score(params, ind, cfg)
    kl = kl_rows(ind.pi_theta, cfg.reference)
    kl_grad = kl_gradient(params, ind, cfg)
    v = ind.v_theta if value is None else np.asarray(value, dtype=float)
    total = np.zeros(params.num_params)
    for traj in batch:
        T = len(traj.actions)
        step_reward = traj.rewards.astype(float)
        if mode == "proper":
            step_reward = step_reward - cfg.tau * kl[traj.states[:T]]
        for t in range(T):
            end = min(t + n, T)
            disc = gamma ** np.arange(end - t)
            ret = float(disc @ step_reward[t:end])
            if end < T or not traj.terminated:
                ret += gamma ** (end - t) * v[traj.states[end]]
            s, a = traj.states[t], traj.actions[t]
            total += gamma ** t * (psi[s, a] * (ret - v[s]) - cfg.tau * kl_grad[s])
    return total / len(batch)
