"""Single-state (bandit) version of the KL-regularized problem."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gradients import Parameterization
from .mdp import TabularMdp, kl_divergence, weighted_log_sum_exp


@dataclass(frozen=True)
class BanditEnv:
    mean_rewards: np.ndarray
    reference: np.ndarray | None = None
    noise_sigma: float = 0.0
    num_actions: int = field(init=False)

    def __post_init__(self):
        rbar = np.asarray(self.mean_rewards, dtype=float)
        if rbar.ndim != 1 or not np.all(np.isfinite(rbar)):
            raise ValueError("mean_rewards must be a finite vector")
        ref = (np.full(rbar.size, 1.0 / rbar.size) if self.reference is None
               else np.asarray(self.reference, dtype=float))
        if ref.shape != rbar.shape or np.any(ref <= 0) or abs(ref.sum() - 1) > 1e-9:
            raise ValueError("reference must be a full-support distribution over the actions")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        object.__setattr__(self, "mean_rewards", rbar)
        object.__setattr__(self, "reference", ref / ref.sum())
        object.__setattr__(self, "num_actions", rbar.size)

    def sample_rewards(self, actions, rng: np.random.Generator) -> np.ndarray:
        r = self.mean_rewards[actions]
        if self.noise_sigma > 0:
            r = r + self.noise_sigma * rng.standard_normal(r.shape)
        return r

    def as_mdp(self) -> TabularMdp:
        """One non-terminal state, gamma = 0: the same objective as a TabularMdp."""
        A = self.num_actions
        return TabularMdp(np.ones((1, A, 1)), self.mean_rewards[None, :], np.ones(1), 0.0)


def bandit_optimal_policy(env: BanditEnv, tau: float) -> np.ndarray:
    """ref(a) exp(r(a) / tau) / E_ref[exp(r / tau)]; greedy with uniform ties at tau = 0."""
    r = env.mean_rewards
    if tau == 0:
        ties = r == r.max()
        return ties / ties.sum()
    log_p = np.log(env.reference) + (r - weighted_log_sum_exp(r, env.reference, tau)) / tau
    p = np.exp(log_p)
    return p / p.sum()


def bandit_eta(env: BanditEnv, pi, tau: float) -> float:
    """E_pi[r] - tau KL(pi || ref)."""
    pi = np.asarray(pi, dtype=float)
    kl = kl_divergence(pi, env.reference) if tau > 0 else 0.0
    return float(pi @ env.mean_rewards - tau * kl)


def bandit_params(logits) -> Parameterization:
    """Tabular logits for a bandit: features of shape (1, A, A)."""
    return Parameterization.tabular(np.asarray(logits, dtype=float)[None, :])


def policy_of(env: BanditEnv, params: Parameterization) -> np.ndarray:
    """Softmax policy with logits phi . theta on top of the reference."""
    logits = np.log(env.reference) + params.q_values()[0]
    p = np.exp(logits - logits.max())
    return p / p.sum()


def _scores(env, params):
    pi = policy_of(env, params)
    phi = params.features[0]
    return pi, phi - pi @ phi


def bandit_kl_gradient(env: BanditEnv, params: Parameterization) -> np.ndarray:
    pi, psi = _scores(env, params)
    return psi.T @ (pi * (np.log(pi) - np.log(env.reference)))


def bandit_exact_pg(env: BanditEnv, params: Parameterization, tau: float) -> np.ndarray:
    """grad eta = E_pi[grad log pi(a) r(a)] - tau grad KL(pi || ref)."""
    pi, psi = _scores(env, params)
    return psi.T @ (pi * env.mean_rewards) - tau * bandit_kl_gradient(env, params)


def bandit_sampled_pg(env: BanditEnv, params: Parameterization, tau: float, batch_size: int,
                      seed) -> np.ndarray:
    """Monte-Carlo grad eta from sampled (a, r) pairs plus the exact KL gradient."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    pi, psi = _scores(env, params)
    actions = rng.choice(env.num_actions, size=batch_size, p=pi)
    rewards = env.sample_rewards(actions, rng)
    return psi[actions].T @ rewards / batch_size - tau * bandit_kl_gradient(env, params)


def bandit_gradient_ascent(env: BanditEnv, tau: float, step_size: float = 0.05,
                           steps: int = 10_000, batch_size: int = 1, seed=0,
                           record_every: int = 100):
    """Stochastic gradient ascent on eta from zero logits.

    Returns the final parameterization and a list of (step, eta) pairs.
    """
    rng = np.random.default_rng(seed)
    params = bandit_params(np.zeros(env.num_actions))
    curve = [(0, bandit_eta(env, policy_of(env, params), tau))]
    for step in range(1, steps + 1):
        g = bandit_sampled_pg(env, params, tau, batch_size, rng)
        params = params.with_theta(params.theta + step_size * g)
        if step % record_every == 0:
            curve.append((step, bandit_eta(env, policy_of(env, params), tau)))
    return params, curve
