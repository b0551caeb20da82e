"""scikit-learn style wrappers around the solvers and the training harness.

``fit`` takes a ``TabularMdp``; ``predict(states)`` returns the greedy action,
``predict_proba(states)`` the policy rows and ``score(mdp)`` the exact
entropy-augmented return of the fitted policy.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .mdp import SoftConfig, TabularMdp, check_mdp, validate_policy
from .solvers import eta, policy_evaluation, soft_value_iteration
from .training import TrainConfig, make_agent, train


def _check_states(states, num_states) -> np.ndarray:
    idx = np.asarray(states)
    if idx.ndim == 0:
        idx = idx[None]
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("states must be a 1-d array of integer state indices")
    if idx.size and (idx.min() < 0 or idx.max() >= num_states):
        raise ValueError(f"state indices must lie in [0, {num_states})")
    return idx


def _check_fit_input(mdp) -> TabularMdp:
    if not isinstance(mdp, TabularMdp):
        raise TypeError(f"fit expects a TabularMdp, got {type(mdp).__name__}")
    return check_mdp(mdp)


def _soft_config(mdp, tau, reference) -> SoftConfig:
    if reference is None:
        return SoftConfig.uniform(mdp.num_states, mdp.num_actions, tau)
    return SoftConfig(tau, reference)


class _PolicyMixin:
    def predict_proba(self, states):
        check_is_fitted(self, "policy_")
        return self.policy_[_check_states(states, self.policy_.shape[0])]

    def predict(self, states):
        return np.argmax(self.predict_proba(states), axis=1)

    def score(self, mdp: TabularMdp) -> float:
        check_is_fitted(self, "policy_")
        return eta(_check_fit_input(mdp), self.policy_, self._config_for(mdp))

    def _config_for(self, mdp):
        return _soft_config(mdp, self.tau, self.reference)


class SoftValueIteration(_PolicyMixin, BaseEstimator):
    """Soft-optimal Q*, V* and Boltzmann policy; tau = 0 gives hard value iteration."""

    def __init__(self, tau: float = 0.1, reference=None, tol: float = 1e-8,
                 max_iters: int = 100_000):
        self.tau = tau
        self.reference = reference
        self.tol = tol
        self.max_iters = max_iters

    def fit(self, mdp: TabularMdp, y=None):
        mdp = _check_fit_input(mdp)
        sol = soft_value_iteration(mdp, self._config_for(mdp), tol=self.tol,
                                   max_iters=self.max_iters)
        self.q_, self.v_, self.policy_ = sol.q_star, sol.v_star, sol.pi_star
        self.n_iter_, self.residual_ = sol.iterations, sol.residual
        return self


class SoftPolicyEvaluation(_PolicyMixin, BaseEstimator):
    """Exact V_pi and Q_pi of a fixed policy."""

    def __init__(self, policy=None, tau: float = 0.1, reference=None):
        self.policy = policy
        self.tau = tau
        self.reference = reference

    def fit(self, mdp: TabularMdp, y=None):
        mdp = _check_fit_input(mdp)
        if self.policy is None:
            raise ValueError("policy must be set before fit")
        pi = np.asarray(self.policy, dtype=float)
        problems = validate_policy(pi, mdp.num_states, mdp.num_actions)
        if problems:
            raise ValueError("; ".join(problems))
        self.v_, self.q_ = policy_evaluation(mdp, pi, self._config_for(mdp))
        self.policy_ = pi
        return self


class SoftAgent(_PolicyMixin, BaseEstimator):
    """Sampled-update training (any ``TrainConfig.algo``) exposed as an estimator.

    After ``fit``, ``curve_`` holds the learning curve and ``policy_`` the
    agent's final evaluation policy.
    """

    def __init__(self, algo: str = "soft_q_1step", tau: float = 0.1, n: int = 5,
                 learning_rate: float = 0.1, value_coef: float = 0.5,
                 total_steps: int = 50_000, target_sync_period: int = 0, seed: int = 0,
                 advantage_scale=None, target_mode: str = "soft_kl"):
        self.algo = algo
        self.tau = tau
        self.n = n
        self.learning_rate = learning_rate
        self.value_coef = value_coef
        self.total_steps = total_steps
        self.target_sync_period = target_sync_period
        self.seed = seed
        self.advantage_scale = advantage_scale
        self.target_mode = target_mode

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.get_params())

    def fit(self, mdp: TabularMdp, y=None):
        mdp = _check_fit_input(mdp)
        config = self.train_config()
        agent = make_agent(mdp, config)
        self.curve_ = train(mdp, config, agent=agent)
        self.policy_ = agent.eval_policy()
        return self

    def _config_for(self, mdp):
        tau = 0.0 if self.algo == "hard_q" else self.tau
        return _soft_config(mdp, tau, None)
