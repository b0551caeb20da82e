"""Tabular MDPs and the entropy-regularized primitives built on them.

Tables are plain numpy arrays: Q tables are ``(S, A)``, V tables ``(S,)``,
policies ``(S, A)`` with rows summing to one.  All functions are pure.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-9


class InvalidMdpError(ValueError):
    """Raised when an operation needs a valid MDP and gets one that is not."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid MDP:\n  " + "\n  ".join(self.violations))


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _renormalize(rows):
    """Renormalize rows whose sum is within tolerance of one; leave others alone."""
    sums = rows.sum(axis=-1, keepdims=True)
    close = np.abs(sums - 1.0) <= ROW_SUM_TOL
    return np.where(close, rows / np.where(sums == 0, 1.0, sums), rows)


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP with expected rewards.

    ``transition[s, a, s2]`` is P(s2 | s, a) and ``reward[s, a]`` the expected
    immediate reward.  Terminal states end the episode: they contribute no
    reward, no KL penalty and no continuation value.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial: np.ndarray
    gamma: float
    terminals: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        mu = np.asarray(self.initial, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A = P.shape[:2]
        if r.shape != (S, A):
            raise ValueError(f"reward must have shape {(S, A)}, got {r.shape}")
        if mu.shape != (S,):
            raise ValueError(f"initial must have shape {(S,)}, got {mu.shape}")
        terms = frozenset(int(s) for s in self.terminals)
        if any(s < 0 or s >= S for s in terms):
            raise ValueError(f"terminal index out of range for {S} states: {sorted(terms)}")
        object.__setattr__(self, "transition", _readonly(_renormalize(P)))
        object.__setattr__(self, "reward", _readonly(r))
        object.__setattr__(self, "initial", _readonly(_renormalize(mu)))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "terminals", terms)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def nonterminal(self) -> np.ndarray:
        """Boolean mask of non-terminal states."""
        mask = np.ones(self.num_states, dtype=bool)
        mask[list(self.terminals)] = False
        return mask

    def with_gamma(self, gamma: float) -> "TabularMdp":
        return TabularMdp(self.transition, self.reward, self.initial, gamma, self.terminals)


@dataclass(frozen=True)
class SoftConfig:
    """Temperature and reference policy of the KL-regularized objective."""

    tau: float
    reference: np.ndarray

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        ref = np.asarray(self.reference, dtype=float)
        if np.any(ref <= 0):
            raise ValueError("reference policy must have full support")
        if np.any(np.abs(ref.sum(axis=-1) - 1.0) > ROW_SUM_TOL):
            raise ValueError("reference policy rows must sum to 1")
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "reference", _readonly(ref / ref.sum(axis=-1, keepdims=True)))

    @classmethod
    def uniform(cls, num_states: int, num_actions: int, tau: float) -> "SoftConfig":
        return cls(tau, np.full((num_states, num_actions), 1.0 / num_actions))

    def with_tau(self, tau: float) -> "SoftConfig":
        return SoftConfig(tau, self.reference)


def _reachable_closed_set(mdp: TabularMdp) -> list[int]:
    """States from which some policy can avoid every terminal forever."""
    trapped = set(np.flatnonzero(mdp.nonterminal).tolist())
    support = mdp.transition > 0
    changed = True
    while changed:
        changed = False
        for s in sorted(trapped):
            stays = any(
                set(np.flatnonzero(support[s, a]).tolist()) <= trapped
                for a in range(mdp.num_actions)
            )
            if not stays:
                trapped.discard(s)
                changed = True
    return sorted(trapped)


def validate_mdp(mdp: TabularMdp) -> list[str]:
    """Return every invariant violation of ``mdp`` (empty list means valid)."""
    out = []
    P, r = mdp.transition, mdp.reward
    S, A = mdp.num_states, mdp.num_actions
    for s, a, s2 in zip(*np.nonzero(P < 0)):
        out.append(f"negative: P[{s}][{a}][{s2}] = {P[s, a, s2]!r}")
    sums = P.sum(axis=2)
    for s in range(S):
        for a in range(A):
            if abs(sums[s, a] - 1.0) > ROW_SUM_TOL:
                out.append(f"row-sum: P[{s}][{a}] sums to {sums[s, a]!r} for (s={s}, a={a})")
    if np.any(mdp.initial < 0):
        out.append("negative: initial distribution has negative entries")
    if abs(mdp.initial.sum() - 1.0) > ROW_SUM_TOL:
        out.append(f"initial: sums to {mdp.initial.sum()!r}")
    if not np.all(np.isfinite(r)):
        out.append("reward: non-finite entries")
    for s in sorted(mdp.terminals):
        for a in range(A):
            if P[s, a, s] != 1.0:
                out.append(f"terminal: state {s} is not absorbing under action {a}")
            if r[s, a] != 0.0:
                out.append(f"terminal-reward: r[{s}][{a}] = {r[s, a]!r}, expected 0")
    if not 0.0 <= mdp.gamma <= 1.0:
        out.append(f"gamma: {mdp.gamma!r} outside [0, 1]")
    elif mdp.gamma == 1.0 and not out:
        trapped = _reachable_closed_set(mdp)
        if trapped:
            out.append(f"nonterminating: gamma=1 but states {trapped} can avoid every terminal")
    return out


def check_mdp(mdp: TabularMdp) -> TabularMdp:
    """Raise InvalidMdpError unless ``mdp`` is valid; the result is cached on the instance."""
    if getattr(mdp, "_checked", False):
        return mdp
    violations = validate_mdp(mdp)
    if violations:
        raise InvalidMdpError(violations)
    object.__setattr__(mdp, "_checked", True)
    return mdp


def kl_divergence(p, q) -> float:
    """KL(p || q) for discrete distributions, with 0 log 0 := 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    pos = p > 0
    if np.any(q[pos] <= 0):
        raise ValueError("unbounded KL: q has zero mass where p > 0")
    return float(max(np.sum(p[pos] * (np.log(p[pos]) - np.log(q[pos]))), 0.0))


def kl_rows(pi, reference) -> np.ndarray:
    """Row-wise KL(pi[s] || reference[s]) for two ``(S, A)`` tables."""
    pi = np.asarray(pi, dtype=float)
    reference = np.asarray(reference, dtype=float)
    pos = pi > 0
    if np.any(pos & (reference <= 0)):
        raise ValueError("unbounded KL: reference has zero mass where pi > 0")
    safe_pi = np.where(pos, pi, 1.0)
    safe_ref = np.where(pos, reference, 1.0)
    terms = np.where(pos, pi * (np.log(safe_pi) - np.log(safe_ref)), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


def weighted_log_sum_exp(values, weights, tau: float):
    """``tau * log sum_a w(a) exp(v(a) / tau)`` along the last axis, max-shifted."""
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    v = np.asarray(values, dtype=float) / tau
    w = np.asarray(weights, dtype=float)
    m = v.max(axis=-1, keepdims=True)
    total = np.sum(w * np.exp(v - m), axis=-1)
    out = tau * (np.log(total) + m[..., 0])
    return float(out) if out.ndim == 0 else out


def soft_state_value(q, cfg: SoftConfig) -> np.ndarray:
    """V_Q(s) = tau log E_{a ~ ref}[exp(Q(s, a) / tau)]."""
    if cfg.tau == 0:
        raise ValueError("soft_state_value needs tau > 0; use hard_state_value for tau = 0")
    return weighted_log_sum_exp(q, cfg.reference, cfg.tau)


def hard_state_value(q) -> np.ndarray:
    return np.asarray(q, dtype=float).max(axis=-1)


def state_value(q, cfg: SoftConfig) -> np.ndarray:
    """Soft value for tau > 0, max over actions for tau = 0."""
    return hard_state_value(q) if cfg.tau == 0 else soft_state_value(q, cfg)


def greedy_policy(q) -> np.ndarray:
    """Greedy policy, uniform over argmax ties."""
    q = np.asarray(q, dtype=float)
    ties = q == q.max(axis=-1, keepdims=True)
    return ties / ties.sum(axis=-1, keepdims=True)


def boltzmann_log_policy(q, cfg: SoftConfig) -> np.ndarray:
    """log pi^B_Q, kept in the log domain so tiny probabilities stay representable."""
    if cfg.tau == 0:
        raise ValueError("log-policy is undefined for tau = 0")
    q = np.asarray(q, dtype=float)
    logits = np.log(cfg.reference) + q / cfg.tau
    m = logits.max(axis=-1, keepdims=True)
    return logits - (m + np.log(np.sum(np.exp(logits - m), axis=-1, keepdims=True)))


def boltzmann_policy(q, cfg: SoftConfig) -> np.ndarray:
    """pi^B_Q(a|s) proportional to ref(a|s) exp(Q(s, a) / tau); greedy when tau = 0."""
    if cfg.tau == 0:
        return greedy_policy(q)
    pi = np.exp(boltzmann_log_policy(q, cfg))
    return pi / pi.sum(axis=-1, keepdims=True)


def advantage(q, cfg: SoftConfig) -> np.ndarray:
    """A_Q = Q - V_Q, so that pi^B / ref = exp(A_Q / tau)."""
    q = np.asarray(q, dtype=float)
    return q - soft_state_value(q, cfg)[..., None]


def validate_policy(pi, num_states=None, num_actions=None) -> list[str]:
    """Violations of the policy-table invariants."""
    pi = np.asarray(pi, dtype=float)
    out = []
    if pi.ndim != 2:
        return [f"policy must be 2-D, got shape {pi.shape}"]
    if num_states is not None and pi.shape != (num_states, num_actions):
        out.append(f"policy shape {pi.shape} != {(num_states, num_actions)}")
    if np.any(pi < 0):
        out.append("policy has negative entries")
    bad = np.flatnonzero(np.abs(pi.sum(axis=1) - 1.0) > ROW_SUM_TOL)
    for s in bad:
        out.append(f"row-sum: policy row {s} sums to {pi[s].sum()!r}")
    return out
