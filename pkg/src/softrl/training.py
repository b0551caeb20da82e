"""Sampled-update training loops on tabular MDPs.

All agents use a uniform reference policy.  Updates are plain SGD on
tabular parameters; actor-critic style agents update once per rollout segment
of up to ``n`` steps, using gradients computed before any parameter changes.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .gradients import sample_action
from .mdp import SoftConfig, TabularMdp, check_mdp, greedy_policy
from .solvers import eta

ALGOS = ("soft_q_1step", "soft_q_nstep", "hard_q", "ac_naive", "ac_proper", "ql_dueling",
         "ac_entreg")
TARGET_MODES = ("standard", "soft_kl", "soft_entropy")
CSV_HEADER = ("step", "return", "eta", "policy_loss", "value_loss", "seed")


class TrainingDivergence(RuntimeError):
    def __init__(self, step, config):
        super().__init__(f"parameters became non-finite at step {step} ({config.algo})")
        self.step = step
        self.config = config


@dataclass(frozen=True)
class TrainConfig:
    algo: str
    tau: float = 0.01
    n: int = 5
    learning_rate: float = 0.1
    value_coef: float = 0.5
    total_steps: int = 50_000
    target_sync_period: int = 0
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_fraction: float = 0.1
    seed: int = 0
    advantage_scale: float | None = None
    target_mode: str = "soft_kl"
    eval_every: int = 100
    max_episode_steps: int = 100
    reward_noise: float = 0.0

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algo {self.algo!r}; choose from {', '.join(ALGOS)}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not self.total_steps > 0:
            raise ValueError("total_steps must be > 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.algo not in ("hard_q",) and self.tau == 0:
            raise ValueError(f"{self.algo} needs tau > 0")
        if self.target_mode not in TARGET_MODES:
            raise ValueError(f"unknown target_mode {self.target_mode!r}")
        if self.algo == "ql_dueling" and self.target_sync_period != 0:
            raise ValueError("ql_dueling runs without a target table")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LearningCurve:
    rows: list

    @property
    def steps(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows])

    @property
    def eta(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for step, ret, eta_val, pl, vl, seed in self.rows:
            writer.writerow([step, _fmt(ret), _fmt(eta_val), _fmt(pl), _fmt(vl), seed])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LearningCurve":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        rows = [(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]), int(r[5]))
                for r in reader]
        return cls(rows)


def _fmt(x) -> str:
    return repr(float(x)) if math.isfinite(x) else "nan"


def soft_vs_hard_target(q_row, tau: float, mode: str) -> float:
    """Bootstrap value of one next-state Q row under the three DQN target variants.

    ``standard`` is the max, ``soft_entropy`` is tau log sum exp(Q / tau) and
    ``soft_kl`` subtracts the constant tau log |A| (KL against uniform).
    """
    q = np.asarray(q_row, dtype=float)
    if mode == "standard":
        return float(q.max())
    if mode not in ("soft_kl", "soft_entropy"):
        raise ValueError(f"unknown mode {mode!r}")
    if not tau > 0:
        raise ValueError("soft targets need tau > 0")
    m = q.max()
    lse = tau * math.log(float(np.sum(np.exp((q - m) / tau)))) + m
    return lse if mode == "soft_entropy" else lse - tau * math.log(q.size)


# -- agents ------------------------------------------------------------------

def _softmax(logits):
    z = np.exp(logits - logits.max())
    return z / z.sum()


def _kl_uniform(p) -> float:
    """KL(p || uniform) for one row."""
    pos = p > 0
    return float(np.sum(p[pos] * np.log(p[pos] * p.size)))


class _QAgent:
    """soft_q_1step, soft_q_nstep and hard_q on a Q table."""

    def __init__(self, mdp: TabularMdp, config: TrainConfig):
        self.mdp, self.config = mdp, config
        self.q = np.zeros((mdp.num_states, mdp.num_actions))
        self.target = self.q
        self.hard = config.algo == "hard_q"
        self.n = config.n if config.algo == "soft_q_nstep" else 1
        self.mode = "standard" if self.hard else config.target_mode
        self.bonus = math.log(mdp.num_actions) if self.mode == "soft_entropy" else 0.0

    def probs(self, s, step):
        if self.hard:
            c = self.config
            frac = min(1.0, step / max(1.0, c.epsilon_fraction * c.total_steps))
            eps = c.epsilon_start + frac * (c.epsilon_end - c.epsilon_start)
            return (1 - eps) * greedy_policy(self.q[s]) + eps / self.mdp.num_actions
        return _softmax(self.q[s] / self.config.tau)

    def _bootstrap(self, s):
        if s in self.mdp.terminals:
            return 0.0
        return soft_vs_hard_target(self.target[s], self.config.tau, self.mode)

    def update(self, segment, terminal, step):
        c, gamma, tau = self.config, self.mdp.gamma, self.config.tau
        kls = [0.0 if self.hard else _kl_uniform(self.probs(s, step)) - self.bonus
               for s, _, _, _ in segment]
        tail = 0.0 if terminal else self._bootstrap(segment[-1][3])
        targets = []
        ret = tail
        for (s, a, r, _), kl in zip(reversed(segment), reversed(kls)):
            ret = r - tau * kl + gamma * ret
            targets.append(ret + tau * kl)
        targets.reverse()
        q_loss = 0.0
        new_q = self.q.copy()
        for (s, a, _, _), y in zip(segment, targets):
            err = self.q[s, a] - y
            new_q[s, a] -= c.learning_rate * err
            q_loss += 0.5 * err * err
        self.q = new_q
        if c.target_sync_period == 0:
            self.target = self.q
        elif step % c.target_sync_period < len(segment):
            self.target = self.q.copy()
        return math.nan, q_loss / len(segment)

    def eval_policy(self):
        if self.hard:
            return greedy_policy(self.q)
        z = np.exp((self.q - self.q.max(axis=1, keepdims=True)) / self.config.tau)
        return z / z.sum(axis=1, keepdims=True)

    def parameters(self):
        return (self.q,)


class _ActorCriticAgent:
    """Tabular softmax policy with a value table.

    ``ac_naive`` and ``ac_proper`` use the two n-step returns, ``ac_entreg``
    is the combined policy + c * value loss (same update as ``ac_proper``) and
    ``ql_dueling`` follows the soft-Q gradient of Q = V + tau log(pi / ref)
    with the advantage-stream gradient scaled by ``advantage_scale``.
    """

    def __init__(self, mdp: TabularMdp, config: TrainConfig):
        self.mdp, self.config = mdp, config
        self.logits = np.zeros((mdp.num_states, mdp.num_actions))
        self.v = np.zeros(mdp.num_states)
        self.n = config.n
        self.proper = config.algo != "ac_naive"
        self.dueling = config.algo == "ql_dueling"
        self.adv_scale = (1.0 / config.tau if config.advantage_scale is None
                          else config.advantage_scale)
        self.log_ref = -math.log(mdp.num_actions)

    def probs(self, s, step):
        return _softmax(self.logits[s])

    def update(self, segment, terminal, step):
        c, gamma, tau = self.config, self.mdp.gamma, self.config.tau
        pis = [self.probs(s, step) for s, _, _, _ in segment]
        kls = [_kl_uniform(p) for p in pis]
        last = segment[-1][3]
        ret = 0.0 if terminal else self.v[last]
        returns = []
        for (s, a, r, _), kl in zip(reversed(segment), reversed(kls)):
            ret = (r - tau * kl if self.proper else r) + gamma * ret
            returns.append(ret)
        returns.reverse()
        d_logits = np.zeros_like(self.logits)
        d_v = np.zeros_like(self.v)
        pl = vl = 0.0
        for (s, a, _, _), g, p, kl in zip(segment, returns, pis, kls):
            adv = g - self.v[s]
            score = -p.copy()
            score[a] += 1.0
            log_ratio = np.log(p) - self.log_ref
            if self.dueling:
                # err = Q(s,a) - y with y = tau KL + V(s) + adv and V detached
                err = tau * log_ratio[a] - tau * kl - adv
                d_logits[s] -= c.learning_rate * self.adv_scale * err * tau * score
                d_v[s] -= c.learning_rate * c.value_coef * err
                vl += 0.5 * err * err
                pl = math.nan
            else:
                grad_kl = p * (log_ratio - kl)
                d_logits[s] += c.learning_rate * (score * adv - tau * grad_kl)
                d_v[s] += c.learning_rate * c.value_coef * adv
                pl += -math.log(p[a]) * adv + tau * kl
                vl += 0.5 * adv * adv
        self.logits = self.logits + d_logits
        self.v = self.v + d_v
        k = len(segment)
        return pl / k, vl / k

    def eval_policy(self):
        z = np.exp(self.logits - self.logits.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def parameters(self):
        return (self.logits, self.v)


def make_agent(mdp: TabularMdp, config: TrainConfig):
    if config.algo in ("soft_q_1step", "soft_q_nstep", "hard_q"):
        return _QAgent(mdp, config)
    return _ActorCriticAgent(mdp, config)


def segment_update(agent, segment, terminal, step=0):
    """Parameter change produced by one segment update, without mutating ``agent``."""
    before = [p.copy() for p in agent.parameters()]
    saved = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in vars(agent).items()}
    agent.update(segment, terminal, step)
    after = [p.copy() for p in agent.parameters()]
    vars(agent).update(saved)
    return [a - b for a, b in zip(after, before)]


def train(mdp: TabularMdp, config: TrainConfig, agent=None) -> LearningCurve:
    """Run one training job; deterministic given ``config.seed``.

    The curve has a row every ``eval_every`` steps (and at step 0) with the
    mean return of episodes finished since the previous row, the exact
    entropy-augmented return of the agent's current policy, and mean losses.
    A fresh agent from ``make_agent`` is trained unless one is passed in.
    """
    check_mdp(mdp)
    # overflow is reported as TrainingDivergence, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _run(mdp, config, agent)


def _run(mdp, config, agent):
    rng = np.random.default_rng(config.seed)
    if agent is None:
        agent = make_agent(mdp, config)
    eval_tau = config.tau if config.algo != "hard_q" else 0.0
    cfg = SoftConfig.uniform(mdp.num_states, mdp.num_actions, eval_tau)

    def start():
        return sample_action(mdp.initial, rng)

    rows = [(0, math.nan, eta(mdp, agent.eval_policy(), cfg), math.nan, math.nan, config.seed)]
    s = start()
    ep_return, ep_len = 0.0, 0
    finished = []
    losses = []
    segment = []
    for step in range(1, config.total_steps + 1):
        a = sample_action(agent.probs(s, step), rng)
        r = float(mdp.reward[s, a])
        if config.reward_noise > 0:
            r += config.reward_noise * rng.standard_normal()
        s2 = sample_action(mdp.transition[s, a], rng)
        terminal = s2 in mdp.terminals
        ep_return += r
        ep_len += 1
        segment.append((s, a, r, s2))
        truncated = ep_len >= config.max_episode_steps
        if terminal or truncated or len(segment) >= agent.n:
            losses.append(agent.update(segment, terminal, step))
            segment = []
            if not all(np.all(np.isfinite(p)) for p in agent.parameters()):
                raise TrainingDivergence(step, config)
        if terminal or truncated:
            finished.append(ep_return)
            s = start()
            ep_return, ep_len = 0.0, 0
        else:
            s = s2
        if step % config.eval_every == 0:
            mean_ret = float(np.mean(finished)) if finished else math.nan
            pl = float(np.mean([x[0] for x in losses])) if losses else math.nan
            vl = float(np.mean([x[1] for x in losses])) if losses else math.nan
            rows.append((step, mean_ret, eta(mdp, agent.eval_policy(), cfg), pl, vl, config.seed))
            finished, losses = [], []
    return LearningCurve(rows)


def compare_curves(a: LearningCurve, b: LearningCurve) -> dict:
    """Max pointwise eta gap, final-value gap and mean absolute gap over the step range."""
    if not np.array_equal(a.steps, b.steps):
        raise ValueError("curves are on different step grids")
    diff = np.abs(a.eta - b.eta)
    steps = a.steps
    span = steps[-1] - steps[0]
    if span > 0:
        area = float(np.sum((diff[1:] + diff[:-1]) * np.diff(steps)) / 2 / span)
    else:
        area = float(diff.mean())
    return {"max_gap": float(diff.max()), "final_gap": float(diff[-1]), "area": area}
