"""Entropy-regularized tabular RL: exact operators, solvers, gradients and identity checks."""

__version__ = "0.1.0"

from .backups import (
    backup_q,
    backup_v,
    boltzmann_backup,
    boltzmann_nstep_backup,
    expected_residuals,
    n_step_backup,
    td_lambda_backup,
)
from .bandit import BanditEnv, bandit_eta, bandit_optimal_policy
from .equivalence import (
    EquivalenceReport,
    check_bandit_decomposition,
    check_damped_q_natgrad,
    check_kl_identity,
    check_pg_ql_equivalence,
)
from .estimators import SoftAgent, SoftPolicyEvaluation, SoftValueIteration
from .gradients import DuelingParameterization, Parameterization
from .gridworld import GRID4X4, GRID8X8, GridworldSpec, compile_gridworld
from .mdp import (
    InvalidMdpError,
    SoftConfig,
    TabularMdp,
    boltzmann_policy,
    soft_state_value,
    validate_mdp,
)
from .solvers import ConvergenceError, SoftSolution, eta, policy_evaluation, soft_value_iteration
from .training import LearningCurve, TrainConfig, TrainingDivergence, compare_curves, train
