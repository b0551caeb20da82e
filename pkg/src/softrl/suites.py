"""Randomized check suites over generated instances.

Each suite returns a list of ``EquivalenceReport``; instance ``i`` of a suite
draws from ``np.random.default_rng([seed, i])`` so suites are reproducible and
instances are independent of how many others run.
"""
from __future__ import annotations

import numpy as np

from .backups import (
    backup_q,
    backup_v,
    boltzmann_backup,
    boltzmann_backup_expectation_form,
    boltzmann_nstep_backup,
    n_step_backup,
    td_lambda_backup,
    td_lambda_series,
)
from .equivalence import (
    EquivalenceReport,
    check_bandit_decomposition,
    check_damped_q_natgrad,
    check_kl_identity,
    check_pg_ql_equivalence,
    compare,
    random_mdp,
    random_reference,
)
from .gradients import DuelingParameterization, Parameterization
from .mdp import SoftConfig, boltzmann_policy

DEFAULT_TAUS = (0.01, 0.1, 1.0)
DEFAULT_NS = (1, 3, 5)
SUITES = ("kl-ident", "bandit-decomp", "pg-ql", "natgrad", "td-lambda", "backup")


def _rng(seed, i):
    return np.random.default_rng([seed, i])


def _shape(rng):
    return int(rng.integers(2, 6)), int(rng.integers(2, 5))


def random_params(rng, S, A, kind: str) -> Parameterization:
    """Random tabular or linear parameterization with Q values of order 1."""
    if kind == "tabular":
        return Parameterization.tabular(rng.normal(size=(S, A)))
    if kind == "linear":
        K = 7
        return Parameterization.linear(rng.normal(size=(S, A, K)), rng.normal(size=K))
    raise ValueError(f"unknown kind {kind!r}")


def kl_identity_suite(instances=100, seed=0, taus=DEFAULT_TAUS, **_):
    reports = []
    for i in range(instances):
        rng = _rng(seed, i)
        A = int(rng.integers(2, 8))
        tau = float(taus[i % len(taus)])
        rbar = rng.uniform(-1, 1, size=A)
        pi = rng.dirichlet(np.ones(A))
        ref = rng.dirichlet(np.ones(A) * 2.0) if i % 2 else None
        rep = check_kl_identity(rbar, pi, tau, reference=ref)
        rep.metadata["instance"] = i
        reports.append(rep)
    return reports


def bandit_decomp_suite(instances=100, seed=0, taus=DEFAULT_TAUS, **_):
    reports = []
    for i in range(instances):
        rng = _rng(seed, i)
        A = int(rng.integers(2, 8))
        tau = float(taus[i % len(taus)])
        rbar = rng.uniform(-1, 1, size=A)
        kind = "tabular" if i % 2 == 0 else "linear"
        params = random_params(rng, 1, A, kind)
        rep = check_bandit_decomposition(rbar, params, tau, reference=rng.dirichlet(np.ones(A) * 2))
        rep.metadata["instance"] = i
        reports.append(rep)
    return reports


def pg_ql_suite(instances=30, seed=0, taus=DEFAULT_TAUS, ns=DEFAULT_NS, unfreeze_targets=False,
                **_):
    reports = []
    for i in range(instances):
        rng = _rng(seed, i)
        S, A = _shape(rng)
        mdp = random_mdp(rng, S, A)
        ref = random_reference(rng, S, A)
        for kind in ("tabular", "linear"):
            params = random_params(rng, S, A, kind)
            for tau in taus:
                cfg = SoftConfig(float(tau), ref)
                for n in ns:
                    rep = check_pg_ql_equivalence(mdp, params, cfg, int(n), seed=seed,
                                                  unfreeze_targets=unfreeze_targets)
                    rep.metadata["instance"] = i
                    reports.append(rep)
    return reports


def natgrad_suite(instances=20, seed=0, taus=DEFAULT_TAUS, ns=DEFAULT_NS, **_):
    reports = []
    for i in range(instances):
        rng = _rng(seed, i)
        S, A = _shape(rng)
        mdp = random_mdp(rng, S, A)
        cfg = SoftConfig(float(taus[i % len(taus)]), random_reference(rng, S, A))
        n = int(ns[i % len(ns)])
        # fewer features than free policy parameters keeps the Fisher matrix full rank
        K = int(rng.integers(1, S * (A - 1) + 1))
        dueling = DuelingParameterization(rng.normal(size=S), rng.normal(size=(S, A, K)),
                                          rng.normal(size=K))
        eps = (0.1, 0.5, 1.0)[i % 3]
        res, step = check_damped_q_natgrad(mdp, dueling, cfg, eps, n,
                                           perturbation=0.1 * rng.normal(size=K), seed=seed)
        for rep in (res, step):
            rep.metadata["instance"] = i
            reports.append(rep)
    return reports


def td_lambda_suite(instances=30, seed=0, taus=DEFAULT_TAUS, **_):
    reports = []
    for i in range(instances):
        rng = _rng(seed, i)
        S, A = _shape(rng)
        mdp = random_mdp(rng, S, A)
        cfg = SoftConfig(float(taus[i % len(taus)]), random_reference(rng, S, A))
        q = rng.normal(size=(S, A))
        lam = float(rng.uniform(0, 0.95))
        meta = dict(instance=i, tau=cfg.tau, gamma=mdp.gamma, lam=lam)
        solved = td_lambda_backup(mdp, q, cfg, lam)
        reports.append(compare("td-lambda-series", solved, td_lambda_series(mdp, q, cfg, lam),
                               1e-9, **meta))
        uniform = td_lambda_backup(mdp, q, cfg, lam, first_residual="uniform")
        pi = boltzmann_policy(q, cfg)
        expected_gap = q - np.sum(pi * q, axis=1, keepdims=True)
        reports.append(compare("td-lambda-first-residual", uniform - solved, expected_gap, 1e-9,
                               **meta))
        reports.append(compare("td-lambda-zero", td_lambda_backup(mdp, q, cfg, 0.0),
                               boltzmann_backup(mdp, q, cfg), 1e-10, **meta))
    return reports


def _bound_report(name, value, bound, slack, **meta) -> EquivalenceReport:
    """Pass iff value <= bound + slack; abs_gap is the amount of violation."""
    gap = max(0.0, float(value - bound))
    return EquivalenceReport(name, float(value), float(bound), gap, gap, [gap], slack,
                             gap <= slack, meta)


def backup_suite(instances=100, seed=0, taus=DEFAULT_TAUS, ns=DEFAULT_NS, **_):
    reports = []
    for i in range(instances):
        rng = _rng(seed, i)
        S, A = _shape(rng)
        mdp = random_mdp(rng, S, A)
        cfg = SoftConfig(float(taus[i % len(taus)]), random_reference(rng, S, A))
        meta = dict(instance=i, tau=cfg.tau, gamma=mdp.gamma)
        q1 = rng.normal(size=(S, A)) * 3
        q2 = rng.normal(size=(S, A)) * 3
        dist = np.max(np.abs(q1 - q2))
        t1, t2 = boltzmann_backup(mdp, q1, cfg), boltzmann_backup(mdp, q2, cfg)
        reports.append(_bound_report("contraction-boltzmann", np.max(np.abs(t1 - t2)),
                                     mdp.gamma * dist, 1e-12, **meta))
        pi = rng.dirichlet(np.ones(A), size=S)
        reports.append(_bound_report(
            "contraction-policy-q",
            np.max(np.abs(backup_q(mdp, pi, q1, cfg) - backup_q(mdp, pi, q2, cfg))),
            mdp.gamma * dist, 1e-12, **meta))
        v1, v2 = q1[:, 0], q2[:, 0]
        reports.append(_bound_report(
            "contraction-policy-v",
            np.max(np.abs(backup_v(mdp, pi, v1, cfg) - backup_v(mdp, pi, v2, cfg))),
            mdp.gamma * np.max(np.abs(v1 - v2)), 1e-12, **meta))
        upper = q1 + rng.uniform(0, 2, size=(S, A))
        drop = np.max(boltzmann_backup(mdp, q1, cfg) - boltzmann_backup(mdp, upper, cfg))
        reports.append(_bound_report("monotonicity", drop, 0.0, 1e-12, **meta))
        reports.append(compare("expectation-form", t1,
                               boltzmann_backup_expectation_form(mdp, q1, cfg), 1e-10, **meta))
        reports.append(compare("nstep-base", boltzmann_nstep_backup(mdp, q1, cfg, 1), t1, 1e-12,
                               **meta))
        n = int(ns[i % len(ns)])
        pib = boltzmann_policy(q1, cfg)
        # the Q-form n-step backup already omits the first-step KL penalty
        frozen = n_step_backup(mdp, pib, q1, cfg, n)
        reports.append(compare("nstep-frozen-policy", boltzmann_nstep_backup(mdp, q1, cfg, n),
                               frozen, 1e-10, n=n, **meta))
    return reports


SUITE_FUNCS = {
    "kl-ident": kl_identity_suite,
    "bandit-decomp": bandit_decomp_suite,
    "pg-ql": pg_ql_suite,
    "natgrad": natgrad_suite,
    "td-lambda": td_lambda_suite,
    "backup": backup_suite,
}


def run_suite(name: str, **kwargs) -> list:
    if name == "all":
        return [rep for suite in SUITES for rep in SUITE_FUNCS[suite](**kwargs)]
    if name not in SUITE_FUNCS:
        raise KeyError(name)
    return SUITE_FUNCS[name](**kwargs)
