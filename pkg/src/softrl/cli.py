"""``softrl`` command line: solve, check, train, bandit.

Exit codes: 0 success, 1 usage or input error, 2 solver did not converge,
3 training diverged.  Every invocation writes one JSON run manifest.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bandit import BanditEnv, bandit_eta, bandit_gradient_ascent, bandit_optimal_policy
from .gridworld import BUILTIN_GRIDS, compile_gridworld
from .io import (
    MdpFormatError,
    file_sha256,
    load_mdp,
    load_policy,
    solution_to_dict,
    to_jsonable,
    write_json,
)
from .mdp import InvalidMdpError, SoftConfig, check_mdp
from .solvers import ConvergenceError, soft_value_iteration
from .suites import SUITES, run_suite
from .training import ALGOS, TARGET_MODES, TrainConfig, TrainingDivergence, train

EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE, EXIT_DIVERGENCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for convergence failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="softrl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"softrl {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", help="run manifest path (default: next to the main output)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", parents=[common], help="soft value iteration on an MDP file")
    s.add_argument("--mdp", required=True)
    s.add_argument("--tau", type=float, required=True)
    s.add_argument("--reference", help="policy file holding the reference policy (default uniform)")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iters", type=int, default=100_000)
    s.add_argument("--out", help="solution JSON (default: stdout)")
    s.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")

    c = sub.add_parser("check", parents=[common],
                       help="run identity check suites on generated instances")
    c.add_argument("suite", help=f"one of {', '.join(SUITES)}, all")
    c.add_argument("--instances", type=int, help="instances per suite (default: suite-specific)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tau", type=float, nargs="+", help="temperatures (default 0.01 0.1 1)")
    c.add_argument("--n", type=int, nargs="+", help="lookahead lengths (default 1 3 5)")
    c.add_argument("--report", help="JSON report path")
    c.add_argument("--unfreeze-targets", action="store_true", help=argparse.SUPPRESS)

    t = sub.add_parser("train", parents=[common],
                       help="train an agent and write its learning curve")
    t.add_argument("--algo", required=True, help=", ".join(ALGOS))
    t.add_argument("--env", required=True, help="grid4x4, grid8x8 or an MDP file")
    t.add_argument("--steps", type=int, required=True)
    t.add_argument("--tau", type=float, default=0.01)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="CSV learning curve")
    t.add_argument("--n", type=int, default=5)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--value-coef", type=float, default=0.5)
    t.add_argument("--target-sync", type=int, default=0)
    t.add_argument("--advantage-scale", type=float)
    t.add_argument("--target-mode", default="soft_kl", choices=TARGET_MODES)
    t.add_argument("--eval-every", type=int, default=100)
    t.add_argument("--reward-noise", type=float, default=0.0)

    b = sub.add_parser("bandit", parents=[common],
                       help="bandit optimum and sampled policy-gradient ascent")
    b.add_argument("--rewards", type=_floats, required=True, help="mean rewards, e.g. 1,0")
    b.add_argument("--tau", type=float, required=True)
    b.add_argument("--reference", type=_floats)
    b.add_argument("--noise", type=float, default=0.0)
    b.add_argument("--steps", type=int, default=2000)
    b.add_argument("--step-size", type=float,
                   help="SGD step size (default 0.05 / max(1, tau), stable for any tau)")
    b.add_argument("--batch-size", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="CSV curve of (step, eta)")
    return p


def _load_env(name):
    if name in BUILTIN_GRIDS:
        return compile_gridworld(BUILTIN_GRIDS[name]), {}
    path = Path(name)
    if not path.exists():
        raise UsageError(f"unknown env {name!r}: not a built-in grid and no such file")
    return check_mdp(load_mdp(path)), {str(path): file_sha256(path)}


def cmd_solve(args, record):
    mdp = check_mdp(load_mdp(args.mdp))
    record["inputs"][args.mdp] = file_sha256(args.mdp)
    if args.reference:
        record["inputs"][args.reference] = file_sha256(args.reference)
        cfg = SoftConfig(args.tau, load_policy(args.reference))
    else:
        cfg = SoftConfig.uniform(mdp.num_states, mdp.num_actions, args.tau)
    try:
        sol = soft_value_iteration(mdp, cfg, tol=args.tol, max_iters=args.max_iters)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        record["summary"] = {"converged": False, "iterations": exc.iterations,
                             "residual": exc.residual}
        return EXIT_CONVERGENCE
    out = solution_to_dict(sol, mdp, args.tau, args.tol)
    if args.out:
        write_json(out, args.out)
        record["outputs"].append(args.out)
    else:
        print(json.dumps(to_jsonable(out), indent=2))
    record["summary"] = {"converged": True, "iterations": sol.iterations,
                         "residual": sol.residual}
    return EXIT_OK


def cmd_check(args, record):
    if args.suite != "all" and args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}, all")
    kwargs = {"seed": args.seed, "unfreeze_targets": args.unfreeze_targets}
    if args.instances is not None:
        if args.instances < 1:
            raise UsageError("--instances must be >= 1")
        kwargs["instances"] = args.instances
    if args.tau:
        if any(t <= 0 for t in args.tau):
            raise UsageError("check suites need tau > 0")
        kwargs["taus"] = tuple(args.tau)
    if args.n:
        if any(n < 1 for n in args.n):
            raise UsageError("--n values must be >= 1")
        kwargs["ns"] = tuple(args.n)
    reports = run_suite(args.suite, **kwargs)
    failed = [r for r in reports if not r.passed]
    by_name = {}
    for r in reports:
        entry = by_name.setdefault(r.name, {"count": 0, "failed": 0, "max_rel_gap": 0.0})
        entry["count"] += 1
        entry["failed"] += int(not r.passed)
        entry["max_rel_gap"] = max(entry["max_rel_gap"], r.rel_gap)
    for name, entry in by_name.items():
        status = "PASS" if entry["failed"] == 0 else "FAIL"
        print(f"{status} {name}: {entry['count'] - entry['failed']}/{entry['count']} "
              f"max rel_gap {entry['max_rel_gap']:.3e}")
    if args.report:
        write_json({"suite": args.suite, "seed": args.seed, "passed": not failed,
                    "reports": [r.to_dict() for r in reports]}, args.report)
        record["outputs"].append(args.report)
    record["summary"] = {"passed": not failed, "checks": len(reports), "failed": len(failed),
                         "by_name": by_name}
    return EXIT_OK if not failed else EXIT_INPUT


def cmd_train(args, record):
    if args.algo not in ALGOS:
        raise UsageError(f"unknown algo {args.algo!r}; choose from {', '.join(ALGOS)}")
    mdp, hashes = _load_env(args.env)
    record["inputs"].update(hashes)
    config = TrainConfig(algo=args.algo, tau=args.tau, n=args.n, learning_rate=args.lr,
                         value_coef=args.value_coef, total_steps=args.steps,
                         target_sync_period=args.target_sync, seed=args.seed,
                         advantage_scale=args.advantage_scale, target_mode=args.target_mode,
                         eval_every=args.eval_every, reward_noise=args.reward_noise)
    record["config"]["resolved"] = config.to_dict()
    try:
        curve = train(mdp, config)
    except TrainingDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        record["summary"] = {"diverged": True, "step": exc.step}
        return EXIT_DIVERGENCE
    Path(args.out).write_text(curve.to_csv(), encoding="utf-8")
    record["outputs"].append(args.out)
    record["summary"] = {"diverged": False, "final_eta": curve.rows[-1][2]}
    return EXIT_OK


def cmd_bandit(args, record):
    env = BanditEnv(np.array(args.rewards), None if args.reference is None
                    else np.array(args.reference), args.noise)
    if args.tau < 0:
        raise UsageError("--tau must be >= 0")
    pi_star = bandit_optimal_policy(env, args.tau)
    eta_star = bandit_eta(env, pi_star, args.tau)
    step_size = args.step_size if args.step_size is not None else 0.05 / max(1.0, args.tau)
    _, curve = bandit_gradient_ascent(env, args.tau, step_size=step_size, steps=args.steps,
                                      batch_size=args.batch_size, seed=args.seed,
                                      record_every=max(1, args.steps // 100))
    print("pi* = [" + ", ".join(f"{p:.6f}" for p in pi_star) + "]")
    print(f"eta* = {eta_star:.6f}")
    print(f"final sampled-PG eta = {curve[-1][1]:.6f} after {curve[-1][0]} steps")
    if args.out:
        lines = ["step,eta"] + [f"{s},{e!r}" for s, e in curve]
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        record["outputs"].append(args.out)
    record["summary"] = {"pi_star": pi_star, "eta_star": eta_star, "final_eta": curve[-1][1]}
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "check": cmd_check, "train": cmd_train, "bandit": cmd_bandit}


def _manifest_path(args) -> Path:
    if args.manifest:
        return Path(args.manifest)
    main_output = getattr(args, "out", None) or getattr(args, "report", None)
    if main_output:
        return Path(str(main_output) + ".manifest.json")
    return Path(f"softrl-{args.command}.manifest.json")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = {k: v for k, v in vars(args).items() if k not in ("command", "manifest")}
    record = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
              "config": config, "seed": getattr(args, "seed", None), "inputs": {},
              "outputs": [], "summary": {}}
    try:
        code = COMMANDS[args.command](args, record)
    except InvalidMdpError as exc:
        print("error: invalid MDP", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        record["summary"] = {"error": "invalid MDP", "violations": exc.violations}
        code = EXIT_INPUT
    except (UsageError, MdpFormatError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        record["summary"] = {"error": str(exc)}
        code = EXIT_INPUT
    record["exit_code"] = code
    record["passed"] = code == EXIT_OK
    try:
        write_json(record, _manifest_path(args))
    except OSError as exc:
        print(f"warning: could not write manifest: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
