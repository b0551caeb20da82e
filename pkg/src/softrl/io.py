"""JSON reading/writing for MDPs, policies and solver output."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .mdp import InvalidMdpError, TabularMdp


class MdpFormatError(ValueError):
    pass


def _require(obj, key, kind):
    if key not in obj:
        raise MdpFormatError(f"missing key {key!r}")
    val = obj[key]
    if kind is int and (not isinstance(val, int) or isinstance(val, bool)):
        raise MdpFormatError(f"{key!r} must be an integer")
    return val


def mdp_from_dict(obj: dict) -> TabularMdp:
    """Build a TabularMdp from the JSON object layout.

    Every (s, a) must have a transition entry; unlisted rewards are 0.
    Semantic problems (row sums, negative probabilities, ...) are left to
    ``validate_mdp``.
    """
    if not isinstance(obj, dict):
        raise MdpFormatError("MDP file must hold a JSON object")
    S = _require(obj, "num_states", int)
    A = _require(obj, "num_actions", int)
    if S < 1 or A < 1:
        raise MdpFormatError("num_states and num_actions must be positive")
    gamma = float(_require(obj, "gamma", float))
    initial = np.asarray(_require(obj, "initial", list), dtype=float)
    if initial.shape != (S,):
        raise MdpFormatError(f"initial must have length {S}")
    terminals = _require(obj, "terminals", list)

    def index(val, bound, name):
        if not isinstance(val, int) or isinstance(val, bool) or not 0 <= val < bound:
            raise MdpFormatError(f"{name}={val!r} out of range [0, {bound})")
        return val

    terms = frozenset(index(t, S, "terminal") for t in terminals)
    P = np.zeros((S, A, S))
    listed = np.zeros((S, A), dtype=bool)
    for entry in _require(obj, "transitions", list):
        s, a = index(entry.get("s"), S, "s"), index(entry.get("a"), A, "a")
        if listed[s, a]:
            raise MdpFormatError(f"duplicate transition entry for (s={s}, a={a})")
        listed[s, a] = True
        for nxt in entry.get("next", []):
            P[s, a, index(nxt.get("s2"), S, "s2")] += float(nxt["p"])
    missing = np.argwhere(~listed)
    if missing.size:
        s, a = missing[0]
        raise MdpFormatError(f"no transition entry for (s={s}, a={a})")
    R = np.zeros((S, A))
    for entry in obj.get("rewards", []):
        s, a = index(entry.get("s"), S, "s"), index(entry.get("a"), A, "a")
        R[s, a] = float(entry["r"])
    return TabularMdp(P, R, initial, gamma, terms)


def mdp_to_dict(mdp: TabularMdp) -> dict:
    S, A = mdp.num_states, mdp.num_actions
    transitions = []
    rewards = []
    for s in range(S):
        for a in range(A):
            nxt = [{"s2": int(s2), "p": float(mdp.transition[s, a, s2])}
                   for s2 in np.flatnonzero(mdp.transition[s, a])]
            transitions.append({"s": s, "a": a, "next": nxt})
            if mdp.reward[s, a] != 0:
                rewards.append({"s": s, "a": a, "r": float(mdp.reward[s, a])})
    return {
        "num_states": S,
        "num_actions": A,
        "gamma": float(mdp.gamma),
        "initial": [float(x) for x in mdp.initial],
        "terminals": sorted(int(t) for t in mdp.terminals),
        "transitions": transitions,
        "rewards": rewards,
    }


def load_mdp(path) -> TabularMdp:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MdpFormatError(f"{path}: invalid JSON ({exc})") from exc
    return mdp_from_dict(obj)


def dump_mdp(mdp: TabularMdp, path) -> None:
    write_json(mdp_to_dict(mdp), path)


def load_policy(path) -> np.ndarray:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict) or "probs" not in obj:
        raise MdpFormatError("policy file needs a 'probs' array")
    return np.asarray(obj["probs"], dtype=float)


def dump_policy(pi, path) -> None:
    write_json({"probs": np.asarray(pi, dtype=float).tolist()}, path)


def to_jsonable(x):
    """numpy values to plain JSON types; floats keep full precision via repr."""
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, (frozenset, set)):
        return sorted(to_jsonable(v) for v in x)
    return x


def write_json(obj, path) -> None:
    # json serializes floats with repr, which round-trips exactly (17 sig. digits max)
    text = json.dumps(to_jsonable(obj), indent=2, allow_nan=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def solution_to_dict(sol, mdp: TabularMdp, tau: float, tol: float) -> dict:
    return {
        "q": sol.q_star,
        "v": sol.v_star,
        "pi": sol.pi_star,
        "metadata": {
            "tau": tau,
            "tol": tol,
            "gamma": mdp.gamma,
            "iterations": sol.iterations,
            "residual": sol.residual,
            "num_states": mdp.num_states,
            "num_actions": mdp.num_actions,
        },
    }


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


__all__ = ["InvalidMdpError", "MdpFormatError", "load_mdp", "dump_mdp", "mdp_from_dict",
           "mdp_to_dict", "load_policy", "dump_policy", "write_json", "to_jsonable",
           "solution_to_dict", "file_sha256"]
