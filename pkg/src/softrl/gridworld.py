"""Gridworld specs compiled to TabularMdp."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mdp import TabularMdp

# up, right, down, left as (drow, dcol)
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))


@dataclass(frozen=True)
class GridworldSpec:
    """Cells are ``(row, col)``; walls are impassable and are not states.

    Entering the goal ends the episode and pays +1 (plus ``step_reward``).
    With probability ``slip_prob`` the chosen move is replaced by one drawn
    uniformly from the four directions.
    """

    width: int
    height: int
    start: tuple = (0, 0)
    goal: tuple | None = None
    walls: frozenset = field(default_factory=frozenset)
    step_reward: float = 0.0
    slip_prob: float = 0.0
    gamma: float = 0.9

    def __post_init__(self):
        goal = (self.height - 1, self.width - 1) if self.goal is None else tuple(self.goal)
        object.__setattr__(self, "goal", goal)
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "walls", frozenset(tuple(w) for w in self.walls))

    def cells(self) -> list:
        return [(r, c) for r in range(self.height) for c in range(self.width)
                if (r, c) not in self.walls]


class GridworldError(ValueError):
    pass


def _check_spec(spec: GridworldSpec):
    if spec.width < 1 or spec.height < 1:
        raise GridworldError("grid must be at least 1x1")
    for name, cell in (("start", spec.start), ("goal", spec.goal)):
        r, c = cell
        if not (0 <= r < spec.height and 0 <= c < spec.width):
            raise GridworldError(f"{name} {cell} is outside the grid")
        if cell in spec.walls:
            raise GridworldError(f"{name} {cell} is a wall")
    if spec.start == spec.goal:
        raise GridworldError("start and goal must differ")
    if not 0 <= spec.slip_prob < 1:
        raise GridworldError("slip_prob must lie in [0, 1)")


def _step(spec, cell, move):
    r, c = cell[0] + move[0], cell[1] + move[1]
    if 0 <= r < spec.height and 0 <= c < spec.width and (r, c) not in spec.walls:
        return (r, c)
    return cell


def _goal_reachable(spec) -> bool:
    seen = {spec.start}
    queue = deque([spec.start])
    while queue:
        cell = queue.popleft()
        if cell == spec.goal:
            return True
        for m in MOVES:
            nxt = _step(spec, cell, m)
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return False


def compile_gridworld(spec: GridworldSpec) -> TabularMdp:
    """Row-major enumeration of the non-wall cells; four actions (up, right, down, left)."""
    _check_spec(spec)
    if not _goal_reachable(spec):
        raise GridworldError(f"goal {spec.goal} is unreachable from start {spec.start}")
    cells = spec.cells()
    index = {cell: i for i, cell in enumerate(cells)}
    S, A = len(cells), len(MOVES)
    P = np.zeros((S, A, S))
    goal = index[spec.goal]
    for cell, s in index.items():
        if s == goal:
            P[s, :, s] = 1.0
            continue
        for a, move in enumerate(MOVES):
            P[s, a, index[_step(spec, cell, move)]] += 1.0 - spec.slip_prob
            for other in MOVES:
                P[s, a, index[_step(spec, cell, other)]] += spec.slip_prob / A
    r = spec.step_reward + P[:, :, goal]
    r[goal] = 0.0
    mu = np.zeros(S)
    mu[index[spec.start]] = 1.0
    return TabularMdp(P, r, mu, spec.gamma, frozenset({goal}))


GRID4X4 = GridworldSpec(width=4, height=4, start=(0, 0), goal=(3, 3),
                        walls=frozenset({(1, 1), (1, 2)}), gamma=0.9)
GRID8X8 = GridworldSpec(width=8, height=8, start=(0, 0), goal=(7, 7),
                        walls=frozenset({(1, 1), (1, 2), (1, 3), (3, 5), (4, 5), (5, 5),
                                         (6, 2), (6, 3)}),
                        slip_prob=0.1, gamma=0.95)

BUILTIN_GRIDS = {"grid4x4": GRID4X4, "grid8x8": GRID8X8}
