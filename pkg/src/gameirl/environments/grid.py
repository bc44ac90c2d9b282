"""Go-back-home grid games.

Two agents move simultaneously on a small board (four compass actions);
each is rewarded once for reaching its own goal, at which point the game
stops and the state absorbs into a sink.  Variants differ in board
layout: separate corner goals (game 1) versus a shared top-middle goal
with risky barrier edges below the top corners (game 2).

Rules:
  * a move into a wall is a no-op;
  * a barrier edge, traversed in its risky direction, fails with
    probability `barrier_fail` and leaves the agent in place;
  * if both resolved targets coincide, both agents bounce back to their
    original cells, unless the contested cell is a goal for both agents
    (simultaneous arrival must be possible when goals coincide) or lies
    in a row listed in `collision_exempt_rows`;
  * rows in `collision_exempt_rows` (off by default) let both agents
    occupy the contested cell, which enlarges the state space with
    same-cell configurations.

Reward scenarios: "basic" credits each agent that reaches its goal;
"coordination" credits both only when they arrive simultaneously.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..game_core import StochasticGame
from .base import CompiledEnvironment, rewards_from_outcomes, tensor_from_outcomes

# N, S, E, W with y growing upward
ACTIONS = ("N", "S", "E", "W")
DELTAS = ((0, 1), (0, -1), (1, 0), (-1, 0))


@dataclass(frozen=True)
class GridGameSpec:
    width: int = 3
    height: int = 3
    start1: tuple = (0, 0)
    start2: tuple = (2, 0)
    goals1: tuple = ((2, 2),)
    goals2: tuple = ((0, 2),)
    barriers: tuple = ()  # ((from_cell, to_cell), ...): risky directed edges
    barrier_fail: float = 0.5
    collision_exempt_rows: tuple = ()
    discount: float = 0.9
    name: str = "grid"

    def __post_init__(self):
        cells = {(x, y) for x in range(self.width) for y in range(self.height)}
        for c in (self.start1, self.start2, *self.goals1, *self.goals2):
            if tuple(c) not in cells:
                raise ValueError(f"cell {c} off the {self.width}x{self.height} board")
        if self.start1 == self.start2:
            raise ValueError("agents cannot share a start cell")
        if not (0.0 <= self.barrier_fail <= 1.0):
            raise ValueError("barrier failure probability must be in [0, 1]")


def gg1_spec(discount: float = 0.9) -> GridGameSpec:
    """3x3 board, agents start at the bottom corners, goals at the opposite
    top corners."""
    return GridGameSpec(name="gg1", discount=discount)


def gg2_spec(discount: float = 0.9) -> GridGameSpec:
    """3x3 board, shared top-middle goal, risky barrier edges downward from
    the top corners."""
    return GridGameSpec(
        goals1=((1, 2),),
        goals2=((1, 2),),
        barriers=(((0, 2), (0, 1)), ((2, 2), (2, 1))),
        name="gg2",
        discount=discount,
    )


def _move(spec: GridGameSpec, cell, action):
    dx, dy = DELTAS[action]
    x, y = cell[0] + dx, cell[1] + dy
    if 0 <= x < spec.width and 0 <= y < spec.height:
        return (x, y)
    return cell


def compile_grid(spec: GridGameSpec) -> CompiledEnvironment:
    """Enumerate states, build the exact outcome table, and derive the
    transition tensor and both reward scenarios."""
    cells = [(x, y) for y in range(spec.height) for x in range(spec.width)]
    states = [(c1, c2) for c1 in cells for c2 in cells if c1 != c2]
    if spec.collision_exempt_rows:
        states += [(c, c) for c in cells if c[1] in spec.collision_exempt_rows]
    index = {s: i for i, s in enumerate(states)}
    sink = len(states)
    n_states = sink + 1
    m = len(ACTIONS)
    barriers = {tuple(map(tuple, b)) for b in spec.barriers}
    shared_goals = set(map(tuple, spec.goals1)) & set(map(tuple, spec.goals2))

    def agent_branches(cell, action):
        """[(prob, resolved cell)] after walls and barrier risk."""
        target = _move(spec, cell, action)
        if target != cell and (tuple(cell), tuple(target)) in barriers:
            f = spec.barrier_fail
            out = []
            if f < 1.0:
                out.append((1.0 - f, target))
            if f > 0.0:
                out.append((f, cell))
            return out
        return [(1.0, target)]

    goals1 = set(map(tuple, spec.goals1))
    goals2 = set(map(tuple, spec.goals2))
    outcomes = [None] * (n_states * m * m)

    for si, (c1, c2) in enumerate(states):
        done1 = c1 in goals1
        done2 = c2 in goals2
        for a1 in range(m):
            for a2 in range(m):
                k = (a1 * m + a2) * n_states + si
                if done1 or done2:
                    outcomes[k] = [(1.0, sink, False, False)]
                    continue
                branches = []
                for p1, t1 in agent_branches(c1, a1):
                    for p2, t2 in agent_branches(c2, a2):
                        f1, f2 = t1, t2
                        if f1 == f2:
                            exempt = (f1 in shared_goals
                                      or f1[1] in spec.collision_exempt_rows)
                            if not exempt:
                                f1, f2 = c1, c2
                        s1 = f1 in goals1
                        s2 = f2 in goals2
                        nxt = sink if (s1 or s2) else index[(f1, f2)]
                        branches.append((p1 * p2, nxt, s1, s2))
                outcomes[k] = branches
    for a1 in range(m):
        for a2 in range(m):
            k = (a1 * m + a2) * n_states + sink
            outcomes[k] = [(1.0, sink, False, False)]

    game = StochasticGame(n_states, m, tensor_from_outcomes(outcomes, n_states), spec.discount)
    rewards = {
        "basic": rewards_from_outcomes(
            outcomes, n_states, m, lambda s1, s2: (float(s1), float(s2))),
        "coordination": rewards_from_outcomes(
            outcomes, n_states, m,
            lambda s1, s2: (float(s1 and s2), float(s1 and s2))),
    }
    labels = [f"A{c1}B{c2}" for c1, c2 in states] + ["sink"]
    return CompiledEnvironment(
        name=spec.name,
        game=game,
        rewards=rewards,
        outcomes=outcomes,
        initial=[(index[(spec.start1, spec.start2)], 1.0)],
        sink=sink,
        labels=labels,
        meta={"spec": spec, "states": states, "cells": cells},
    )
