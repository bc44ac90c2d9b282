"""Abstract soccer duel on a 4x5 board.

Two players compete for a ball, aiming to score by carrying or kicking it
into their target goal cells on opposite edges of the board (player 1
attacks the left-edge cells 6 and 11, player 2 the right-edge cells 10
and 15, in the 1-based row-major numbering).  Six actions: the four
compass moves, stay, and kick.

Dynamics per simultaneous step:
  * movement resolves first (kick and stay keep the player in place,
    walls clamp);
  * if both resolved positions coincide, both players bounce back and the
    ball changes hands with probability `beta_exchange`;
  * a player that carried the ball into one of its target cells scores
    and the game ends;
  * otherwise, if the player that held the ball at the start of the step
    chose kick and still holds it, the shot scores with the
    position-dependent success probability (PSS) and ends the game; a
    miss turns the ball over to the opponent.

The reward is the shooter's own perceived shot value: choosing kick with
the ball is worth PSS(cell) (scaled by the probability the shot actually
fires when a collision might steal the ball first), and carrying the ball
in is worth 1.  The "duel" scenario is zero-sum: r2 = -r1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..game_core import RewardVector, StochasticGame
from .base import CompiledEnvironment, tensor_from_outcomes

ROWS, COLS = 4, 5
ACTIONS = ("N", "S", "E", "W", "stay", "kick")
KICK = 5
# (dr, dc); rows grow downward in the cell numbering
DELTAS = ((-1, 0), (1, 0), (0, 1), (0, -1), (0, 0), (0, 0))

# Position-dependent probability of a successful shot, per player, in
# 1-based cell numbering (row-major).  Cells absent from a player's table
# (their own target goals) shoot with probability 0.
_PSS1_TABLE = {0.7: (1, 7, 12, 16), 0.5: (2, 8, 13, 17), 0.3: (3, 9, 14, 18),
               0.1: (4, 10, 15, 19), 0.0: (5, 20)}
_PSS2_TABLE = {0.7: (5, 9, 14, 20), 0.5: (4, 8, 13, 19), 0.3: (3, 7, 12, 18),
               0.1: (2, 6, 11, 17), 0.0: (1, 16)}


def _pss_array(table) -> np.ndarray:
    out = np.zeros(ROWS * COLS)
    for val, cells in table.items():
        for c in cells:
            out[c - 1] = val
    return out


PSS1 = _pss_array(_PSS1_TABLE)
PSS2 = _pss_array(_PSS2_TABLE)


@dataclass(frozen=True)
class SoccerSpec:
    beta_exchange: float = 0.6
    discount: float = 0.9
    goals1: tuple = (6, 11)   # cells player 1 attacks (1-based)
    goals2: tuple = (10, 15)
    start1: int = 9
    start2: int = 12
    name: str = "soccer"

    def __post_init__(self):
        if not (0.0 <= self.beta_exchange <= 1.0):
            raise ValueError("ball exchange rate must be in [0, 1]")
        for c in (*self.goals1, *self.goals2, self.start1, self.start2):
            if not 1 <= c <= ROWS * COLS:
                raise ValueError(f"cell {c} outside the board")
        if self.start1 == self.start2:
            raise ValueError("players cannot share a start cell")


def soccer_spec(beta_exchange: float = 0.6, discount: float = 0.9) -> SoccerSpec:
    return SoccerSpec(beta_exchange=beta_exchange, discount=discount)


def _move(pos: int, action: int) -> int:
    r, c = divmod(pos, COLS)
    dr, dc = DELTAS[action]
    r2, c2 = r + dr, c + dc
    if 0 <= r2 < ROWS and 0 <= c2 < COLS:
        return r2 * COLS + c2
    return pos


def compile_soccer(spec: SoccerSpec) -> CompiledEnvironment:
    n_cells = ROWS * COLS
    states = [(p1, p2, ball)
              for p1 in range(n_cells) for p2 in range(n_cells) if p1 != p2
              for ball in (0, 1)]
    index = {s: i for i, s in enumerate(states)}
    sink = len(states)
    n_states = sink + 1
    m = len(ACTIONS)
    goals1 = {c - 1 for c in spec.goals1}
    goals2 = {c - 1 for c in spec.goals2}
    beta = spec.beta_exchange

    outcomes = [None] * (n_states * m * m)
    r_duel = np.zeros(n_states * m * m)

    for si, (p1, p2, ball) in enumerate(states):
        for a1 in range(m):
            for a2 in range(m):
                k = (a1 * m + a2) * n_states + si
                t1 = _move(p1, a1)
                t2 = _move(p2, a2)
                collided = t1 == t2
                if collided:
                    t1, t2 = p1, p2
                ball_branches = [(1.0, ball)]
                if collided and beta > 0.0:
                    ball_branches = []
                    if beta < 1.0:
                        ball_branches.append((1.0 - beta, ball))
                    ball_branches.append((beta, 1 - ball))
                branches = []
                for pb, ball_now in ball_branches:
                    # carry: the ball owner moved into a target goal cell
                    if not collided and ball_now == 0 and a1 < 4 and t1 in goals1:
                        branches.append((pb, sink, True, False))
                        continue
                    if not collided and ball_now == 1 and a2 < 4 and t2 in goals2:
                        branches.append((pb, sink, False, True))
                        continue
                    # kick fires only for the player that held the ball at
                    # the start of the step and still holds it now
                    holder_action = a1 if ball == 0 else a2
                    if holder_action == KICK and ball_now == ball:
                        pss = (PSS1[p1] if ball == 0 else PSS2[p2])
                        if ball == 0 and p1 in goals1:
                            pss = 0.0
                        if ball == 1 and p2 in goals2:
                            pss = 0.0
                        if pss > 0.0:
                            branches.append((pb * pss, sink, ball == 0, ball == 1))
                        if pss < 1.0:
                            nxt = index[(t1, t2, 1 - ball)]  # turnover on miss
                            branches.append((pb * (1.0 - pss), nxt, False, False))
                        continue
                    branches.append((pb, index[(t1, t2, ball_now)], False, False))
                outcomes[k] = branches
                # perceived reward: deterministic in (s, a1, a2)
                fire_prob = (1.0 - beta) if collided else 1.0
                r = 0.0
                if not collided and ball == 0 and a1 < 4 and t1 in goals1:
                    r += 1.0
                elif ball == 0 and a1 == KICK:
                    r += fire_prob * (0.0 if p1 in goals1 else PSS1[p1])
                if not collided and ball == 1 and a2 < 4 and t2 in goals2:
                    r -= 1.0
                elif ball == 1 and a2 == KICK:
                    r -= fire_prob * (0.0 if p2 in goals2 else PSS2[p2])
                r_duel[k] = r

    for a1 in range(m):
        for a2 in range(m):
            outcomes[(a1 * m + a2) * n_states + sink] = [(1.0, sink, False, False)]

    game = StochasticGame(n_states, m, tensor_from_outcomes(outcomes, n_states), spec.discount)
    rewards = {
        "duel": (RewardVector(r_duel, n_states, m), RewardVector(-r_duel, n_states, m)),
    }
    start = (spec.start1 - 1, spec.start2 - 1)
    initial = [(index[(start[0], start[1], 0)], 0.5), (index[(start[0], start[1], 1)], 0.5)]
    labels = [f"P1@{p1 + 1}P2@{p2 + 1}ball{ball + 1}" for p1, p2, ball in states] + ["sink"]
    return CompiledEnvironment(
        name=spec.name,
        game=game,
        rewards=rewards,
        outcomes=outcomes,
        initial=initial,
        sink=sink,
        labels=labels,
        meta={"spec": spec, "states": states, "pss1": PSS1, "pss2": PSS2},
    )
