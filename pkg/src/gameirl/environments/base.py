"""Compiled-environment container shared by the grid and soccer builders.

An environment compiles to an exact, analytic outcome table: for every
(state, action pair) a list of (probability, next state, scored1, scored2)
branches.  The transition tensor, the per-scenario reward vectors, and the
episode sampler are all derived from that one table, so sampled dynamics
agree with the matrices by construction.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..game_core import BiPolicy, RewardVector, StochasticGame

Branch = tuple[float, int, bool, bool]  # probability, next state, scored1, scored2


@dataclass
class CompiledEnvironment:
    name: str
    game: StochasticGame
    rewards: dict[str, tuple[RewardVector, RewardVector]]
    outcomes: list[list[Branch]]
    initial: list[tuple[int, float]]
    sink: int
    labels: list[str]
    meta: dict = field(default_factory=dict)
    _cum: list[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self._cum is None:
            self._cum = [np.cumsum([p for p, *_ in br]) for br in self.outcomes]

    @property
    def n_states(self) -> int:
        return self.game.n_states

    @property
    def n_actions(self) -> int:
        return self.game.n_actions

    @property
    def n_board_states(self) -> int:
        return self.game.n_states - 1  # all but the absorbing sink

    def flat(self, s: int, a1: int, a2: int) -> int:
        m = self.game.n_actions
        return (a1 * m + a2) * self.game.n_states + s

    def step(self, s: int, a1: int, a2: int, rng: np.random.Generator):
        """Sample one transition; returns (next_state, (scored1, scored2), terminal)."""
        k = self.flat(s, a1, a2)
        branches = self.outcomes[k]
        if len(branches) == 1:
            _, nxt, s1, s2 = branches[0]
        else:
            u = rng.random()
            i = bisect.bisect_left(self._cum[k], u)
            i = min(i, len(branches) - 1)
            _, nxt, s1, s2 = branches[i]
        return nxt, (s1, s2), nxt == self.sink

    def sample_initial(self, rng: np.random.Generator) -> int:
        if len(self.initial) == 1:
            return self.initial[0][0]
        probs = np.array([p for _, p in self.initial])
        return self.initial[int(rng.choice(len(self.initial), p=probs))][0]

    def reward_pair(self, scenario: str) -> tuple[RewardVector, RewardVector]:
        try:
            return self.rewards[scenario]
        except KeyError:
            raise KeyError(
                f"unknown reward scenario {scenario!r}; have {sorted(self.rewards)}") from None

    def score_probability(self, player: int) -> np.ndarray:
        """P(player scores | s, a) over flat indices, from the outcome table."""
        out = np.zeros(self.game.flat_dim)
        for k, branches in enumerate(self.outcomes):
            out[k] = sum(p for p, _, s1, s2 in branches if (s1 if player == 1 else s2))
        return out

    def goal_support(self, player: int) -> np.ndarray:
        """Boolean flat mask of entries where the player can score."""
        return self.score_probability(player) > 0

    def uniform_policy(self) -> BiPolicy:
        return BiPolicy.uniform(self.game.n_states, self.game.n_actions)


def tensor_from_outcomes(outcomes: list[list[Branch]], n_states: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for k, branches in enumerate(outcomes):
        acc: dict[int, float] = {}
        for p, nxt, _, _ in branches:
            acc[nxt] = acc.get(nxt, 0.0) + p
        for nxt, p in acc.items():
            rows.append(k)
            cols.append(nxt)
            vals.append(p)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(outcomes), n_states))


def rewards_from_outcomes(outcomes, n_states, n_actions, rule) -> tuple[RewardVector, RewardVector]:
    """Expected immediate rewards under a per-branch crediting rule.

    `rule(scored1, scored2) -> (r1, r2)` maps branch score flags to reward
    contributions; the expectation over branches gives R_i(s, a1, a2).
    """
    r1 = np.zeros(n_states * n_actions ** 2)
    r2 = np.zeros_like(r1)
    for k, branches in enumerate(outcomes):
        for p, _, s1, s2 in branches:
            c1, c2 = rule(s1, s2)
            r1[k] += p * c1
            r2[k] += p * c2
    return (RewardVector(r1, n_states, n_actions), RewardVector(r2, n_states, n_actions))
