"""Compiled-environment checks: dynamics entries, rewards, sampling,
board symmetry."""

import numpy as np
import pytest

from gameirl.environments.grid import (GridGameSpec, compile_grid, gg1_spec,
                                       gg2_spec)
from gameirl.environments.soccer import (COLS, KICK, PSS1, PSS2, ROWS,
                                         SoccerSpec, compile_soccer,
                                         soccer_spec)


@pytest.fixture(scope="module")
def gg1():
    return compile_grid(gg1_spec())


@pytest.fixture(scope="module")
def gg2():
    return compile_grid(gg2_spec())


@pytest.fixture(scope="module")
def soccer():
    return compile_soccer(soccer_spec())


def test_gg1_state_count(gg1):
    # two distinguishable agents on distinct cells of a 3x3 board
    assert gg1.n_board_states == 72
    assert gg1.n_states == 73  # plus the absorbing sink


def test_gg1_collision_pushback(gg1):
    states = gg1.meta["states"]
    s = states.index(((0, 0), (2, 0)))
    # E and W aim both agents at the middle bottom cell
    branches = gg1.outcomes[gg1.flat(s, 2, 3)]
    assert branches == [(1.0, s, False, False)]


def test_bottom_row_exemption_toggle():
    spec = GridGameSpec(collision_exempt_rows=(0,))
    env = compile_grid(spec)
    # same-cell bottom-row configurations join the state space
    assert env.n_board_states == 72 + 3
    states = env.meta["states"]
    s = states.index(((0, 0), (2, 0)))
    mid = states.index(((1, 0), (1, 0)))
    assert env.outcomes[env.flat(s, 2, 3)] == [(1.0, mid, False, False)]


def test_gg2_barrier_half_noop(gg2):
    states = gg2.meta["states"]
    s = states.index(((0, 2), (2, 0)))
    branches = sorted(gg2.outcomes[gg2.flat(s, 1, 0)])  # A moves S through barrier
    assert len(branches) == 2
    probs = sorted(p for p, *_ in branches)
    assert probs == [0.5, 0.5]
    nxt = {states[b[1]] for b in branches}
    assert ((0, 1), (2, 1)) in nxt and ((0, 2), (2, 1)) in nxt


def test_gg2_simultaneous_shared_goal_entry(gg2):
    states = gg2.meta["states"]
    s = states.index(((0, 2), (2, 2)))
    # both step into the shared goal (1, 2): allowed, both score
    branches = gg2.outcomes[gg2.flat(s, 2, 3)]
    assert branches == [(1.0, gg2.sink, True, True)]
    rc1, rc2 = gg2.reward_pair("coordination")
    assert rc1.values[gg2.flat(s, 2, 3)] == 1.0
    rb1, _ = gg2.reward_pair("basic")
    assert rb1.values[gg2.flat(s, 2, 3)] == 1.0


def test_grid_rewards_are_binary(gg1, gg2):
    for env in (gg1, gg2):
        for scenario in ("basic", "coordination"):
            r1, r2 = env.reward_pair(scenario)
            assert set(np.unique(r1.values)) <= {0.0, 1.0}
            assert set(np.unique(r2.values)) <= {0.0, 1.0}


def test_terminal_occupancy_absorbs(gg1):
    states = gg1.meta["states"]
    s = states.index(((2, 2), (0, 0)))  # agent 1 already on its goal
    for a1 in range(4):
        for a2 in range(4):
            assert gg1.outcomes[gg1.flat(s, a1, a2)] == [(1.0, gg1.sink, False, False)]


def test_soccer_state_count(soccer):
    assert soccer.n_board_states == 20 * 19 * 2
    assert soccer.n_states == 761


def test_soccer_pss_table_rows(soccer):
    # spot values from the published success-probability table (1-based)
    assert PSS1[0] == 0.7 and PSS1[6] == 0.7 and PSS1[11] == 0.7 and PSS1[15] == 0.7
    assert PSS1[4] == 0.0 and PSS1[19] == 0.0
    assert PSS2[4] == 0.7 and PSS2[8] == 0.7 and PSS2[13] == 0.7 and PSS2[19] == 0.7
    assert PSS2[0] == 0.0 and PSS2[15] == 0.0
    # a player's own target cells shoot with probability 0
    assert PSS1[5] == 0.0 and PSS1[10] == 0.0
    assert PSS2[9] == 0.0 and PSS2[14] == 0.0


def test_soccer_kick_scores_with_pss(soccer):
    states = soccer.meta["states"]
    s = states.index((0, 7, 0))  # player 1 at cell 1 with the ball
    branches = soccer.outcomes[soccer.flat(s, KICK, 4)]
    p_score = sum(p for p, _, s1, _ in branches if s1)
    assert p_score == pytest.approx(0.7, abs=1e-12)
    # a miss turns the ball over
    miss = [b for b in branches if not b[2]]
    assert len(miss) == 1
    _, nxt, _, _ = miss[0]
    assert states[nxt] == (0, 7, 1)
    r1, _ = soccer.reward_pair("duel")
    assert r1.values[soccer.flat(s, KICK, 4)] == pytest.approx(0.7)


def test_soccer_carry_scores(soccer):
    states = soccer.meta["states"]
    s = states.index((6, 10, 0))  # player 1 at cell 7, ball, goal cell 6 to the west
    branches = soccer.outcomes[soccer.flat(s, 3, 4)]  # W, stay
    assert branches == [(1.0, soccer.sink, True, False)]
    r1, r2 = soccer.reward_pair("duel")
    assert r1.values[soccer.flat(s, 3, 4)] == 1.0
    assert r2.values[soccer.flat(s, 3, 4)] == -1.0


def test_soccer_collision_exchange_frequency(soccer):
    """Monte Carlo frequencies of an exchange-bearing cell match the
    analytic tensor within +-0.01 at 1e5 samples."""
    states = soccer.meta["states"]
    s = states.index((6, 8, 0))  # both players aim at the cell between them
    k = soccer.flat(s, 2, 3)
    branches = soccer.outcomes[k]
    lookup = {nxt: p for p, nxt, _, _ in branches}
    rng = np.random.default_rng(0)
    counts = {}
    n = 100_000
    for _ in range(n):
        nxt, _, _ = soccer.step(s, 2, 3, rng)
        counts[nxt] = counts.get(nxt, 0) + 1
    assert set(counts) == set(lookup)
    for nxt, p in lookup.items():
        assert counts[nxt] / n == pytest.approx(p, abs=0.01)
    # collision keeps positions and exchanges possession at the spec rate
    flipped = states.index((6, 8, 1))
    assert lookup[flipped] == pytest.approx(0.6)


def test_sampled_frequencies_chi_square(gg2):
    """Chi-square sanity of step() sampling against the tensor rows."""
    rng = np.random.default_rng(1)
    states = gg2.meta["states"]
    s = states.index(((0, 2), (2, 2)))
    k = gg2.flat(s, 1, 1)  # both move down through barriers: four branches
    branches = gg2.outcomes[k]
    n = 100_000
    counts = {}
    for _ in range(n):
        nxt, _, _ = gg2.step(s, 1, 1, rng)
        counts[nxt] = counts.get(nxt, 0) + 1
    chi2 = 0.0
    for p, nxt, _, _ in branches:
        exp = p * n
        chi2 += (counts.get(nxt, 0) - exp) ** 2 / exp
    # 3 degrees of freedom; 0.999 quantile is ~16.3
    assert chi2 < 16.3


def test_grid_swap_symmetry(gg1):
    """Mirroring the board and swapping agents permutes the tensor."""
    spec = gg1.meta["spec"]
    states = gg1.meta["states"]
    index = {st: i for i, st in enumerate(states)}

    def mirror(cell):
        return (spec.width - 1 - cell[0], cell[1])

    def sigma(i):
        c1, c2 = states[i]
        return index[(mirror(c2), mirror(c1))]

    amap = {0: 0, 1: 1, 2: 3, 3: 2}  # N, S swap E/W under the mirror
    p = gg1.game.transitions_dense
    n = gg1.n_states
    rng = np.random.default_rng(2)
    for _ in range(200):
        s = int(rng.integers(gg1.n_board_states))
        a1 = int(rng.integers(4))
        a2 = int(rng.integers(4))
        k = gg1.flat(s, a1, a2)
        k_m = gg1.flat(sigma(s), amap[a2], amap[a1])
        row = p[k]
        row_m = p[k_m]
        for nxt in range(n):
            target = n - 1 if nxt == gg1.sink else sigma(nxt)
            assert row[nxt] == pytest.approx(row_m[target], abs=1e-12)


def test_soccer_rotation_symmetry(soccer):
    """180-degree rotation plus role/possession swap permutes the tensor."""
    states = soccer.meta["states"]
    index = {st: i for i, st in enumerate(states)}

    def rot(c):
        r, col = divmod(c, COLS)
        return (ROWS - 1 - r) * COLS + (COLS - 1 - col)

    def sigma(i):
        p1, p2, ball = states[i]
        return index[(rot(p2), rot(p1), 1 - ball)]

    amap = {0: 1, 1: 0, 2: 3, 3: 2, 4: 4, 5: 5}
    p = soccer.game.transitions
    rng = np.random.default_rng(3)
    for _ in range(100):
        s = int(rng.integers(soccer.n_board_states))
        a1 = int(rng.integers(6))
        a2 = int(rng.integers(6))
        k = soccer.flat(s, a1, a2)
        k_m = soccer.flat(sigma(s), amap[a2], amap[a1])
        row = {j: v for j, v in zip(p[k].indices, p[k].data)}
        row_m = {j: v for j, v in zip(p[k_m].indices, p[k_m].data)}
        mapped = {}
        for j, v in row.items():
            tgt = soccer.sink if j == soccer.sink else sigma(j)
            mapped[tgt] = mapped.get(tgt, 0.0) + v
        assert set(mapped) == set(row_m)
        for j, v in mapped.items():
            assert v == pytest.approx(row_m[j], abs=1e-12)
    # start cells map onto each other under the same rotation
    spec = soccer.meta["spec"]
    assert rot(spec.start1 - 1) == spec.start2 - 1


def test_spec_validation():
    with pytest.raises(ValueError):
        GridGameSpec(start1=(5, 5))
    with pytest.raises(ValueError):
        SoccerSpec(beta_exchange=1.5)
    with pytest.raises(KeyError):
        compile_grid(gg1_spec()).reward_pair("nope")
