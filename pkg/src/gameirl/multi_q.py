"""Forward learning: joint Q-learning driven by per-state equilibrium backups.

`run_multi_q` is the sampled learner: both players follow an
epsilon-greedy version of the current stage solution, observe a shared
transition, and update their Q tables with

    Q_i(s, a) <- (1 - alpha) Q_i(s, a) + alpha [ (1 - gamma) r_i(s, a)
                                                 + gamma V_i(s') ]

where V_i(s') evaluates the chosen solution concept on both players'
Q matrices at s'.  An optional refinement stage then runs synchronous
exact backups (same update with alpha = 1, expectations taken under the
environment's analytic transition tensor) until the tables converge, so
that the extracted policy is an exact equilibrium of the learned game
rather than a sampling-noise neighbour.  `cfg.iterations = 0` with
refinement enabled gives a pure equilibrium value-iteration solve.

Concept backups: uCS takes both payoffs at the pair maximizing the sum;
cooE uses each player's own maximum (coordination existence is enforced
only at extraction); advE/minimax use each player's own maximin level;
uNE/uCE evaluate the stage solution.  Maximin backups carry certificate
strategies from previous solves and re-solve by LP only when the
certificate gap opens, which makes the refinement sweeps cheap once
strategies stabilize.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .convex_backend import EQ as EQ_SENSE
from .convex_backend import GE as GE_SENSE
from .convex_backend import LinearProgram, solve_lp
from .game_core import BiPolicy, RewardVector
from .stage_equilibria import (StageGame, solve_stage, solve_ucs, solve_uce,
                               solve_une, _maximin_row)

CONCEPTS = ("uCS", "cooE", "uCE", "uNE", "advE", "minimax")


@dataclass
class MultiQConfig:
    concept: str
    iterations: int = 500_000
    alpha0: float = 1.0
    # per-entry schedule: alpha = alpha0 / (1 + visits(s, a) / alpha_decay)
    alpha_decay: float = 1e4
    epsilon: float = 0.2
    seed: int = 0
    refine_sweeps: int = 0
    refine_tol: float = 1e-12
    diagnostics_path: str | None = None
    diagnostics_every: int = 10_000

    def __post_init__(self):
        if self.concept not in CONCEPTS:
            raise ValueError(f"unknown concept {self.concept!r}")
        if not (0.0 < self.alpha0 <= 1.0):
            raise ValueError("alpha0 must be in (0, 1]")
        if self.iterations < 0 or (self.iterations == 0 and self.refine_sweeps == 0):
            raise ValueError("need a sampled phase, a refinement phase, or both")


@dataclass
class QTables:
    q1: np.ndarray  # (N, M, M), player 1 rows
    q2: np.ndarray

    def copy(self):
        return QTables(self.q1.copy(), self.q2.copy())


class EquilibriumExtractionError(RuntimeError):
    """Raised when the stage concept does not exist at some states."""

    def __init__(self, concept, states):
        self.concept = concept
        self.states = list(states)
        super().__init__(f"{concept} does not exist at states {self.states}")


def reward_cube(r: RewardVector) -> np.ndarray:
    """(N, M, M) view of a flat canonical reward vector."""
    n, m = r.n_states, r.n_actions
    return r.values.reshape(m, m, n).transpose(2, 0, 1)


def _cube_view(flat: np.ndarray, n: int, m: int) -> np.ndarray:
    """(N, M, M) writable view into a flat canonical vector."""
    return flat.reshape(m, m, n).transpose(2, 0, 1)


# ---------------------------------------------------------------------------
# maximin backup with certificate reuse
# ---------------------------------------------------------------------------


def _pure_saddle(a: np.ndarray, tol: float):
    row_min = a.min(axis=1)
    i = int(np.argmax(row_min))
    col_max = a.max(axis=0)
    j = int(np.argmin(col_max))
    if col_max[j] - row_min[i] <= tol:
        m = a.shape[0]
        x = np.zeros(m)
        x[i] = 1.0
        y = np.zeros(m)
        y[j] = 1.0
        return row_min[i], x, y
    return None


def _maximin_value(a: np.ndarray, cert, tol: float = 1e-11):
    """(value, x, y_cert): x guarantees value, y_cert caps the opponent.

    Reuses a cached (x, y) pair when it still pinches the value within
    tol; otherwise solves the two matrix-game LPs.
    """
    scale = max(1.0, np.abs(a).max())
    saddle = _pure_saddle(a, tol * scale)
    if saddle is not None:
        return saddle
    if cert is not None:
        x, y = cert
        lower = (x @ a).min()
        upper = (a @ y).max()
        if upper - lower <= tol * scale:
            return float(lower), x, y
    x, lower = _maximin_row(a)
    y, _ = _maximin_row(-a.T)
    return float(lower), x, y


class _MaximinCache:
    """Per-(state, player) certificate store for maximin backups."""

    def __init__(self, n_states):
        self.certs = [[None, None] for _ in range(n_states)]

    def value(self, s, player, a, tol=1e-11):
        v, x, y = _maximin_value(a, self.certs[s][player - 1], tol)
        self.certs[s][player - 1] = (x, y)
        return v, x


def _maximin_batch(mats: np.ndarray):
    """Solve a batch of matrix-game maximin problems as one block LP.

    `mats` is (K, M, M); returns (values, x (K, M), y (K, M)) where x is
    the row player's optimal mixture and y the adversary's certificate.
    One HiGHS call per side amortizes the per-LP overhead across states.
    """
    k, m, _ = mats.shape

    def solve_side(blocks):
        nv = k * (m + 1)
        rows, cols, vals = [], [], []
        senses = []
        b = []
        r = 0
        for t in range(k):
            base = t * (m + 1)
            for j in range(m):
                col_payoff = blocks[t][:, j]
                rows.extend([r] * (m + 1))
                cols.extend(range(base, base + m + 1))
                vals.extend(list(col_payoff) + [-1.0])
                senses.append(GE_SENSE)
                b.append(0.0)
                r += 1
            rows.extend([r] * m)
            cols.extend(range(base, base + m))
            vals.extend([1.0] * m)
            senses.append(EQ_SENSE)
            b.append(1.0)
            r += 1
        a = sp.csr_matrix((vals, (rows, cols)), shape=(r, nv))
        bound = np.abs(blocks).max(axis=(1, 2)) + 1.0
        lo = np.zeros(nv)
        hi = np.ones(nv)
        vcols = np.arange(k) * (m + 1) + m
        lo[vcols] = -np.repeat(bound, 1)
        hi[vcols] = np.repeat(bound, 1)
        obj = np.zeros(nv)
        obj[vcols] = 1.0
        res = solve_lp(LinearProgram(obj, a, np.asarray(senses), np.asarray(b), lo, hi),
                       method="highs")
        assert res.ok, f"batched maximin LP failed: {res.status}"
        sol = res.x.reshape(k, m + 1)
        strat = np.clip(sol[:, :m], 0.0, None)
        strat /= strat.sum(axis=1, keepdims=True)
        return sol[:, m], strat

    _, x = solve_side(mats)
    _, y = solve_side(-np.transpose(mats, (0, 2, 1)))
    lower = np.einsum("km,kmj->kj", x, mats).min(axis=1)
    return lower, x, y


class _MaximinBank:
    """Vectorized maximin backups over all states for one (player, cube).

    Three passes per sweep: a vectorized pure-saddle check, a vectorized
    certificate pinch check against stored optimal strategy pairs, and a
    single batched LP for whatever remains.
    """

    def __init__(self, n, m):
        self.x = np.zeros((n, m))
        self.y = np.zeros((n, m))
        self.has = np.zeros(n, dtype=bool)

    def values(self, cube: np.ndarray, tol: float = 1e-11) -> np.ndarray:
        n, m, _ = cube.shape
        scale = np.maximum(1.0, np.abs(cube).max(axis=(1, 2)))
        row_min = cube.min(axis=2)
        col_max = cube.max(axis=1)
        lower_pure = row_min.max(axis=1)
        upper_pure = col_max.min(axis=1)
        saddle = upper_pure - lower_pure <= tol * scale
        v = np.where(saddle, lower_pure, 0.0)
        if saddle.any():
            idx = np.flatnonzero(saddle)
            self.x[idx] = 0.0
            self.y[idx] = 0.0
            self.x[idx, row_min[idx].argmax(axis=1)] = 1.0
            self.y[idx, col_max[idx].argmin(axis=1)] = 1.0
            self.has[idx] = True
        pend = ~saddle
        check = pend & self.has
        if check.any():
            idx = np.flatnonzero(check)
            xq = np.einsum("km,kmj->kj", self.x[idx], cube[idx])
            qy = np.einsum("kmj,kj->km", cube[idx], self.y[idx])
            lower = xq.min(axis=1)
            upper = qy.max(axis=1)
            good = upper - lower <= tol * scale[idx]
            v[idx[good]] = lower[good]
            pend[idx[good]] = False
        if pend.any():
            idx = np.flatnonzero(pend)
            vals, x, y = _maximin_batch(cube[idx])
            v[idx] = vals
            self.x[idx] = x
            self.y[idx] = y
            self.has[idx] = True
        return v

    def strategies(self, cube: np.ndarray, tol: float = 1e-11) -> np.ndarray:
        self.values(cube, tol)
        return self.x.copy()


# ---------------------------------------------------------------------------
# stage solution cache for the sampled phase
# ---------------------------------------------------------------------------


class _StageCache:
    """Lazily solved per-state stage solutions with dirty tracking."""

    def __init__(self, concept, q1, q2, sink):
        self.concept = concept
        self.q1 = q1
        self.q2 = q2
        self.sink = sink
        n = q1.shape[0]
        self.dirty = np.ones(n, dtype=bool)
        self.values = np.zeros((n, 2))
        self.cum = [None] * n
        self.maximin = _MaximinCache(n)

    def _solve(self, s):
        q1s, q2s = self.q1[s], self.q2[s]
        m = q1s.shape[0]
        concept = self.concept
        if s == self.sink:
            v1 = v2 = 0.0
            joint = np.full(m * m, 1.0 / (m * m))
        elif concept == "uCS":
            idx = int(np.argmax((q1s + q2s).ravel()))
            a1, a2 = divmod(idx, m)
            v1, v2 = float(q1s[a1, a2]), float(q2s[a1, a2])
            joint = np.zeros(m * m)
            joint[idx] = 1.0
        elif concept == "cooE":
            # friend values; play the sum-maximizing pair while learning
            v1, v2 = float(q1s.max()), float(q2s.max())
            joint = np.zeros(m * m)
            joint[int(np.argmax((q1s + q2s).ravel()))] = 1.0
        elif concept in ("advE", "minimax"):
            v1, x = self.maximin.value(s, 1, q1s)
            v2, y = self.maximin.value(s, 2, q2s.T)
            joint = np.outer(x, y).ravel()
        else:
            sol = solve_une(StageGame(q1s, q2s)) if concept == "uNE" \
                else solve_uce(StageGame(q1s, q2s))
            v1, v2 = sol.values
            joint = sol.joint.ravel()
        self.values[s] = (v1, v2)
        self.cum[s] = np.cumsum(joint)
        self.dirty[s] = False

    def backup(self, s):
        if self.dirty[s]:
            self._solve(s)
        return self.values[s]

    def sample_pair(self, s, m, rng):
        if self.dirty[s]:
            self._solve(s)
        idx = int(np.searchsorted(self.cum[s], rng.random()))
        idx = min(idx, m * m - 1)
        return divmod(idx, m)

    def invalidate(self, s):
        self.dirty[s] = True


# ---------------------------------------------------------------------------
# backups over all states (refinement sweeps)
# ---------------------------------------------------------------------------


class _RefineCaches:
    def __init__(self, n, m):
        self.bank1 = _MaximinBank(n, m)
        self.bank2 = _MaximinBank(n, m)


def _backup_all(concept, q1, q2, caches, sink):
    n, m, _ = q1.shape
    if concept == "uCS":
        total = (q1 + q2).reshape(n, -1)
        idx = np.argmax(total, axis=1)
        v1 = np.take_along_axis(q1.reshape(n, -1), idx[:, None], axis=1).ravel()
        v2 = np.take_along_axis(q2.reshape(n, -1), idx[:, None], axis=1).ravel()
    elif concept == "cooE":
        v1 = q1.reshape(n, -1).max(axis=1)
        v2 = q2.reshape(n, -1).max(axis=1)
    elif concept in ("advE", "minimax"):
        v1 = caches.bank1.values(q1)
        v2 = caches.bank2.values(np.ascontiguousarray(q2.transpose(0, 2, 1)))
    else:
        v1 = np.zeros(n)
        v2 = np.zeros(n)
        for s in range(n):
            if s == sink:
                continue
            sol = solve_une(StageGame(q1[s], q2[s])) if concept == "uNE" \
                else solve_uce(StageGame(q1[s], q2[s]))
            v1[s], v2[s] = sol.values
    v1 = v1.copy()
    v2 = v2.copy()
    v1[sink] = 0.0
    v2[sink] = 0.0
    return v1, v2


def refine_q(env, r1_flat, r2_flat, q1_flat, q2_flat, concept, sweeps, tol,
             caches=None) -> tuple[np.ndarray, np.ndarray, int]:
    """Synchronous exact backups on flat Q vectors until max |dQ| < tol."""
    n, m = env.n_states, env.n_actions
    p = env.game.transitions
    gamma = env.game.discount
    sink = env.sink
    caches = caches or _RefineCaches(n, m)
    done = 0
    for sweep in range(sweeps):
        v1, v2 = _backup_all(concept, _cube_view(q1_flat, n, m),
                             _cube_view(q2_flat, n, m), caches, sink)
        new1 = (1.0 - gamma) * r1_flat + gamma * (p @ v1)
        new2 = (1.0 - gamma) * r2_flat + gamma * (p @ v2)
        delta = max(np.abs(new1 - q1_flat).max(), np.abs(new2 - q2_flat).max())
        q1_flat, q2_flat = new1, new2
        done = sweep + 1
        if delta < tol:
            break
    return q1_flat, q2_flat, done


def run_multi_q(env, r1: RewardVector, r2: RewardVector,
                cfg: MultiQConfig) -> tuple[QTables, BiPolicy]:
    """Learn Q tables for the configured concept and extract the greedy
    equilibrium bi-policy (joint kind for uCE, independent otherwise)."""
    n, m = env.n_states, env.n_actions
    cube1 = reward_cube(r1)
    cube2 = reward_cube(r2)
    gamma = env.game.discount
    rng = np.random.default_rng(cfg.seed)
    q1_flat = np.zeros(n * m * m)
    q2_flat = np.zeros(n * m * m)
    q1 = _cube_view(q1_flat, n, m)
    q2 = _cube_view(q2_flat, n, m)
    cache = _StageCache(cfg.concept, q1, q2, env.sink)
    visits = np.zeros((n, m, m), dtype=np.int64)
    diagnostics = []
    window_delta = 0.0
    s = env.sample_initial(rng)
    for t in range(cfg.iterations):
        if rng.random() < cfg.epsilon:
            a1, a2 = divmod(int(rng.integers(m * m)), m)
        else:
            a1, a2 = cache.sample_pair(s, m, rng)
        s_next, _, terminal = env.step(s, a1, a2, rng)
        if terminal:
            v1 = v2 = 0.0
        else:
            v1, v2 = cache.backup(s_next)
        alpha = cfg.alpha0 / (1.0 + visits[s, a1, a2] / cfg.alpha_decay)
        visits[s, a1, a2] += 1
        t1 = (1.0 - gamma) * cube1[s, a1, a2] + gamma * v1
        t2 = (1.0 - gamma) * cube2[s, a1, a2] + gamma * v2
        d1 = alpha * (t1 - q1[s, a1, a2])
        d2 = alpha * (t2 - q2[s, a1, a2])
        q1[s, a1, a2] += d1
        q2[s, a1, a2] += d2
        cache.invalidate(s)
        window_delta = max(window_delta, abs(d1), abs(d2))
        if (t + 1) % cfg.diagnostics_every == 0:
            diagnostics.append((t + 1, window_delta))
            window_delta = 0.0
        s = env.sample_initial(rng) if terminal else s_next
    if cfg.refine_sweeps > 0:
        q1_flat, q2_flat, _ = refine_q(env, r1.values, r2.values, q1_flat, q2_flat,
                                       cfg.concept, cfg.refine_sweeps, cfg.refine_tol)
        q1 = _cube_view(q1_flat, n, m)
        q2 = _cube_view(q2_flat, n, m)
    if cfg.diagnostics_path:
        with open(cfg.diagnostics_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "max_abs_dq"])
            writer.writerows(diagnostics)
    tables = QTables(q1, q2)
    return tables, policy_from_q(tables, cfg.concept)


def policy_from_q(q: QTables, concept: str) -> BiPolicy:
    """Per-state stage solution of the learned game.

    Joint kind for uCE, independent otherwise.  cooE non-existence is
    surfaced with the offending state list.
    """
    n, m, _ = q.q1.shape
    if concept == "uCE":
        rows = np.zeros((n, m * m))
        for s in range(n):
            rows[s] = solve_uce(StageGame(q.q1[s], q.q2[s])).joint.ravel()
        return BiPolicy.from_joint(rows)
    pi1 = np.zeros((n, m))
    pi2 = np.zeros((n, m))
    missing = []
    for s in range(n):
        sol = solve_stage(concept, StageGame(q.q1[s], q.q2[s]))
        if not sol.exists:
            missing.append(s)
            continue
        x, y = sol.strategies
        pi1[s] = x
        pi2[s] = y
    if missing:
        raise EquilibriumExtractionError(concept, missing)
    return BiPolicy.independent(pi1, pi2)


def exact_config(concept: str, sweeps: int = 600, tol: float = 1e-13) -> MultiQConfig:
    """Pure exact-backup solve (no sampling)."""
    return MultiQConfig(concept=concept, iterations=0, refine_sweeps=sweeps,
                        refine_tol=tol)


# ---------------------------------------------------------------------------
# single-player solvers built on the same machinery
# ---------------------------------------------------------------------------


def foe_policy(env, r_flat: np.ndarray, player: int, sweeps: int = 600,
               tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Safety-level (maximin) policy for one player from its own reward.

    Exact value iteration with the opponent treated adversarially; only
    the given player's Q table is needed.  Returns (per-state strategy
    matrix (N, M), flat Q vector)."""
    n, m = env.n_states, env.n_actions
    p = env.game.transitions
    gamma = env.game.discount
    q_flat = np.zeros(n * m * m)
    bank = _MaximinBank(n, m)

    def own_view(flat):
        cube = _cube_view(flat, n, m)
        return cube if player == 1 else np.ascontiguousarray(cube.transpose(0, 2, 1))

    for _ in range(sweeps):
        v = bank.values(own_view(q_flat))
        v = v.copy()
        v[env.sink] = 0.0
        new = (1.0 - gamma) * r_flat + gamma * (p @ v)
        delta = np.abs(new - q_flat).max()
        q_flat = new
        if delta < tol:
            break
    strategy = bank.strategies(own_view(q_flat))
    return strategy, q_flat


def best_response(env, opponent_marginal: np.ndarray, r_own: RewardVector,
                  player: int, sweeps: int = 2000, tol: float = 1e-13) -> np.ndarray:
    """Deterministic best-response policy to a fixed opponent marginal.

    Folds the opponent into the dynamics and value-iterates the induced
    single-agent problem; ties break to the lowest action index."""
    n, m = env.n_states, env.n_actions
    gamma = env.game.discount
    cube = reward_cube(r_own)
    if player == 1:
        r_red = np.einsum("sab,sb->sa", cube, opponent_marginal)
    else:
        r_red = np.einsum("sab,sa->sb", cube, opponent_marginal)
    p_dense = env.game.transitions_dense.reshape(m, m, n, n)
    if player == 1:
        p_red = np.einsum("absn,sb->san", p_dense, opponent_marginal)
    else:
        p_red = np.einsum("absn,sa->sbn", p_dense, opponent_marginal)
    v = np.zeros(n)
    for _ in range(sweeps):
        q = r_red + gamma * (p_red @ v)
        new_v = q.max(axis=1)
        new_v[env.sink] = 0.0
        if np.abs(new_v - v).max() < tol:
            v = new_v
            break
        v = new_v
    q = r_red + gamma * (p_red @ v)
    policy = np.zeros((n, m))
    policy[np.arange(n), q.argmax(axis=1)] = 1.0
    return policy
