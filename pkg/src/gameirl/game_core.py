"""Stochastic-game data model and the policy-induced linear operators.

Canonical flat layout, fixed project-wide ("pair_major_v1"): the reward
entry for (state s, actions a1, a2) lives at index

    (a1 * M + a2) * N + s

i.e. grouped by action pair in row-major pair order, state-minor within
each block.  Every matrix here (B, D, H selectors, the C/F operators of
the single-agent reduction) indexes its N*M^2 axis that way.

The operators:

    B_pi   (N x NM^2)   expected-reward map: (B_pi r)(s) = E_pi[R(s, a)]
    G_pi   (N x N)      state transition matrix under the bi-policy
    D_pi   (NM^2 sq.)   I + gamma P (I - gamma G_pi)^'-1' B_pi, the flat
                        Q-vector map: Q = D_pi r
    H(s,a) (M x NM^2)   selector returning a player's reward row/column
                        at (s, a)

B_pi is defined for arbitrary per-state joint distributions; for product
policies it reduces to the marginal-product construction.  Linear systems
go through LU with partial pivoting, never explicit inverses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

REWARD_LAYOUT = "pair_major_v1"

# Materialize D_pi / dense B only below this flat dimension.
DENSE_OPERATOR_LIMIT = 6000


class ValidationError(ValueError):
    """Stochasticity / invariant violations in game or policy data."""


class StructureError(ValueError):
    """Dimension or layout mismatches between objects."""


def flat_index(s, a1, a2, n_states: int, n_actions: int):
    """Canonical pair-major, state-minor flat index."""
    return (a1 * n_actions + a2) * n_states + s


@dataclass(frozen=True)
class StochasticGame:
    """Two-player game tuple {S, A_i, P, gamma}; rewards live separately.

    `transitions` is the (N*M^2) x N row-stochastic matrix P in canonical
    layout (row = flat (s, a1, a2) index, column = next state).
    """

    n_states: int
    n_actions: int
    transitions: sp.csr_matrix
    discount: float

    def __post_init__(self):
        n, m = self.n_states, self.n_actions
        if n < 1 or m < 1:
            raise ValidationError("state and action counts must be positive")
        if not (0.0 <= self.discount < 1.0):
            raise ValidationError(f"discount must lie in [0, 1), got {self.discount}")
        p = self.transitions
        if not sp.issparse(p):
            p = sp.csr_matrix(np.asarray(p, dtype=float))
            object.__setattr__(self, "transitions", p)
        if p.shape != (n * m * m, n):
            raise StructureError(
                f"transition matrix must be {(n * m * m, n)}, got {p.shape}")
        if p.nnz and p.data.min() < -1e-15:
            raise ValidationError("negative transition probability")
        rows = np.asarray(p.sum(axis=1)).ravel()
        if np.abs(rows - 1.0).max() > 1e-12:
            raise ValidationError("transition rows must sum to 1 within 1e-12")

    @cached_property
    def transitions_dense(self) -> np.ndarray:
        return self.transitions.toarray()

    @property
    def flat_dim(self) -> int:
        return self.n_states * self.n_actions ** 2


@dataclass(frozen=True)
class RewardVector:
    """Flat reward r_i of length N*M^2 in the canonical layout."""

    values: np.ndarray
    n_states: int
    n_actions: int
    layout: str = REWARD_LAYOUT

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.shape != (self.n_states * self.n_actions ** 2,):
            raise StructureError("reward length must equal N*M^2")
        if self.layout != REWARD_LAYOUT:
            raise StructureError(f"unsupported reward layout {self.layout!r}")

    def state_matrix(self, s: int) -> np.ndarray:
        """The M x M payoff matrix R(s); rows are player 1's actions."""
        n, m = self.n_states, self.n_actions
        return self.values[s::n].reshape(m, m)

    def as_state_matrices(self) -> np.ndarray:
        """(N, M, M) view-copy of all per-state payoff matrices."""
        n, m = self.n_states, self.n_actions
        return self.values.reshape(m, m, n).transpose(2, 0, 1)

    @classmethod
    def from_state_matrices(cls, mats: np.ndarray) -> "RewardVector":
        mats = np.asarray(mats, dtype=float)
        n, m, m2 = mats.shape
        if m != m2:
            raise StructureError("per-state payoff matrices must be square")
        return cls(mats.transpose(1, 2, 0).reshape(-1), n, m)

    @classmethod
    def zeros(cls, game: StochasticGame) -> "RewardVector":
        return cls(np.zeros(game.flat_dim), game.n_states, game.n_actions)


@dataclass(frozen=True)
class BiPolicy:
    """Per-state joint distribution over action pairs.

    kind "independent" keeps the two per-state marginals and stores their
    exact product as the joint; kind "joint" stores an arbitrary per-state
    correlated distribution (rows indexed s, columns pair-major a1*M+a2).
    """

    kind: str
    joint: np.ndarray
    pi1: np.ndarray | None = None
    pi2: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "joint", np.asarray(self.joint, dtype=float))
        if self.kind not in ("independent", "joint"):
            raise ValidationError(f"unknown policy kind {self.kind!r}")
        if self.joint.ndim != 2:
            raise StructureError("joint policy must be 2-d (states x pairs)")
        if self.joint.min(initial=0.0) < -1e-15:
            raise ValidationError("negative policy probability")
        if np.abs(self.joint.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValidationError("per-state policy rows must sum to 1 within 1e-12")
        if self.kind == "independent":
            if self.pi1 is None or self.pi2 is None:
                raise StructureError("independent policy needs both marginals")
            prod = (self.pi1[:, :, None] * self.pi2[:, None, :]).reshape(self.joint.shape)
            if not np.array_equal(prod, self.joint):
                raise ValidationError("joint of an independent policy must be the exact marginal product")

    @classmethod
    def independent(cls, pi1, pi2) -> "BiPolicy":
        pi1 = np.asarray(pi1, dtype=float)
        pi2 = np.asarray(pi2, dtype=float)
        if pi1.shape != pi2.shape:
            raise StructureError("marginals must share shape")
        for p in (pi1, pi2):
            if np.abs(p.sum(axis=1) - 1.0).max() > 1e-12 or p.min() < -1e-15:
                raise ValidationError("marginals must be row-stochastic")
        joint = (pi1[:, :, None] * pi2[:, None, :]).reshape(pi1.shape[0], -1)
        return cls("independent", joint, pi1, pi2)

    @classmethod
    def from_joint(cls, joint) -> "BiPolicy":
        return cls("joint", np.asarray(joint, dtype=float))

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "BiPolicy":
        m = np.full((n_states, n_actions), 1.0 / n_actions)
        return cls.independent(m, m.copy())

    @classmethod
    def deterministic(cls, actions1, actions2, n_actions: int) -> "BiPolicy":
        a1 = np.asarray(actions1, dtype=int)
        a2 = np.asarray(actions2, dtype=int)
        p1 = np.zeros((a1.shape[0], n_actions))
        p2 = np.zeros((a2.shape[0], n_actions))
        p1[np.arange(a1.shape[0]), a1] = 1.0
        p2[np.arange(a2.shape[0]), a2] = 1.0
        return cls.independent(p1, p2)

    @property
    def n_states(self) -> int:
        return self.joint.shape[0]

    @property
    def n_actions(self) -> int:
        return int(round(np.sqrt(self.joint.shape[1])))

    @property
    def is_product(self) -> bool:
        return self.kind == "independent"

    def flat(self) -> np.ndarray:
        """Length-N*M^2 column vector of the joint in canonical layout."""
        return self.joint.T.reshape(-1).copy()

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "independent":
            return self.pi1, self.pi2
        n, m = self.n_states, self.n_actions
        cube = self.joint.reshape(n, m, m)
        return cube.sum(axis=2), cube.sum(axis=1)


def _policy_b_sparse(joint: np.ndarray) -> sp.csr_matrix:
    """B matrix rows from a per-state joint: row s has the state-s joint
    probabilities scattered into the pair-major columns."""
    n, mm = joint.shape
    cols = np.arange(mm)[None, :] * n + np.arange(n)[:, None]
    rows = np.repeat(np.arange(n), mm)
    return sp.csr_matrix((joint.ravel(), (rows, cols.ravel())), shape=(n, n * mm))


@dataclass
class PolicyOperators:
    """All policy-induced operators for one (game, policy) pair.

    Large matrices are kept sparse; D and dense B are materialized lazily
    and only below DENSE_OPERATOR_LIMIT.  `apply_d` / `propagate` provide
    D products without materializing it.
    """

    game: StochasticGame
    policy: BiPolicy
    b_sparse: sp.csr_matrix = field(repr=False, default=None)
    g: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        n, m = self.game.n_states, self.game.n_actions
        if self.policy.joint.shape != (n, m * m):
            raise StructureError("policy dimensions do not match the game")
        if self.b_sparse is None:
            self.b_sparse = _policy_b_sparse(self.policy.joint)
        if self.g is None:
            self.g = np.asarray((self.b_sparse @ self.game.transitions).todense())
        eye = np.eye(n)
        self._lu = sla.lu_factor(eye - self.game.discount * self.g)

    @property
    def n_states(self):
        return self.game.n_states

    @property
    def n_actions(self):
        return self.game.n_actions

    @cached_property
    def b(self) -> np.ndarray:
        return self.b_sparse.toarray()

    def solve_ig(self, x: np.ndarray) -> np.ndarray:
        """(I - gamma G)^-1 x via the LU factor."""
        return sla.lu_solve(self._lu, x)

    def solve_ig_t(self, x: np.ndarray) -> np.ndarray:
        """(I - gamma G)^-T x."""
        return sla.lu_solve(self._lu, x, trans=1)

    @cached_property
    def d(self) -> np.ndarray:
        """Dense D = I + gamma P (I - gamma G)^-1 B; desk scale only."""
        nm2 = self.game.flat_dim
        if nm2 > DENSE_OPERATOR_LIMIT:
            raise StructureError(
                f"refusing to materialize a {nm2} x {nm2} dense D; use apply_d/propagate")
        inner = self.solve_ig(self.b)
        return np.eye(nm2) + self.game.discount * (self.game.transitions @ inner)

    def apply_d(self, x: np.ndarray) -> np.ndarray:
        """D x without materializing D."""
        v = self.solve_ig(self.b_sparse @ x)
        return x + self.game.discount * (self.game.transitions @ v)

    def propagate(self, pre_rows) -> np.ndarray:
        """Dense (k x NM^2) product `pre_rows @ D` for sparse/dense pre_rows."""
        pre = sp.csr_matrix(pre_rows)
        delta_p = np.asarray((pre @ self.game.transitions).todense())
        x = self.solve_ig_t(delta_p.T).T  # (pre P)(I - gamma G)^-1
        out = pre.toarray()
        out += self.game.discount * (x @ self.b)
        return out

    def propagate_apply(self, pre_rows, x: np.ndarray) -> np.ndarray:
        """`pre_rows @ D @ x` with no NM^2-wide dense intermediate."""
        pre = pre_rows
        direct = pre @ x
        v = self.solve_ig(self.b_sparse @ x)
        return direct + self.game.discount * ((pre @ self.game.transitions) @ v)

    def b_given_action(self, player: int, action: int) -> sp.csr_matrix:
        """B for the bi-policy where `player` plays `action` everywhere and
        the opponent keeps its marginal.  Independent policies only."""
        if not self.policy.is_product:
            raise ValidationError("pinned-action B requires an independent policy")
        pi1, pi2 = self.policy.pi1, self.policy.pi2
        n, m = self.n_states, self.n_actions
        if player == 1:
            p1 = np.zeros((n, m))
            p1[:, action] = 1.0
            joint = (p1[:, :, None] * pi2[:, None, :]).reshape(n, -1)
        elif player == 2:
            p2 = np.zeros((n, m))
            p2[:, action] = 1.0
            joint = (pi1[:, :, None] * p2[:, None, :]).reshape(n, -1)
        else:
            raise StructureError("player must be 1 or 2")
        return _policy_b_sparse(joint)

    def b_pure(self, a1: int, a2: int) -> sp.csr_matrix:
        """B for the pure bi-strategy (a1, a2) played in every state."""
        n, m = self.n_states, self.n_actions
        pair = a1 * m + a2
        cols = pair * n + np.arange(n)
        return sp.csr_matrix((np.ones(n), (np.arange(n), cols)), shape=(n, n * m * m))

    def h_cols(self, s: int, action: int, player: int) -> np.ndarray:
        """Column indices of the H(s, a, player) selector rows.

        For player 1 row j selects R(s, action, j); for player 2 row j
        selects R(s, j, action)."""
        n, m = self.n_states, self.n_actions
        j = np.arange(m)
        if player == 1:
            return (action * m + j) * n + s
        if player == 2:
            return (j * m + action) * n + s
        raise StructureError("player must be 1 or 2")

    def h_matrix(self, s: int, action: int, player: int) -> np.ndarray:
        cols = self.h_cols(s, action, player)
        h = np.zeros((self.n_actions, self.game.flat_dim))
        h[np.arange(self.n_actions), cols] = 1.0
        return h


def build_operators(game: StochasticGame, policy: BiPolicy) -> PolicyOperators:
    """Validate shapes and assemble the operator bundle."""
    return PolicyOperators(game, policy)


def expected_reward(ops: PolicyOperators, r: RewardVector) -> np.ndarray:
    """Per-state expected reward B_pi r."""
    _check_reward(ops.game, r)
    return ops.b_sparse @ r.values


def value_function(game: StochasticGame, policy: BiPolicy, r: RewardVector,
                   ops: PolicyOperators | None = None) -> np.ndarray:
    """V = (I - gamma G)^-1 B r, solved as a linear system."""
    ops = ops or build_operators(game, policy)
    _check_reward(game, r)
    return ops.solve_ig(ops.b_sparse @ r.values)


def q_vector(game: StochasticGame, policy: BiPolicy, r: RewardVector,
             ops: PolicyOperators | None = None) -> np.ndarray:
    """Flat Q = D r = r + gamma P V."""
    ops = ops or build_operators(game, policy)
    _check_reward(game, r)
    v = ops.solve_ig(ops.b_sparse @ r.values)
    return r.values + game.discount * (game.transitions @ v)


def total_game_value(game: StochasticGame, policy: BiPolicy,
                     r1: RewardVector, r2: RewardVector,
                     ops: PolicyOperators | None = None) -> np.ndarray:
    """V_1 + V_2 = (I - gamma G)^-1 B (r1 + r2)."""
    ops = ops or build_operators(game, policy)
    _check_reward(game, r1)
    _check_reward(game, r2)
    return ops.solve_ig(ops.b_sparse @ (r1.values + r2.values))


def _check_reward(game: StochasticGame, r: RewardVector):
    if r.values.shape[0] != game.flat_dim:
        raise StructureError("reward dimension does not match the game")


# ---------------------------------------------------------------------------
# single-agent reduction operators (one player folded into the environment)
# ---------------------------------------------------------------------------


@dataclass
class IRLOperators:
    """C / F operators of the one-player reduction for a chosen player.

    The reduced reward has length N*M indexed action-major, state-minor:
    entry a*N + s holds R(s, a) for that player's own action a.
    """

    ops: PolicyOperators
    player: int

    def __post_init__(self):
        if self.player not in (1, 2):
            raise StructureError("player must be 1 or 2")
        if not self.ops.policy.is_product:
            raise ValidationError("single-agent reduction requires an independent policy")

    @property
    def marginal(self) -> np.ndarray:
        return self.ops.policy.pi1 if self.player == 1 else self.ops.policy.pi2

    @cached_property
    def c_policy(self) -> sp.csr_matrix:
        """Row s carries the player's marginal, one entry per action block."""
        n, m = self.ops.n_states, self.ops.n_actions
        cols = np.arange(m)[None, :] * n + np.arange(n)[:, None]
        rows = np.repeat(np.arange(n), m)
        return sp.csr_matrix((self.marginal.ravel(), (rows, cols.ravel())), shape=(n, n * m))

    def c_action(self, action: int) -> sp.csr_matrix:
        n, m = self.ops.n_states, self.ops.n_actions
        cols = action * n + np.arange(n)
        return sp.csr_matrix((np.ones(n), (np.arange(n), cols)), shape=(n, n * m))

    def g_pinned(self, action: int) -> np.ndarray:
        """State transition matrix when this player always plays `action`."""
        b = self.ops.b_given_action(self.player, action)
        return np.asarray((b @ self.ops.game.transitions).todense())

    def f(self, action: int) -> np.ndarray:
        """[gamma (G_pi - G_pinned)(I - gamma G_pi)^-1 + I] C_policy, dense."""
        gamma = self.ops.game.discount
        diff = self.ops.g - self.g_pinned(action)
        x = self.ops.solve_ig_t(diff.T).T
        return gamma * x @ self.c_policy.toarray() + self.c_policy.toarray()


def build_irl_operators(game: StochasticGame, policy: BiPolicy, player: int,
                        ops: PolicyOperators | None = None) -> IRLOperators:
    return IRLOperators(ops or build_operators(game, policy), player)


def lift_own_action_reward(r_own: np.ndarray, player: int, n_states: int,
                           n_actions: int) -> np.ndarray:
    """Broadcast an own-action reward (length N*M) to the full joint layout
    by copying across the opponent's action."""
    n, m = n_states, n_actions
    out = np.zeros(n * m * m)
    for a_own in range(m):
        block = r_own[a_own * n:(a_own + 1) * n]
        for a_other in range(m):
            a1, a2 = (a_own, a_other) if player == 1 else (a_other, a_own)
            out[(a1 * m + a2) * n:(a1 * m + a2) * n + n] = block
    return out


# ---------------------------------------------------------------------------
# serialization (structured text documents)
# ---------------------------------------------------------------------------

_SPARSE_JSON_LIMIT = 2_000_000  # dense row dump above this many entries is wasteful


def game_to_json(game: StochasticGame) -> str:
    p = game.transitions
    doc = {
        "schema": "stochastic_game_v1",
        "n_states": game.n_states,
        "n_actions": game.n_actions,
        "gamma": game.discount,
    }
    if p.shape[0] * p.shape[1] <= _SPARSE_JSON_LIMIT:
        doc["transitions"] = p.toarray().tolist()
    else:
        coo = p.tocoo()
        doc["transitions_sparse"] = {
            "shape": list(p.shape),
            "rows": coo.row.tolist(),
            "cols": coo.col.tolist(),
            "vals": coo.data.tolist(),
        }
    return json.dumps(doc)


def game_from_json(text: str) -> StochasticGame:
    doc = json.loads(text)
    if doc.get("schema") != "stochastic_game_v1":
        raise StructureError("not a stochastic_game_v1 document")
    if "transitions" in doc:
        p = np.asarray(doc["transitions"], dtype=float)
    else:
        s = doc["transitions_sparse"]
        p = sp.csr_matrix((s["vals"], (s["rows"], s["cols"])), shape=tuple(s["shape"]))
    return StochasticGame(doc["n_states"], doc["n_actions"], sp.csr_matrix(p), doc["gamma"])


def policy_to_json(policy: BiPolicy) -> str:
    doc = {"schema": "bipolicy_v1", "kind": policy.kind,
           "n_states": policy.n_states, "n_actions": policy.n_actions}
    if policy.kind == "independent":
        doc["pi1"] = policy.pi1.tolist()
        doc["pi2"] = policy.pi2.tolist()
    else:
        doc["joint"] = policy.joint.tolist()
    return json.dumps(doc)


def policy_from_json(text: str) -> BiPolicy:
    doc = json.loads(text)
    if doc.get("schema") != "bipolicy_v1":
        raise StructureError("not a bipolicy_v1 document")
    if doc["kind"] == "independent":
        return BiPolicy.independent(np.asarray(doc["pi1"]), np.asarray(doc["pi2"]))
    return BiPolicy.from_joint(np.asarray(doc["joint"]))


def reward_to_json(r: RewardVector) -> str:
    return json.dumps({
        "schema": "reward_v1",
        "layout": r.layout,
        "n_states": r.n_states,
        "n_actions": r.n_actions,
        "values": r.values.tolist(),
    })


def reward_from_json(text: str) -> RewardVector:
    doc = json.loads(text)
    if doc.get("schema") != "reward_v1":
        raise StructureError("not a reward_v1 document")
    return RewardVector(np.asarray(doc["values"]), doc["n_states"], doc["n_actions"],
                        layout=doc.get("layout", REWARD_LAYOUT))
