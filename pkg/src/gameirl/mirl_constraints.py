"""Linear constraint systems that characterize each equilibrium assumption.

Every system is homogeneous (rhs 0) and acts on the stacked variable
vector (r1, r2), each half in the canonical pair-major layout.  All rows
share one algebraic shape: a sparse "pre" row (differences of B matrices,
or joint-policy-weighted selector differences) multiplied through the
flat Q-vector operator D.  The five variants:

    uCS    (B_pi - B_a)      D (r1 + r2) >= 0   for every pure pair a
    NE     (B_pi|ai - B_pi)  D r_i       <= 0   own pinned deviations
    advE   NE rows, plus the cross rows  (B_pi|a1 - B_pi) D r2 >= 0 and
           (B_pi|a2 - B_pi) D r1 >= 0
    cooE   NE rows, plus (B_pi - B_a) D r_i >= 0 for both players
    CE     pi' H(s,ai)' [H(s,ai) - H(s,dev)] D r_i >= 0 over all
           (player, state, ai, dev)

Row order is canonical and documented per builder; zero rows (which occur
whenever the observed policy already plays the compared pure action) are
kept so row counts are exact, and filtered only at solver assembly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .convex_backend import GE, LE
from .game_core import (BiPolicy, PolicyOperators, StochasticGame,
                        ValidationError, build_operators)

VARIANTS = ("uCS", "advE", "cooE", "uCE", "uNE")


@dataclass
class ConstraintSet:
    """Dense homogeneous inequality system A x (sense) 0, tagged by variant."""

    matrix: np.ndarray
    rhs: np.ndarray
    senses: np.ndarray
    variant: str
    variable_layout: str
    row_labels: list[str] | None = None

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_vars(self) -> int:
        return self.matrix.shape[1]

    def violation(self, x: np.ndarray) -> float:
        """Max positive violation of the system at x."""
        vals = self.matrix @ x - self.rhs
        bad_ge = np.where(self.senses == GE, -vals, 0.0)
        bad_le = np.where(self.senses == LE, vals, 0.0)
        return float(max(bad_ge.max(initial=0.0), bad_le.max(initial=0.0), 0.0))

    def as_leq(self) -> tuple[np.ndarray, np.ndarray]:
        """(A, b) with every row in <= orientation."""
        flip = np.where(self.senses == GE, -1.0, 1.0)
        return self.matrix * flip[:, None] + 0.0, self.rhs * flip

    def nonzero_rows(self) -> np.ndarray:
        return np.abs(self.matrix).max(axis=1) > 0.0

    def dump(self, fh) -> None:
        """Plain-text row dump (sense, rhs, nonzero entries) for debugging."""
        close = isinstance(fh, str)
        if close:
            fh = open(fh, "w")
        fh.write(f"# variant={self.variant} rows={self.n_rows} vars={self.n_vars}\n")
        fh.write(f"# layout: {self.variable_layout}\n")
        for i in range(self.n_rows):
            sense = "<=" if self.senses[i] == LE else ">="
            label = self.row_labels[i] if self.row_labels else f"row{i}"
            nz = np.flatnonzero(self.matrix[i])
            entries = " ".join(f"{j}:{self.matrix[i, j]!r}" for j in nz)
            fh.write(f"{label} {sense} {self.rhs[i]!r} | {entries}\n")
        if close:
            fh.close()


# ---------------------------------------------------------------------------
# family construction: sparse pre-D rows per variant
# ---------------------------------------------------------------------------


def _require_product(policy: BiPolicy, variant: str):
    if not policy.is_product:
        raise ValidationError(
            f"{variant} constraints are defined over independent strategies; "
            "got a joint policy (marginalizing would change the hypothesis)")


def _pinned_family(ops: PolicyOperators, player: int):
    """Stacked (B_pi|a - B_pi) blocks for one player, action-major."""
    blocks = [ops.b_given_action(player, a) - ops.b_sparse
              for a in range(ops.n_actions)]
    return sp.vstack(blocks, format="csr")


def _pure_family(ops: PolicyOperators):
    """Stacked (B_pi - B_a) blocks over pure pairs, pair-major."""
    m = ops.n_actions
    blocks = [ops.b_sparse - ops.b_pure(a1, a2)
              for a1 in range(m) for a2 in range(m)]
    return sp.vstack(blocks, format="csr")


def _ce_family(ops: PolicyOperators, player: int):
    """Joint-weighted selector-difference rows, ordered (state, a, dev)."""
    n, m = ops.n_states, ops.n_actions
    joint = ops.policy.joint
    rows, cols, vals = [], [], []
    r = 0
    for s in range(n):
        for a in range(m):
            own = ops.h_cols(s, a, player)
            w = joint[s, a * m:(a + 1) * m] if player == 1 else joint[s, a::m]
            for dev in range(m):
                if dev == a:
                    continue
                other = ops.h_cols(s, dev, player)
                rows.extend([r] * (2 * m))
                cols.extend(own)
                vals.extend(w)
                cols.extend(other)
                vals.extend(-w)
                r += 1
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(r, n * m * m))
    return mat


def variant_families(variant: str, ops: PolicyOperators):
    """(label, pre_rows, target, sense) tuples; target in {r1, r2, sum}.

    Each family's effective rows are `pre_rows @ D`.
    """
    if variant == "uCS":
        return [("ucs", _pure_family(ops), "sum", GE)]
    if variant == "uNE":
        _require_product(ops.policy, variant)
        return [
            ("ne_p1", _pinned_family(ops, 1), "r1", LE),
            ("ne_p2", _pinned_family(ops, 2), "r2", LE),
        ]
    if variant == "advE":
        _require_product(ops.policy, variant)
        return [
            ("ne_p1", _pinned_family(ops, 1), "r1", LE),
            ("ne_p2", _pinned_family(ops, 2), "r2", LE),
            ("noharm_p1", _pinned_family(ops, 1), "r2", GE),
            ("noharm_p2", _pinned_family(ops, 2), "r1", GE),
        ]
    if variant == "cooE":
        _require_product(ops.policy, variant)
        return [
            ("ne_p1", _pinned_family(ops, 1), "r1", LE),
            ("ne_p2", _pinned_family(ops, 2), "r2", LE),
            ("coord_p1", _pure_family(ops), "r1", GE),
            ("coord_p2", _pure_family(ops), "r2", GE),
        ]
    if variant == "uCE":
        return [
            ("ce_p1", _ce_family(ops, 1), "r1", GE),
            ("ce_p2", _ce_family(ops, 2), "r2", GE),
        ]
    raise ValueError(f"unknown variant {variant!r}")


_STACK_LAYOUT = "r1:pair_major_v1 | r2:pair_major_v1"


def _assemble(variant: str, ops: PolicyOperators) -> ConstraintSet:
    d = ops.game.flat_dim
    blocks = []
    senses = []
    for _, pre, target, sense in variant_families(variant, ops):
        dense = ops.propagate(pre)
        k = dense.shape[0]
        block = np.zeros((k, 2 * d))
        if target in ("r1", "sum"):
            block[:, :d] = dense
        if target in ("r2", "sum"):
            block[:, d:] = dense
        blocks.append(block)
        senses.append(np.full(k, sense))
    matrix = np.vstack(blocks)
    senses = np.concatenate(senses)
    return ConstraintSet(matrix, np.zeros(matrix.shape[0]), senses, variant,
                         _STACK_LAYOUT)


def build_ucs_constraints(game: StochasticGame, policy: BiPolicy,
                          ops: PolicyOperators | None = None) -> ConstraintSet:
    """N*M^2 rows: for each pure pair (pair-major), the N state rows of
    (B_pi - B_a) D acting on r1 + r2, all >= 0."""
    return _assemble("uCS", ops or build_operators(game, policy))


def build_ne_constraints(game: StochasticGame, policy: BiPolicy,
                         ops: PolicyOperators | None = None) -> ConstraintSet:
    """2*N*M rows: own pinned-action deviations for both players, <= 0."""
    return _assemble("uNE", ops or build_operators(game, policy))


def build_adve_constraints(game: StochasticGame, policy: BiPolicy,
                           ops: PolicyOperators | None = None) -> ConstraintSet:
    """4*N*M rows: the NE rows plus the cross no-harm rows, >= 0."""
    return _assemble("advE", ops or build_operators(game, policy))


def build_cooe_constraints(game: StochasticGame, policy: BiPolicy,
                           ops: PolicyOperators | None = None) -> ConstraintSet:
    """2*N*M NE rows plus 2*N*M^2 coordination rows."""
    return _assemble("cooE", ops or build_operators(game, policy))


def build_ce_constraints(game: StochasticGame, policy: BiPolicy,
                         ops: PolicyOperators | None = None) -> ConstraintSet:
    """2*N*M*(M-1) rows over (player, state, action, deviation)."""
    return _assemble("uCE", ops or build_operators(game, policy))


_BUILDERS = {
    "uCS": build_ucs_constraints,
    "uNE": build_ne_constraints,
    "advE": build_adve_constraints,
    "cooE": build_cooe_constraints,
    "uCE": build_ce_constraints,
}


def build_constraints(variant: str, game: StochasticGame, policy: BiPolicy,
                      ops: PolicyOperators | None = None) -> ConstraintSet:
    try:
        builder = _BUILDERS[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}") from None
    return builder(game, policy, ops)


def max_violation(variant: str, game: StochasticGame, policy: BiPolicy,
                  r1: np.ndarray, r2: np.ndarray,
                  ops: PolicyOperators | None = None) -> float:
    """Constraint violation of (r1, r2) without materializing the system.

    Matrix-free: each family's rows are applied through the factored D
    product, so this scales to games where the dense system would not fit.
    """
    ops = ops or build_operators(game, policy)
    total = r1 + r2
    worst = 0.0
    for _, pre, target, sense in variant_families(variant, ops):
        vec = {"r1": r1, "r2": r2, "sum": total}[target]
        vals = ops.propagate_apply(pre, vec)
        worst = max(worst, float((-vals if sense == GE else vals).max(initial=0.0)))
    return worst


# ---------------------------------------------------------------------------
# canonical comparison helpers
# ---------------------------------------------------------------------------


def collapse_zero_sum(cs: ConstraintSet) -> ConstraintSet:
    """Substitute r2 = -r1: a system over (r1, r2) becomes one over r."""
    d = cs.n_vars // 2
    matrix = cs.matrix[:, :d] - cs.matrix[:, d:]
    return ConstraintSet(matrix, cs.rhs.copy(), cs.senses.copy(),
                         cs.variant + "|r2=-r1", "r:pair_major_v1")


def canonical_rows(cs: ConstraintSet) -> np.ndarray:
    """Sense-normalized (<=), lexicographically sorted, exact-duplicate-free
    row matrix; the comparison form for row-for-row system equality."""
    a, _ = cs.as_leq()
    a = a + 0.0  # normalize -0.0
    order = np.lexsort(a.T[::-1])
    a = a[order]
    keep = np.ones(a.shape[0], dtype=bool)
    for i in range(1, a.shape[0]):
        if np.array_equal(a[i], a[i - 1]):
            keep[i] = False
    return a[keep]


# ---------------------------------------------------------------------------
# baseline programs
# ---------------------------------------------------------------------------


def build_dmirl_program(game: StochasticGame, policy: BiPolicy, player: int,
                        lam: float, r_max: float = 1.0,
                        ops: PolicyOperators | None = None):
    """Decentralized margin-maximization LP for one player.

    Variables [r+, r-, t]: r = r+ - r- with 0 <= r+- <= r_max, one
    epigraph variable t_s per state for the inner min over pinned
    actions.  Maximizes sum(t) - lam * ||r||_1 subject to the player's NE
    feasibility rows.  Returns (LinearProgram, slices dict).
    """
    from .convex_backend import LinearProgram

    ops = ops or build_operators(game, policy)
    _require_product(ops.policy, "dmirl")
    n, d = ops.n_states, ops.game.flat_dim
    m = ops.n_actions
    margin = ops.propagate(_pinned_family(ops, player))  # (N*M, D): (B|a-B)D
    n_rows = margin.shape[0]
    # identically-zero rows (the pinned action is the one the policy already
    # plays) carry no deviation information; keeping them in the epigraph
    # min would pin every margin at zero and collapse the program to r = 0
    live = np.abs(margin).max(axis=1) > 0.0
    n_live = int(live.sum())
    nv = 2 * d + n
    obj = np.concatenate([-lam * np.ones(2 * d), np.ones(n)])
    a = np.zeros((n_rows + n_live, nv))
    senses = np.full(n_rows + n_live, LE)
    b = np.zeros(n_rows + n_live)
    # feasibility rows: (B|a - B) D r <= 0
    a[:n_rows, :d] = margin
    a[:n_rows, d:2 * d] = -margin
    # epigraph rows: t_s <= [(B - B|a) D r]_s  i.e.  t_s + margin_row r <= 0
    a[n_rows:, :d] = margin[live]
    a[n_rows:, d:2 * d] = -margin[live]
    t_state = np.tile(np.arange(n), m)[live]
    a[n_rows + np.arange(n_live), 2 * d + t_state] = 1.0
    lo = np.concatenate([np.zeros(2 * d), np.full(n, -np.inf)])
    hi = np.concatenate([np.full(2 * d, r_max), np.full(n, np.inf)])
    # states with no live deviation rows contribute a constant zero margin
    covered = np.zeros(n, dtype=bool)
    covered[t_state] = True
    hi[2 * d + np.flatnonzero(~covered)] = 0.0
    lp = LinearProgram(obj, a, senses, b, lo, hi)
    return lp, {"pos": slice(0, d), "neg": slice(d, 2 * d), "t": slice(2 * d, nv)}


def build_birl_constraints(game: StochasticGame, policy: BiPolicy, player: int,
                           ops: PolicyOperators | None = None) -> ConstraintSet:
    """(F_a - C_a) r >= 0 rows for the one-player reduction; the reward
    lives on (state, own action) with length N*M."""
    from .game_core import build_irl_operators

    ops = ops or build_operators(game, policy)
    irl = build_irl_operators(game, policy, player, ops)
    rows = []
    for a in range(ops.n_actions):
        rows.append(irl.f(a) - irl.c_action(a).toarray())
    matrix = np.vstack(rows)
    return ConstraintSet(matrix, np.zeros(matrix.shape[0]),
                         np.full(matrix.shape[0], GE), "birl",
                         f"r_p{player}:action_major(N*M)")


def build_zero_sum_constraints(game: StochasticGame, policy: BiPolicy,
                               ops: PolicyOperators | None = None) -> ConstraintSet:
    """Single-reward system: player-1 pinned rows <= 0, player-2 rows >= 0."""
    ops = ops or build_operators(game, policy)
    _require_product(ops.policy, "zerosum")
    f1 = ops.propagate(_pinned_family(ops, 1))
    f2 = ops.propagate(_pinned_family(ops, 2))
    matrix = np.vstack([f1, f2])
    senses = np.concatenate([np.full(f1.shape[0], LE), np.full(f2.shape[0], GE)])
    return ConstraintSet(matrix, np.zeros(matrix.shape[0]), senses, "zerosum",
                         "r:pair_major_v1")
