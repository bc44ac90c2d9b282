"""Solution concepts on single-stage bimatrix games.

Implements the per-state selection functions used by the forward learner
and the ground-truth checkers used in tests: the pure joint maximizer of
the payoff sum (uCS), coordination and adversarial equilibria (cooE,
advE, which may not exist), the total-value-maximal Nash and correlated
equilibria (uNE via support enumeration, uCE via linear programming), and
the per-player maximin solution (minimax).

Tie-breaking is lexicographic everywhere: determinism here is what makes
forward learning reproducible.  Degenerate instances are re-solved under
a deterministic <=1e-9 payoff jitter and flagged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np

from .convex_backend import EQ, GE, LE, LinearProgram, solve_lp

EXIST_TOL = 1e-8
SUPPORT_ENUM_LIMIT = 8


@dataclass(frozen=True)
class StageGame:
    """Payoff matrices for one state; player 1 picks rows, player 2 columns."""

    payoff1: np.ndarray
    payoff2: np.ndarray

    def __post_init__(self):
        p1 = np.asarray(self.payoff1, dtype=float)
        p2 = np.asarray(self.payoff2, dtype=float)
        object.__setattr__(self, "payoff1", p1)
        object.__setattr__(self, "payoff2", p2)
        if p1.shape != p2.shape or p1.ndim != 2 or p1.shape[0] != p1.shape[1]:
            raise ValueError("payoff matrices must be square and share shape")
        if not (np.isfinite(p1).all() and np.isfinite(p2).all()):
            raise ValueError("payoffs must be finite")

    @property
    def n_actions(self) -> int:
        return self.payoff1.shape[0]


@dataclass(frozen=True)
class StageSolution:
    concept: str
    exists: bool
    joint: np.ndarray | None
    values: tuple[float, float] | None
    strategies: tuple[np.ndarray, np.ndarray] | None = None
    degenerate: bool = False
    tie_count: int = 0

    @property
    def is_product(self) -> bool:
        return self.strategies is not None


def _product_solution(concept, x, y, g: StageGame, degenerate=False, tie_count=0,
                      values=None) -> StageSolution:
    joint = np.outer(x, y)
    if values is None:
        values = (float(x @ g.payoff1 @ y), float(x @ g.payoff2 @ y))
    return StageSolution(concept, True, joint, values, (x, y), degenerate, tie_count)


def _pure_strategies(m, a1, a2):
    x = np.zeros(m)
    y = np.zeros(m)
    x[a1] = 1.0
    y[a2] = 1.0
    return x, y


def solve_ucs(g: StageGame) -> StageSolution:
    """Pure pair maximizing payoff1 + payoff2; lexicographic tie-break."""
    total = g.payoff1 + g.payoff2
    flat = total.ravel()
    best = flat.max()
    ties = np.flatnonzero(flat >= best - EXIST_TOL)
    a1, a2 = divmod(int(ties[0]), g.n_actions)
    x, y = _pure_strategies(g.n_actions, a1, a2)
    return _product_solution("uCS", x, y, g, tie_count=len(ties) - 1)


def solve_coo_e(g: StageGame) -> StageSolution:
    """Pure pair at which both players attain their global maximum payoff.

    Such a pair is automatically a Nash equilibrium.  Non-existence is a
    value, not an error."""
    m = g.n_actions
    max1 = g.payoff1.max()
    max2 = g.payoff2.max()
    both = (g.payoff1 >= max1 - EXIST_TOL) & (g.payoff2 >= max2 - EXIST_TOL)
    idx = np.flatnonzero(both.ravel())
    if idx.size == 0:
        return StageSolution("cooE", False, None, None)
    a1, a2 = divmod(int(idx[0]), m)
    x, y = _pure_strategies(m, a1, a2)
    return _product_solution("cooE", x, y, g, tie_count=len(idx) - 1)


def _maximin_row(payoff: np.ndarray) -> tuple[np.ndarray, float]:
    """max_x min_j x'payoff[:, j] over the simplex, by LP."""
    m = payoff.shape[0]
    # variables: x (m), v; the value is bounded by the payoff range, which
    # keeps every LP variable box-bounded
    bound = float(np.abs(payoff).max()) + 1.0
    c = np.zeros(m + 1)
    c[m] = 1.0
    rows = []
    senses = []
    b = []
    for j in range(m):
        row = np.zeros(m + 1)
        row[:m] = payoff[:, j]
        row[m] = -1.0
        rows.append(row)
        senses.append(GE)
        b.append(0.0)
    srow = np.zeros(m + 1)
    srow[:m] = 1.0
    rows.append(srow)
    senses.append(EQ)
    b.append(1.0)
    lo = np.zeros(m + 1)
    lo[m] = -bound
    hi = np.full(m + 1, bound)
    hi[:m] = 1.0
    res = solve_lp(LinearProgram(c, np.array(rows), np.array(senses), np.array(b), lo, hi))
    assert res.ok, f"maximin LP failed: {res.status}"
    x = np.clip(res.x[:m], 0.0, None)
    x /= x.sum()
    return x, float(res.x[m])


def solve_minimax(g: StageGame) -> StageSolution:
    """Each player's own maximin strategy and guaranteed level.

    `values` are the maximin levels, which equal the expected payoffs
    under the product joint exactly when the game is zero-sum."""
    x, v1 = _maximin_row(g.payoff1)
    y, v2 = _maximin_row(g.payoff2.T)
    joint = np.outer(x, y)
    return StageSolution("minimax", True, joint, (v1, v2), (x, y))


def solve_adv_e(g: StageGame) -> StageSolution:
    """Adversarial equilibrium: a NE where opponent deviations cannot hurt.

    Computed as the pair of own-payoff maximin strategies, then verified
    against the Nash and no-harm inequalities; when an advE exists it
    coincides with this mutual-maximin profile."""
    x, _ = _maximin_row(g.payoff1)
    y, _ = _maximin_row(g.payoff2.T)
    v1 = float(x @ g.payoff1 @ y)
    v2 = float(x @ g.payoff2 @ y)
    ne_ok = (g.payoff1 @ y).max() <= v1 + EXIST_TOL and (x @ g.payoff2).max() <= v2 + EXIST_TOL
    adv_ok = (x @ g.payoff1).min() >= v1 - EXIST_TOL and (g.payoff2 @ y).min() >= v2 - EXIST_TOL
    if not (ne_ok and adv_ok):
        return StageSolution("advE", False, None, None)
    return _product_solution("advE", x, y, g, values=(v1, v2))


# ---------------------------------------------------------------------------
# Nash enumeration (support enumeration with deterministic jitter fallback)
# ---------------------------------------------------------------------------


def _pure_nash(p1, p2, tol):
    m = p1.shape[0]
    br1 = p1 >= p1.max(axis=0, keepdims=True) - tol  # per column
    br2 = p2 >= p2.max(axis=1, keepdims=True) - tol  # per row
    out = []
    for a1, a2 in np.argwhere(br1 & br2):
        x, y = _pure_strategies(m, a1, a2)
        out.append((x, y))
    return out


@lru_cache(maxsize=None)
def _support_pairs(m: int, k: int):
    supports = np.array(list(combinations(range(m), k)), dtype=int)
    n = supports.shape[0]
    i1 = np.repeat(np.arange(n), n)
    i2 = np.tile(np.arange(n), n)
    return supports[i1], supports[i2]


def _mixed_nash(p1, p2, tol):
    """Equal-size support enumeration, fully batched per support size."""
    m = p1.shape[0]
    found = []
    degenerate = False
    rhs_tail = 1.0
    for k in range(2, m + 1):
        s1, s2 = _support_pairs(m, k)  # (t, k) index arrays
        t = s1.shape[0]
        sub1 = p1[s1[:, :, None], s2[:, None, :]]  # (t, k, k)
        sub2 = p2[s1[:, :, None], s2[:, None, :]]
        a_y = np.zeros((t, k + 1, k + 1))
        a_y[:, :k, :k] = sub1
        a_y[:, :k, k] = -1.0
        a_y[:, k, :k] = 1.0
        a_x = np.zeros((t, k + 1, k + 1))
        a_x[:, :k, :k] = np.transpose(sub2, (0, 2, 1))
        a_x[:, :k, k] = -1.0
        a_x[:, k, :k] = 1.0
        rhs = np.zeros(k + 1)
        rhs[k] = rhs_tail
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            ok = (np.abs(np.linalg.det(a_y)) > 1e-12) & (np.abs(np.linalg.det(a_x)) > 1e-12)
        if not ok.all():
            degenerate = True
        a_y[~ok] = np.eye(k + 1)
        a_x[~ok] = np.eye(k + 1)
        sol_y = np.linalg.solve(a_y, rhs)
        sol_x = np.linalg.solve(a_x, rhs)
        y_s, v1 = sol_y[:, :k], sol_y[:, k]
        x_s, v2 = sol_x[:, :k], sol_x[:, k]
        interior = ok & (x_s.min(axis=1) > tol) & (y_s.min(axis=1) > tol)
        boundary = ok & ~interior & (x_s.min(axis=1) > -tol) & (y_s.min(axis=1) > -tol)
        if boundary.any():
            degenerate = True
        if not interior.any():
            continue
        x_all = np.zeros((t, m))
        y_all = np.zeros((t, m))
        np.put_along_axis(x_all, s1, np.clip(x_s, 0.0, None), axis=1)
        np.put_along_axis(y_all, s2, np.clip(y_s, 0.0, None), axis=1)
        x_sum = x_all.sum(axis=1, keepdims=True)
        y_sum = y_all.sum(axis=1, keepdims=True)
        x_all = np.divide(x_all, x_sum, out=x_all, where=x_sum > 0)
        y_all = np.divide(y_all, y_sum, out=y_all, where=y_sum > 0)
        r1y = y_all @ p1.T  # (t, m): payoff of each pure row against y
        xr2 = x_all @ p2    # (t, m)
        off1 = np.ones((t, m), dtype=bool)
        off2 = np.ones((t, m), dtype=bool)
        np.put_along_axis(off1, s1, False, axis=1)
        np.put_along_axis(off2, s2, False, axis=1)
        best_off1 = np.where(off1, r1y, -np.inf).max(axis=1)
        best_off2 = np.where(off2, xr2, -np.inf).max(axis=1)
        keep = interior & (best_off1 <= v1 + tol) & (best_off2 <= v2 + tol)
        if (interior & keep & ((best_off1 > v1 - tol) | (best_off2 > v2 - tol))).any():
            degenerate = True
        for i in np.flatnonzero(keep):
            found.append((x_all[i], y_all[i]))
    return found, degenerate


def _jitter(p: np.ndarray, scale: float, transposed: bool) -> np.ndarray:
    m = p.shape[0]
    i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    rank = (j * m + i + 1) if transposed else (i * m + j + 1)
    return p - scale * rank


def enumerate_nash(g: StageGame, tol: float = 1e-9):
    """All Nash equilibria found by support enumeration.

    Returns (list of (x, y), degenerate flag).  Degenerate instances
    (singular indifference systems, boundary supports, off-support ties)
    are re-enumerated under a deterministic payoff jitter of at most 1e-9
    and reported with the flag set.
    """
    m = g.n_actions
    if m > SUPPORT_ENUM_LIMIT:
        raise ValueError(f"support enumeration limited to M <= {SUPPORT_ENUM_LIMIT}")
    pures = _pure_nash(g.payoff1, g.payoff2, tol)
    mixed, degenerate = _mixed_nash(g.payoff1, g.payoff2, tol)
    # duplicated pure equilibria across tolerance boundaries are rare; the
    # jitter path below resolves true degeneracy
    if degenerate or _has_payoff_ties(g, tol):
        p1j = _jitter(g.payoff1, 1e-9, False)
        p2j = _jitter(g.payoff2, 1.3e-9, True)
        pures = _pure_nash(p1j, p2j, tol)
        mixed, _ = _mixed_nash(p1j, p2j, tol)
        degenerate = True
    out = []
    seen = set()
    for x, y in pures + mixed:
        key = (tuple(np.round(x, 9)), tuple(np.round(y, 9)))
        if key in seen:
            continue
        seen.add(key)
        out.append((x, y))
    return out, degenerate


def _has_payoff_ties(g: StageGame, tol) -> bool:
    """Column/row best-response ties make pure enumeration ambiguous."""
    p1, p2 = g.payoff1, g.payoff2
    col_sorted = np.sort(p1, axis=0)
    row_sorted = np.sort(p2, axis=1)
    tie1 = (col_sorted[-1] - col_sorted[-2] < tol).any() if p1.shape[0] > 1 else False
    tie2 = (row_sorted[:, -1] - row_sorted[:, -2] < tol).any() if p1.shape[0] > 1 else False
    return bool(tie1 or tie2)


def solve_une(g: StageGame) -> StageSolution:
    """Total-value-maximal Nash equilibrium among the enumerated set."""
    nes, degenerate = enumerate_nash(g)
    assert nes, "support enumeration found no equilibrium"
    scored = []
    for x, y in nes:
        v1 = float(x @ g.payoff1 @ y)
        v2 = float(x @ g.payoff2 @ y)
        support_key = (tuple(x <= 1e-12), tuple(y <= 1e-12))
        scored.append((-(v1 + v2), support_key, tuple(np.round(x, 12)),
                       tuple(np.round(y, 12)), x, y, v1, v2))
    scored.sort(key=lambda rec: rec[:4])
    best_total = -scored[0][0]
    tie_count = sum(1 for rec in scored if -rec[0] >= best_total - EXIST_TOL) - 1
    _, _, _, _, x, y, v1, v2 = scored[0]
    return _product_solution("uNE", x, y, g, degenerate=degenerate,
                             tie_count=tie_count, values=(v1, v2))


def ce_constraint_rows(p1: np.ndarray, p2: np.ndarray):
    """Correlated-equilibrium inequality rows over the flattened joint.

    Row order: player 1 loops (a, dev a_check), then player 2.  Each row
    dotted with the pair-major joint must be >= 0."""
    m = p1.shape[0]
    rows = []
    for a in range(m):
        for dev in range(m):
            if dev == a:
                continue
            row = np.zeros((m, m))
            row[a, :] = p1[a, :] - p1[dev, :]
            rows.append(row.ravel())
    for a in range(m):
        for dev in range(m):
            if dev == a:
                continue
            row = np.zeros((m, m))
            row[:, a] = p2[:, a] - p2[:, dev]
            rows.append(row.ravel())
    return np.array(rows)


def solve_uce(g: StageGame) -> StageSolution:
    """Total-value-maximal correlated equilibrium, by linear programming.

    Payoffs are normalized to unit scale first (the polytope is invariant
    to positive scaling); an all-tie game short-circuits to the
    lexicographic point mass, matching the other solvers' convention."""
    m = g.n_actions
    scale = max(np.abs(g.payoff1).max(), np.abs(g.payoff2).max())
    if scale <= 0.0:
        joint = np.zeros((m, m))
        joint[0, 0] = 1.0
        return StageSolution("uCE", True, joint, (0.0, 0.0), None)
    p1 = g.payoff1 / scale
    p2 = g.payoff2 / scale

    def attempt(q1, q2):
        ce_rows = ce_constraint_rows(q1, q2)
        n_ce = ce_rows.shape[0]
        a = np.vstack([ce_rows, np.ones((1, m * m))])
        senses = np.concatenate([np.full(n_ce, GE), [EQ]])
        b = np.concatenate([np.zeros(n_ce), [1.0]])
        lp = LinearProgram((q1 + q2).ravel(), a, senses, b,
                           np.zeros(m * m), np.ones(m * m))
        # hot path in forward learning; HiGHS is ~3x faster on this shape
        res = solve_lp(lp, method="highs")
        if not res.ok:  # numerically degenerate instances: dense Bland fallback
            res = solve_lp(lp, method="dense")
        return res

    res = attempt(p1, p2)
    if not res.ok:
        # payoffs spanning many orders of magnitude (sampling noise) can
        # defeat both solvers; sub-1e-7 relative entries are noise here
        res = attempt(np.where(np.abs(p1) < 1e-7, 0.0, p1),
                      np.where(np.abs(p2) < 1e-7, 0.0, p2))
    if not res.ok:
        # razor-thin feasible faces (every feasible point tight on many
        # rows) defeat both solvers; a deterministic sub-1e-9 jitter
        # breaks the degeneracy
        res = attempt(_jitter(p1, 5e-10, False), _jitter(p2, 6.5e-10, True))
    if res.ok:
        joint = np.clip(res.x.reshape(m, m), 0.0, None)
        joint /= joint.sum()
    else:
        # last resort: the total-value-maximal Nash point is a correlated
        # equilibrium and always computable
        x, y = solve_une(g).strategies
        joint = np.outer(x, y)
    v1 = float((joint * g.payoff1).sum())
    v2 = float((joint * g.payoff2).sum())
    return StageSolution("uCE", True, joint, (v1, v2), None)


_SOLVERS = {
    "uCS": solve_ucs,
    "cooE": solve_coo_e,
    "advE": solve_adv_e,
    "uNE": solve_une,
    "uCE": solve_uce,
    "minimax": solve_minimax,
}

CONCEPTS = tuple(_SOLVERS)


def solve_stage(concept: str, g: StageGame) -> StageSolution:
    try:
        return _SOLVERS[concept](g)
    except KeyError:
        raise ValueError(f"unknown concept {concept!r}") from None


def backup_values(concept: str, q1: np.ndarray, q2: np.ndarray) -> tuple[float, float]:
    """Per-player backup values for the learning update.

    cooE uses the friend-style own-maximum (always defined; strict cooE
    existence is only enforced at extraction), advE/minimax the foe-style
    maximin level; the rest evaluate the concept's stage solution.
    """
    if concept == "uCS":
        idx = int(np.argmax((q1 + q2).ravel()))
        a1, a2 = divmod(idx, q1.shape[0])
        return float(q1[a1, a2]), float(q2[a1, a2])
    if concept == "cooE":
        return float(q1.max()), float(q2.max())
    if concept in ("advE", "minimax"):
        x, v1 = _maximin_row(q1)
        y, v2 = _maximin_row(q2.T)
        return v1, v2
    sol = solve_stage(concept, StageGame(q1, q2))
    return sol.values


def check_nash(g: StageGame, x: np.ndarray, y: np.ndarray, tol: float = 1e-8) -> float:
    """Max violation of the Nash best-response inequalities."""
    v1 = x @ g.payoff1 @ y
    v2 = x @ g.payoff2 @ y
    return float(max((g.payoff1 @ y).max() - v1, (x @ g.payoff2).max() - v2, 0.0))


def check_ce(g: StageGame, joint: np.ndarray) -> float:
    """Max violation of the correlated-equilibrium inequalities."""
    rows = ce_constraint_rows(g.payoff1, g.payoff2)
    vals = rows @ joint.ravel()
    return float(max(0.0, -vals.min(initial=0.0)))
