"""Self-contained convex solvers for the two problem shapes used everywhere else.

Two problem classes:

* linear programs (maximize c'x subject to a mixed <=/==/>= system and
  variable bounds), solved by a dense bounded-variable primal simplex with
  Bland's anti-cycling rule;
* inequality-constrained convex QPs with an SPD (or diagonal) quadratic
  term, solved by a dense primal active-set method that keeps a Cholesky
  factor of the active-set Gram matrix up to date.

Both solvers are deterministic: identical input bits give identical output
bits.  Solutions are re-verified by independent feasibility/KKT checkers
that never trust solver internals.

Problems too large for dense linear algebra are dispatched to sparse
fallbacks behind the same entry points: `solve_lp` hands oversized or
sparse-matrix instances to scipy's HiGHS, and `solve_qp_admm` provides an
operator-splitting QP for sparse constraint systems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import linprog as _scipy_linprog
from scipy.sparse.linalg import splu as _splu

# Row senses, shared with mirl_constraints.
LE, EQ, GE = -1, 0, 1

# Above this many matrix entries the dense simplex hands over to HiGHS.
DENSE_LP_LIMIT = 250_000


@dataclass(frozen=True)
class SolverTolerances:
    """Central numeric tolerances for both solvers."""

    feasibility: float = 1e-9
    optimality: float = 1e-9
    pivot: float = 1e-11
    iteration_factor: int = 50  # cap = factor * (rows + cols)


DEFAULT_TOL = SolverTolerances()


@dataclass
class LinearProgram:
    """maximize objective @ x  s.t.  a x (senses) b,  lo <= x <= hi."""

    objective: np.ndarray
    a: object  # dense ndarray or scipy sparse
    senses: np.ndarray  # per-row LE / EQ / GE
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.senses = np.asarray(self.senses, dtype=int)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        m, n = self.a.shape
        if self.objective.shape != (n,) or self.b.shape != (m,) or self.senses.shape != (m,):
            raise ValueError("inconsistent LP dimensions")
        if self.lo.shape != (n,) or self.hi.shape != (n,):
            raise ValueError("inconsistent LP bound dimensions")
        if not np.all(self.lo <= self.hi):
            raise ValueError("lower bound above upper bound")
        for arr in (self.objective, self.b):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite LP data")


@dataclass
class LPResult:
    status: str  # optimal | infeasible | unbounded | stalled
    x: np.ndarray | None
    objective: float
    dual: np.ndarray | None = None
    iterations: int = 0
    basis_size: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


@dataclass
class QuadraticProgram:
    """minimize 1/2 x'Qx + q'x  s.t.  a x (senses) b,  lo <= x <= hi.

    `q_matrix` is a dense SPD matrix; `q_diag` gives the diagonal-only
    variant (factor access without materializing the matrix).  Exactly one
    of the two must be set.
    """

    q_matrix: np.ndarray | None
    q_lin: np.ndarray
    a: np.ndarray
    senses: np.ndarray
    b: np.ndarray
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    q_diag: np.ndarray | None = None

    def __post_init__(self):
        if (self.q_matrix is None) == (self.q_diag is None):
            raise ValueError("exactly one of q_matrix / q_diag required")
        self.q_lin = np.asarray(self.q_lin, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.senses = np.asarray(self.senses, dtype=int)
        if self.q_diag is not None:
            self.q_diag = np.asarray(self.q_diag, dtype=float)
            if np.any(self.q_diag <= 0):
                raise ValueError("diagonal quadratic term must be positive")


@dataclass
class QPResult:
    status: str
    x: np.ndarray | None
    objective: float
    lam: np.ndarray | None = None
    kkt: dict = field(default_factory=dict)
    iterations: int = 0
    active_set: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


# ---------------------------------------------------------------------------
# dense bounded-variable simplex
# ---------------------------------------------------------------------------


class _StandardForm:
    """minimize c'x, A x = b, 0 <= x <= u, remembering the user transform."""

    def __init__(self, lp: LinearProgram):
        a = np.asarray(lp.a, dtype=float)
        m, n = a.shape
        c_min = -lp.objective  # maximize -> minimize
        cols, uppers, costs = [], [], []
        # (user_index, kind, offset); kind: +1 shifted, -1 mirrored,
        # +2/-2 the halves of a free split, 0 slack.
        self.colmap: list[tuple[int, int, float]] = []
        b = lp.b.astype(float).copy()
        for j in range(n):
            lo, hi = lp.lo[j], lp.hi[j]
            col = a[:, j]
            if np.isfinite(lo):
                cols.append(col)
                uppers.append(hi - lo if np.isfinite(hi) else np.inf)
                costs.append(c_min[j])
                self.colmap.append((j, 1, lo))
                if lo != 0.0:
                    b -= col * lo
            elif np.isfinite(hi):
                cols.append(-col)
                uppers.append(np.inf)
                costs.append(-c_min[j])
                self.colmap.append((j, -1, hi))
                b -= col * hi
            else:
                cols.append(col)
                uppers.append(np.inf)
                costs.append(c_min[j])
                self.colmap.append((j, 2, 0.0))
                cols.append(-col)
                uppers.append(np.inf)
                costs.append(-c_min[j])
                self.colmap.append((j, -2, 0.0))
        for i in range(m):
            if lp.senses[i] == EQ:
                continue
            e = np.zeros(m)
            e[i] = 1.0 if lp.senses[i] == LE else -1.0
            cols.append(e)
            uppers.append(np.inf)
            costs.append(0.0)
            self.colmap.append((-1, 0, 0.0))
        self.a = np.column_stack(cols) if cols else np.zeros((m, 0))
        self.b = b
        self.c = np.asarray(costs, dtype=float)
        self.u = np.asarray(uppers, dtype=float)
        self.row_sign = np.where(self.b < 0, -1.0, 1.0)
        self.a = self.a * self.row_sign[:, None]
        self.b = self.b * self.row_sign
        self.n_user = n
        self.m = m

    def recover(self, x_std: np.ndarray) -> np.ndarray:
        x = np.zeros(self.n_user)
        for k, (j, kind, off) in enumerate(self.colmap):
            if j < 0:
                continue
            if kind == 1:
                x[j] = off + x_std[k]
            elif kind == -1:
                x[j] = off - x_std[k]
            elif kind == 2:
                x[j] += x_std[k]
            else:
                x[j] -= x_std[k]
        return x


def _bounded_simplex(a, b, c, u, basis, vstat, tol, max_iter):
    """Bounded-variable primal simplex core (minimization).

    `basis` holds the m basic column indices; `vstat[j]` is 0 (at lower
    bound 0), 1 (at upper bound), or 2 (basic).  Bland's rule throughout:
    entering = lowest eligible column index, leaving = lowest basic
    variable index among ratio-test ties, so the iteration cannot cycle.
    """
    m, _ = a.shape

    def refreshed():
        b_inv = np.linalg.inv(a[:, basis])
        at_upper = vstat == 1
        rhs = b - a[:, at_upper] @ u[at_upper] if at_upper.any() else b
        return b_inv, b_inv @ rhs

    try:
        b_inv, x_b = refreshed()
    except np.linalg.LinAlgError:
        return "stalled", basis, vstat, np.zeros(m), np.eye(m), 0
    it = 0
    since_refresh = 0
    just_refreshed = False
    while it < max_iter:
        it += 1
        since_refresh += 1
        if since_refresh >= 100:
            try:
                b_inv, x_b = refreshed()
            except np.linalg.LinAlgError:
                return "stalled", basis, vstat, x_b, b_inv, it
            since_refresh = 0
        y = c[basis] @ b_inv
        d = c - y @ a
        eligible = ((vstat == 0) & (d < -tol.optimality)) | ((vstat == 1) & (d > tol.optimality))
        idx = np.flatnonzero(eligible)
        if idx.size == 0:
            return "optimal", basis, vstat, x_b, b_inv, it
        j = int(idx[0])
        direction = 1.0 if vstat[j] == 0 else -1.0
        w = b_inv @ a[:, j]
        v = direction * w  # xB moves by -v * t as x_j moves by direction * t
        # entries below this are numerical zeros, not pivot candidates
        piv_tol = max(tol.pivot, 1e-9 * np.abs(v).max(initial=0.0))
        t_bound = u[j]
        t_star = t_bound
        leave_row = -1
        hit_upper = False
        pos = v > piv_tol
        if pos.any():
            ratios = np.full(m, np.inf)
            ratios[pos] = np.maximum(x_b[pos], 0.0) / v[pos]
            r = int(np.argmin(ratios))
            tie = np.flatnonzero(pos & (ratios <= ratios[r] + 1e-15))
            r = int(tie[np.argmin(basis[tie])])
            if ratios[r] < t_star:
                t_star, leave_row, hit_upper = ratios[r], r, False
        neg = v < -piv_tol
        if neg.any():
            ub = u[basis]
            room = np.full(m, np.inf)
            ok = neg & np.isfinite(ub)
            if ok.any():
                room[ok] = (ub[ok] - x_b[ok]) / (-v[ok])
                r = int(np.argmin(room))
                if np.isfinite(room[r]):
                    tie = np.flatnonzero(ok & (room <= room[r] + 1e-15))
                    r = int(tie[np.argmin(basis[tie])])
                    if room[r] < t_star:
                        t_star, leave_row, hit_upper = room[r], r, True
        if not np.isfinite(t_star):
            return "unbounded", basis, vstat, x_b, b_inv, it
        t_star = max(t_star, 0.0)
        if leave_row < 0:
            x_b = x_b - v * t_star
            vstat[j] = 1 - vstat[j]
            continue
        if abs(w[leave_row]) < 1e-7 * max(1.0, np.abs(w).max()) and not just_refreshed:
            # suspicious pivot: refactorize once and redo this iteration;
            # if the fresh factor reproduces it, the pivot is genuine
            try:
                b_inv, x_b = refreshed()
            except np.linalg.LinAlgError:
                return "stalled", basis, vstat, x_b, b_inv, it
            since_refresh = 0
            just_refreshed = True
            continue
        just_refreshed = False
        x_b = x_b - v * t_star
        leaving = basis[leave_row]
        vstat[leaving] = 1 if hit_upper else 0
        basis[leave_row] = j
        vstat[j] = 2
        x_b[leave_row] = t_star if direction > 0 else u[j] - t_star
        piv = w[leave_row]
        row = b_inv[leave_row] / piv
        b_inv = b_inv - np.outer(w, row)
        b_inv[leave_row] = row
    return "stalled", basis, vstat, x_b, b_inv, it


def _solve_lp_dense(lp: LinearProgram, tol: SolverTolerances) -> LPResult:
    sf = _StandardForm(lp)
    a, b, c, u = sf.a, sf.b, sf.c, sf.u
    m, n = a.shape
    a1 = np.hstack([a, np.eye(m)])
    u1 = np.concatenate([u, np.full(m, np.inf)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    basis = np.arange(n, n + m)
    vstat = np.zeros(n + m, dtype=int)
    vstat[basis] = 2
    cap = tol.iteration_factor * (m + n + 2)
    status, basis, vstat, x_b, b_inv, it1 = _bounded_simplex(a1, b, c1, u1, basis, vstat, tol, cap)
    if status != "optimal":
        return LPResult("stalled", None, np.nan, iterations=it1)
    infeas = float(x_b[basis >= n].sum()) if (basis >= n).any() else 0.0
    if infeas > 1e-7 * max(1.0, float(np.abs(b).max(initial=0.0))):
        y = c1[basis] @ b_inv
        return LPResult("infeasible", None, np.nan, dual=-(y * sf.row_sign), iterations=it1)
    c2 = np.concatenate([c, np.zeros(m)])
    u2 = u1.copy()
    u2[n:] = 0.0
    status, basis, vstat, x_b, b_inv, it2 = _bounded_simplex(a1, b, c2, u2, basis, vstat, tol, cap)
    if status == "unbounded":
        return LPResult("unbounded", None, np.inf, iterations=it1 + it2)
    if status != "optimal":
        return LPResult("stalled", None, np.nan, iterations=it1 + it2)
    x_std = np.zeros(n + m)
    x_std[vstat == 1] = u2[vstat == 1]
    x_std[basis] = x_b
    x = sf.recover(x_std[:n])
    y = c2[basis] @ b_inv
    dual = -(y * sf.row_sign)
    return LPResult("optimal", x, float(lp.objective @ x), dual=dual,
                    iterations=it1 + it2, basis_size=m)


def _solve_lp_highs(lp: LinearProgram) -> LPResult:
    a = lp.a if sp.issparse(lp.a) else np.asarray(lp.a, dtype=float)
    le = lp.senses == LE
    ge = lp.senses == GE
    eq = lp.senses == EQ
    stack = sp.vstack if sp.issparse(a) else np.vstack
    a_ub = b_ub = a_eq = b_eq = None
    if le.any() or ge.any():
        blocks, rhs = [], []
        if le.any():
            blocks.append(a[le])
            rhs.append(lp.b[le])
        if ge.any():
            blocks.append(-a[ge])
            rhs.append(-lp.b[ge])
        a_ub = stack(blocks)
        b_ub = np.concatenate(rhs)
    if eq.any():
        a_eq = a[eq]
        b_eq = lp.b[eq]
    res = _scipy_linprog(
        -lp.objective, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
        bounds=list(zip(lp.lo, lp.hi)), method="highs",
    )
    status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(res.status, "stalled")
    if status != "optimal":
        return LPResult(status, None, np.nan, iterations=int(getattr(res, "nit", 0)))
    return LPResult("optimal", res.x, float(lp.objective @ res.x),
                    iterations=int(getattr(res, "nit", 0)))


def solve_lp(lp: LinearProgram, tol: SolverTolerances = DEFAULT_TOL, method: str = "auto") -> LPResult:
    """Solve a linear program; `method` one of auto / dense / highs.

    `auto` runs the dense simplex below DENSE_LP_LIMIT entries and HiGHS
    above (or for sparse matrices); a dense numerical stall falls back to
    HiGHS rather than surfacing a half-finished basis."""
    if method == "auto":
        big = sp.issparse(lp.a) or lp.a.shape[0] * lp.a.shape[1] > DENSE_LP_LIMIT
        res = _solve_lp_highs(lp) if big else _solve_lp_dense(lp, tol)
        if res.status == "stalled":
            res = _solve_lp_highs(lp)
        return res
    if method == "dense":
        if sp.issparse(lp.a):
            raise ValueError("dense simplex requires a dense constraint matrix")
        return _solve_lp_dense(lp, tol)
    if method == "highs":
        return _solve_lp_highs(lp)
    raise ValueError(f"unknown LP method {method!r}")


def check_lp_solution(lp: LinearProgram, res: LPResult, tol: float = 1e-8) -> dict:
    """Independent feasibility report for an LP solution."""
    if res.x is None:
        return {"feasible": res.status in ("infeasible", "unbounded"), "max_violation": np.nan}
    ax = lp.a @ res.x
    viol = np.zeros_like(ax)
    le = lp.senses == LE
    ge = lp.senses == GE
    eq = lp.senses == EQ
    viol[le] = ax[le] - lp.b[le]
    viol[ge] = lp.b[ge] - ax[ge]
    viol[eq] = np.abs(ax[eq] - lp.b[eq])
    bound_viol = np.maximum(lp.lo - res.x, res.x - lp.hi)
    worst = float(max(viol.max(initial=0.0), bound_viol.max(initial=0.0)))
    return {"feasible": worst <= tol, "max_violation": worst}


# ---------------------------------------------------------------------------
# dense primal active-set QP
# ---------------------------------------------------------------------------


class _QFactor:
    """Multiply by Q and solve with Q through a Cholesky factor or diagonal."""

    def __init__(self, q_matrix, q_diag):
        if q_diag is not None:
            self.diag = np.asarray(q_diag, dtype=float)
            self.cho = None
        else:
            self.diag = None
            mat = np.asarray(q_matrix, dtype=float)
            try:
                self.cho = sla.cho_factor(mat, lower=True)
            except sla.LinAlgError as exc:
                raise ValueError("quadratic term is not positive definite") from exc
            self.mat = mat

    def solve(self, v):
        if self.diag is not None:
            if v.ndim == 1:
                return v / self.diag
            return v / self.diag[:, None]
        return sla.cho_solve(self.cho, v)

    def mult(self, x):
        if self.diag is not None:
            return self.diag * x
        return self.mat @ x


class _CholUpdater:
    """Growable Cholesky factor of the active-set Gram matrix G Q^{-1} G'."""

    def __init__(self):
        self.l = np.zeros((0, 0))

    @property
    def size(self):
        return self.l.shape[0]

    def add(self, cross: np.ndarray, diag: float):
        k = self.size
        if k == 0:
            self.l = np.array([[np.sqrt(max(diag, 1e-300))]])
            return
        w = sla.solve_triangular(self.l, cross, lower=True)
        rest = diag - w @ w
        d = np.sqrt(max(rest, 1e-14 * max(diag, 1.0)))
        new = np.zeros((k + 1, k + 1))
        new[:k, :k] = self.l
        new[k, :k] = w
        new[k, k] = d
        self.l = new

    def drop(self, i: int):
        k = self.size
        l = np.delete(self.l, i, axis=0)
        for col in range(i, k - 1):
            a_, b_ = l[col, col], l[col, col + 1]
            r = np.hypot(a_, b_)
            if r == 0.0:
                continue
            cth, sth = a_ / r, b_ / r
            g0 = l[col:, col].copy()
            g1 = l[col:, col + 1].copy()
            l[col:, col] = cth * g0 + sth * g1
            l[col:, col + 1] = -sth * g0 + cth * g1
        self.l = np.ascontiguousarray(l[:, : k - 1])

    def solve(self, rhs):
        y = sla.solve_triangular(self.l, rhs, lower=True)
        return sla.solve_triangular(self.l.T, y, lower=False)


def _fold_bounds(qp: QuadraticProgram):
    """Split the row system into <=-form inequalities and equalities,
    folding finite variable bounds in as extra inequality rows."""
    n = qp.q_lin.shape[0]
    a = np.asarray(qp.a, dtype=float) if qp.a is not None and np.size(qp.a) else np.zeros((0, n))
    g_rows, h, eq_rows, eq_rhs = [], [], [], []
    for i in range(a.shape[0]):
        if qp.senses[i] == EQ:
            eq_rows.append(a[i])
            eq_rhs.append(qp.b[i])
        elif qp.senses[i] == LE:
            g_rows.append(a[i])
            h.append(qp.b[i])
        else:
            g_rows.append(-a[i])
            h.append(-qp.b[i])
    if qp.hi is not None:
        for j in np.flatnonzero(np.isfinite(qp.hi)):
            e = np.zeros(n)
            e[j] = 1.0
            g_rows.append(e)
            h.append(qp.hi[j])
    if qp.lo is not None:
        for j in np.flatnonzero(np.isfinite(qp.lo)):
            e = np.zeros(n)
            e[j] = -1.0
            g_rows.append(e)
            h.append(-qp.lo[j])
    g = np.vstack(g_rows) if g_rows else np.zeros((0, n))
    e = np.vstack(eq_rows) if eq_rows else np.zeros((0, n))
    return g, np.asarray(h, float), e, np.asarray(eq_rhs, float)


def solve_qp(qp: QuadraticProgram, x0: np.ndarray | None = None,
             tol: SolverTolerances = DEFAULT_TOL) -> QPResult:
    """Primal active-set solve of a convex QP.

    Starts from `x0` (default: 0 when feasible, otherwise a phase-1 LP
    point).  Inequalities enter the working set only when they block a
    step; lowest-index add/drop keeps the iteration deterministic and
    cycle-free.  The per-iteration subproblem is solved in range space:
    Q is factored once, and the active-set Gram matrix carries an
    incrementally updated Cholesky factor.
    """
    qf = _QFactor(qp.q_matrix, qp.q_diag)
    n = qp.q_lin.shape[0]
    g, h, e, e_rhs = _fold_bounds(qp)
    n_eq = e.shape[0]
    if x0 is None:
        feasible_zero = n_eq == 0 or np.abs(e_rhs).max(initial=0.0) <= 1e-12
        feasible_zero = feasible_zero and (h.size == 0 or h.min(initial=0.0) >= -1e-12)
        if feasible_zero:
            x0 = np.zeros(n)
        else:
            lp = LinearProgram(
                objective=np.zeros(n),
                a=np.vstack([g, e]) if n_eq else g,
                senses=np.concatenate([np.full(g.shape[0], LE), np.full(n_eq, EQ)]),
                b=np.concatenate([h, e_rhs]),
                lo=np.full(n, -np.inf),
                hi=np.full(n, np.inf),
            )
            feas = solve_lp(lp, tol)
            if not feas.ok:
                return QPResult("infeasible", None, np.nan)
            x0 = feas.x
    x = np.asarray(x0, dtype=float).copy()
    rows: list[np.ndarray] = [e[i] for i in range(n_eq)]
    kinds: list[int] = [EQ] * n_eq
    members: list[int] = [-1] * n_eq
    winv: list[np.ndarray] = [qf.solve(r) for r in rows]
    chol = _CholUpdater()
    for i, r in enumerate(rows):
        cross = np.array([rows[k] @ winv[i] for k in range(i)])
        chol.add(cross, float(r @ winv[i]))
    cap = tol.iteration_factor * (g.shape[0] + n_eq + n + 2)
    it = 0
    while it < cap:
        it += 1
        grad = qf.mult(x) + qp.q_lin
        ginv = qf.solve(grad)
        if chol.size:
            rhs = -np.array([r @ ginv for r in rows])
            lam = chol.solve(rhs)
            if not np.all(np.isfinite(lam)):
                return QPResult("stalled", x, np.nan, iterations=it)
            combo = grad.copy()
            for k in range(len(rows)):
                combo += lam[k] * rows[k]
            p = -qf.solve(combo)
        else:
            lam = np.zeros(0)
            p = -ginv
        if np.abs(p).max(initial=0.0) <= 1e-11 * (1.0 + np.abs(x).max(initial=0.0)):
            drop = -1
            for k in range(len(rows)):
                if kinds[k] != EQ and lam[k] < -tol.optimality:
                    drop = k
                    break
            if drop < 0:
                obj = 0.5 * float(x @ qf.mult(x)) + float(qp.q_lin @ x)
                full_lam = np.zeros(g.shape[0])
                for k in range(len(rows)):
                    if kinds[k] != EQ:
                        full_lam[members[k]] = lam[k]
                kkt = _kkt_residuals(qf, qp.q_lin, g, h, e, e_rhs, x, rows, lam)
                return QPResult("optimal", x, obj, lam=full_lam, kkt=kkt, iterations=it,
                                active_set=sorted(members[k] for k in range(len(rows))
                                                  if kinds[k] != EQ))
            rows.pop(drop)
            kinds.pop(drop)
            members.pop(drop)
            winv.pop(drop)
            chol.drop(drop)
            continue
        gp = g @ p if g.size else np.zeros(0)
        slack = h - (g @ x) if g.size else np.zeros(0)
        active_members = {members[k] for k in range(len(rows)) if kinds[k] != EQ}
        alpha = 1.0
        block = -1
        for i in np.flatnonzero(gp > 1e-13):
            if i in active_members:
                continue
            step = max(slack[i], 0.0) / gp[i]
            if step < alpha - 1e-15:
                alpha = step
                block = int(i)
        x = x + alpha * p
        if block >= 0:
            r = g[block]
            wr = qf.solve(r)
            cross = np.array([rows[k] @ wr for k in range(len(rows))])
            chol.add(cross, float(r @ wr))
            rows.append(r)
            kinds.append(LE)
            members.append(block)
            winv.append(wr)
    return QPResult("stalled", x, np.nan, iterations=it)


def _kkt_residuals(qf, q_lin, g, h, e, e_rhs, x, rows, lam):
    grad = qf.mult(x) + q_lin
    for k, r in enumerate(rows):
        grad = grad + lam[k] * r
    primal_ineq = float((g @ x - h).max(initial=0.0)) if g.size else 0.0
    primal_eq = float(np.abs(e @ x - e_rhs).max(initial=0.0)) if e.size else 0.0
    return {
        "stationarity": float(np.abs(grad).max(initial=0.0)),
        "primal": max(primal_ineq, primal_eq),
    }


def check_qp_solution(qp: QuadraticProgram, res: QPResult, tol: float = 1e-7) -> dict:
    """Independent KKT check: feasibility, stationarity, complementarity."""
    if res.x is None:
        return {"ok": res.status == "infeasible"}
    g, h, e, e_rhs = _fold_bounds(qp)
    x = res.x
    qf = _QFactor(qp.q_matrix, qp.q_diag)
    feas = float((g @ x - h).max(initial=0.0)) if g.size else 0.0
    if e.size:
        feas = max(feas, float(np.abs(e @ x - e_rhs).max(initial=0.0)))
    grad = qf.mult(x) + qp.q_lin
    comp = 0.0
    dual_ok = True
    if res.lam is not None and g.size:
        lam_ineq = res.lam[: g.shape[0]]
        grad = grad + g.T @ lam_ineq
        comp = float(np.abs(lam_ineq * (g @ x - h)).max(initial=0.0))
        dual_ok = bool(lam_ineq.min(initial=0.0) >= -tol)
    elif e.size:
        # project the gradient onto the equality null space before judging
        grad = grad - e.T @ np.linalg.lstsq(e.T, grad, rcond=None)[0]
    scale = 1.0 + float(np.abs(qp.q_lin).max(initial=0.0)) + float(np.abs(x).max(initial=0.0))
    stat = float(np.abs(grad).max(initial=0.0)) / scale
    return {
        "ok": feas <= tol and stat <= tol and comp <= tol * scale and dual_ok,
        "feasibility": feas,
        "stationarity": stat,
        "complementarity": comp,
    }


# ---------------------------------------------------------------------------
# sparse operator-splitting QP (large problems)
# ---------------------------------------------------------------------------


def solve_qp_admm(p_diag, q, a, l, u, max_iter=40000, eps=1e-8, rho0=0.1,
                  sigma=1e-6, alpha=1.6, polish=True):
    """ADMM solve of: minimize 1/2 x' diag(p_diag) x + q'x  s.t. l <= a x <= u.

    Operator splitting with a single sparse KKT factorization per rho
    setting.  `p_diag` entries may be zero (auxiliary variables); sigma
    keeps the KKT system nonsingular.  Deterministic; a final equality
    polish on the detected active set sharpens the solution.
    """
    a = sp.csc_matrix(a)
    m, n = a.shape
    p_diag = np.asarray(p_diag, dtype=float)
    q = np.asarray(q, dtype=float)
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    eq = np.isfinite(l) & np.isfinite(u) & (u - l < 1e-14)
    rho = np.full(m, rho0)
    rho[eq] = rho0 * 1e3

    def factor(rho_vec):
        kkt = sp.bmat(
            [[sp.diags(p_diag + sigma), a.T], [a, -sp.diags(1.0 / rho_vec)]],
            format="csc",
        )
        return _splu(kkt)

    lu = factor(rho)
    x = np.zeros(n)
    z = np.zeros(m)
    y = np.zeros(m)
    it = 0
    last_refactor = 0
    while it < max_iter:
        it += 1
        rhs = np.concatenate([sigma * x - q, z - y / rho])
        sol = lu.solve(rhs)
        x_t = sol[:n]
        z_t = z + (sol[n:] - y) / rho
        x = alpha * x_t + (1 - alpha) * x
        z_relaxed = alpha * z_t + (1 - alpha) * z
        z_new = np.minimum(np.maximum(z_relaxed + y / rho, l), u)
        y = y + rho * (z_relaxed - z_new)
        z = z_new
        if it % 25 == 0:
            ax = a @ x
            r_prim = np.abs(ax - z).max(initial=0.0)
            r_dual = np.abs(p_diag * x + q + a.T @ y).max(initial=0.0)
            s_prim = max(1.0, np.abs(ax).max(initial=0.0), np.abs(z).max(initial=0.0))
            s_dual = max(1.0, np.abs(q).max(initial=0.0),
                         np.abs(a.T @ y).max(initial=0.0))
            if r_prim <= eps * s_prim and r_dual <= eps * s_dual:
                break
            if it - last_refactor >= 2000 and r_prim > 0 and r_dual > 0:
                ratio = np.sqrt((r_prim / s_prim) / (r_dual / s_dual))
                if ratio > 5 or ratio < 0.2:
                    rho = np.clip(rho * ratio, 1e-6, 1e6)
                    rho[eq] = np.clip(rho[eq] * 1e3, 1e-3, 1e9)
                    lu = factor(rho)
                    last_refactor = it
    status = "optimal" if it < max_iter else "max_iter"
    if polish:
        x_p = _polish(p_diag, q, a, l, u, x, y, sigma)
        if x_p is not None:
            x = x_p
            status = "optimal"
    obj = 0.5 * float(x @ (p_diag * x)) + float(q @ x)
    return {"status": status, "x": x, "y": y, "objective": obj, "iterations": it}


def _polish(p_diag, q, a, l, u, x, y, reg):
    """Equality-solve on the active rows detected from the ADMM duals."""
    ax = a @ x
    fin_l = np.isfinite(l)
    fin_u = np.isfinite(u)
    is_eq = fin_l & fin_u & (u - l < 1e-14)
    low = fin_l & ~is_eq & ((y < -1e-9) | (np.abs(ax - l) < 1e-7))
    upp = fin_u & ~is_eq & ((y > 1e-9) | (np.abs(ax - u) < 1e-7))
    act = np.flatnonzero(is_eq | low | upp)
    if act.size == 0:
        return None
    rhs_rows = np.where(is_eq[act] | low[act], l[act], u[act])
    g = a[act]
    k = act.size
    kkt = sp.bmat(
        [[sp.diags(p_diag + reg), g.T], [g, -reg * sp.identity(k)]], format="csc"
    )
    try:
        sol = _splu(kkt).solve(np.concatenate([-q, rhs_rows]))
    except RuntimeError:
        return None
    x_p = sol[: a.shape[1]]
    ax_p = a @ x_p
    viol = max(np.maximum(l - ax_p, 0.0).max(initial=0.0),
               np.maximum(ax_p - u, 0.0).max(initial=0.0))
    old_ax = a @ x
    old_viol = max(np.maximum(l - old_ax, 0.0).max(initial=0.0),
                   np.maximum(old_ax - u, 0.0).max(initial=0.0))
    obj_p = 0.5 * x_p @ (p_diag * x_p) + q @ x_p
    obj_o = 0.5 * x @ (p_diag * x) + q @ x
    if viol <= max(1e-9, old_viol) and obj_p <= obj_o + 1e-9 * (1 + abs(obj_o)):
        return x_p
    return None


# ---------------------------------------------------------------------------
# plain-text dump / load (regression fixtures)
# ---------------------------------------------------------------------------

_SENSE_TXT = {LE: "<=", EQ: "==", GE: ">="}
_TXT_SENSE = {v: k for k, v in _SENSE_TXT.items()}


def dump_lp(lp: LinearProgram, fh) -> None:
    close = isinstance(fh, str)
    if close:
        fh = open(fh, "w")
    m, n = lp.a.shape
    fh.write(f"lp {m} {n}\n")
    fh.write("c " + " ".join(repr(float(v)) for v in lp.objective) + "\n")
    fh.write("lo " + " ".join(repr(float(v)) for v in lp.lo) + "\n")
    fh.write("hi " + " ".join(repr(float(v)) for v in lp.hi) + "\n")
    a = np.asarray(lp.a)
    for i in range(m):
        fh.write(f"row {_SENSE_TXT[int(lp.senses[i])]} {float(lp.b[i])!r} "
                 + " ".join(repr(float(v)) for v in a[i]) + "\n")
    if close:
        fh.close()


def load_lp(fh) -> LinearProgram:
    close = isinstance(fh, str)
    if close:
        fh = open(fh)
    header = fh.readline().split()
    m, n = int(header[1]), int(header[2])
    c = np.array([float(v) for v in fh.readline().split()[1:]])
    lo = np.array([float(v) for v in fh.readline().split()[1:]])
    hi = np.array([float(v) for v in fh.readline().split()[1:]])
    rows = np.zeros((m, n))
    b = np.zeros(m)
    senses = np.zeros(m, dtype=int)
    for i in range(m):
        parts = fh.readline().split()
        senses[i] = _TXT_SENSE[parts[1]]
        b[i] = float(parts[2])
        rows[i] = [float(v) for v in parts[3:]]
    if close:
        fh.close()
    return LinearProgram(c, rows, senses, b, lo, hi)
