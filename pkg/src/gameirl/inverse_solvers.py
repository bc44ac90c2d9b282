"""Reward recovery from an observed bi-policy, one solver per assumption.

Three problem shapes:

* `solve_map` (uCS / advE / cooE): the equilibrium assumption pins a
  homogeneous cone of consistent reward pairs; the recovered pair is the
  maximum a-posteriori point of independent Gaussian priors restricted to
  that cone, i.e. the minimizer of the summed Mahalanobis distance
  subject to the variant's constraint rows.  A convex QP with a unique
  optimum.

* `solve_reduced_gap` (uCE / uNE): the constraint rows only pin the
  equilibrium *class*, so the LP additionally prefers rewards that make
  the observed policy look like the total-value-maximal member: maximize

      1' [ (1+lambda) V_sum  -  lambda y ]  - beta ||r||_1  (+ anchors)

  subject to the class rows, per-state epigraph rows y(s) >= Q_sum(s, a)
  for every pure pair and y(s) >= V_sum(s), and box bounds |r| <= r_max
  (the homogeneous objective is otherwise unbounded).  L1 terms use the
  r = r+ - r- split.

* `solve_baseline`: the decentralized margin LP, the one-player reduction
  QP (recovered own-action rewards are lifted to the joint layout by
  copying across the opponent's action), and the single-reward zero-sum QP.

Gaussian priors support diagonal covariances and correlation-1 blocks;
the latter are implemented by merging tied coordinates into one variable
(x = T z), which keeps the reduced quadratic strictly positive definite.
Reported constraint violations are always recomputed independently of
the solver through the matrix-free checker.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .convex_backend import (EQ, GE, LE, LinearProgram, QuadraticProgram,
                             solve_lp, solve_qp, solve_qp_admm)
from .game_core import (BiPolicy, PolicyOperators, RewardVector,
                        StochasticGame, build_operators,
                        lift_own_action_reward, total_game_value, q_vector)
from .mirl_constraints import (build_birl_constraints, build_dmirl_program,
                               max_violation, variant_families)

MAP_VARIANTS = ("uCS", "advE", "cooE")
GAP_VARIANTS = ("uNE", "uCE")

# above this many dense entries the MAP QP goes through the sparse
# lifted ADMM formulation instead of the dense active set
DENSE_QP_ENTRY_LIMIT = 60_000_000


@dataclass
class GaussianPrior:
    """Gaussian reward prior with a diagonal or tied-block covariance.

    Either `variances` gives a full diagonal, or `groups` lists
    correlation-1 index blocks (merged into single variables with
    `group_variance`; indices outside any group stay independent with
    `default_variance`).
    """

    mean: np.ndarray
    variances: np.ndarray | None = None
    groups: list[np.ndarray] | None = None
    group_variance: float = 1.0
    default_variance: float = 1.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        if self.variances is not None:
            self.variances = np.asarray(self.variances, dtype=float)
            if self.variances.shape != self.mean.shape:
                raise ValueError("variance vector must match the mean")
            if np.any(self.variances <= 0):
                raise ValueError("singular prior covariance rejected")
        if self.groups is not None:
            seen = np.zeros(self.mean.shape[0], dtype=bool)
            for g in self.groups:
                g = np.asarray(g)
                if seen[g].any():
                    raise ValueError("tied groups must be disjoint")
                seen[g] = True
        if self.group_variance <= 0 or self.default_variance <= 0:
            raise ValueError("singular prior covariance rejected")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def reduction(self):
        """(T, z_mean, z_var) with x = T z; T is identity for diagonal priors."""
        v = self.dim
        if self.groups is None:
            var = self.variances if self.variances is not None \
                else np.full(v, self.default_variance)
            return sp.identity(v, format="csr"), self.mean.copy(), var.copy()
        grouped = np.zeros(v, dtype=bool)
        cols, rows = [], []
        z_mean, z_var = [], []
        k = 0
        for g in self.groups:
            g = np.asarray(g, dtype=int)
            rows.extend(g.tolist())
            cols.extend([k] * len(g))
            z_mean.append(float(self.mean[g].mean()))
            z_var.append(self.group_variance)
            grouped[g] = True
            k += 1
        for i in np.flatnonzero(~grouped):
            rows.append(int(i))
            cols.append(k)
            z_mean.append(float(self.mean[i]))
            z_var.append(self.default_variance)
            k += 1
        t = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(v, k))
        return t, np.asarray(z_mean), np.asarray(z_var)


@dataclass
class MirlSolution:
    variant: str
    r1: RewardVector
    r2: RewardVector
    objective: float
    status: str
    violation: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _rows_through_d(ops: PolicyOperators, pre: sp.csr_matrix, t: sp.csr_matrix) -> np.ndarray:
    """Dense (rows x z) block of pre @ D @ T without any NM^2-wide dense
    intermediate: pre T + gamma (pre P) (I - gamma G)^-1 (B T)."""
    direct = (pre @ t).toarray()
    bt = (ops.b_sparse @ t).toarray()
    inner = ops.solve_ig(bt)
    pre_p = (pre @ ops.game.transitions).toarray()
    return direct + ops.game.discount * (pre_p @ inner)


def _filter_rows(a: np.ndarray, senses: np.ndarray):
    """Drop zero rows and exact duplicates (tied priors collapse whole
    blocks of rows onto each other, which degrades active-set factors)."""
    keep = np.abs(a).max(axis=1) > 0.0
    a, senses = a[keep], senses[keep]
    stacked = np.column_stack([senses.astype(float), a + 0.0])
    _, idx = np.unique(stacked, axis=0, return_index=True)
    idx.sort()
    return a[idx], senses[idx]


def _cone_qp(ops: PolicyOperators, fams, priors: list[GaussianPrior],
             targets_map, method: str = "auto"):
    """MAP point of independent Gaussian priors on a homogeneous cone.

    `fams`: (label, pre_rows, target, sense); `targets_map[target]` lists
    which reward variables a family's rows act on (identically).  Returns
    (x_list, objective, status, diagnostics).
    """
    reductions = [p.reduction() for p in priors]
    dims = [t.shape[1] for t, _, _ in reductions]
    offs = np.concatenate([[0], np.cumsum(dims)])
    k_total = int(offs[-1])
    n_rows = sum(f[1].shape[0] for f in fams)
    dense_ok = method != "admm" and (method == "dense"
                                     or n_rows * k_total <= DENSE_QP_ENTRY_LIMIT)
    z_mean = np.concatenate([m for _, m, _ in reductions])
    z_var = np.concatenate([v for _, _, v in reductions])
    res = None
    if dense_ok:
        blocks, senses = [], []
        for _, pre, target, sense in fams:
            k_f = pre.shape[0]
            block = np.zeros((k_f, k_total))
            for j in targets_map[target]:
                t_j, _, _ = reductions[j]
                block[:, offs[j]:offs[j + 1]] += _rows_through_d(ops, pre, t_j)
            blocks.append(block)
            senses.append(np.full(k_f, sense))
        a_z, senses = _filter_rows(np.vstack(blocks), np.concatenate(senses))
        qp = QuadraticProgram(None, -(z_mean / z_var), a_z, senses,
                              np.zeros(a_z.shape[0]), q_diag=1.0 / z_var)
        res = solve_qp(qp)
    if res is not None and res.ok:
        status = res.status
        z = res.x
        diag = {"route": "dense", "iterations": res.iterations,
                "active_set_size": len(res.active_set), "kkt": res.kkt}
    else:
        n = ops.n_states
        gamma = ops.game.discount
        n_vars = len(priors)
        v_off = k_total + np.arange(n_vars) * n
        total = k_total + n_vars * n
        rows = []
        lo_r, hi_r = [], []
        for _, pre, target, sense in fams:
            k_f = pre.shape[0]
            pre_p = gamma * (pre @ ops.game.transitions)
            cols = [None] * (2 * n_vars)
            for j in targets_map[target]:
                t_j, _, _ = reductions[j]
                cols[j] = pre @ t_j
                cols[n_vars + j] = pre_p
            block = sp.hstack([c if c is not None else sp.csr_matrix((k_f, dims[i] if i < n_vars else n))
                               for i, c in enumerate(cols)], format="csr")
            rows.append(block)
            if sense == LE:
                lo_r.append(np.full(k_f, -np.inf))
                hi_r.append(np.zeros(k_f))
            else:
                lo_r.append(np.zeros(k_f))
                hi_r.append(np.full(k_f, np.inf))
        eye_g = sp.csr_matrix(np.eye(n) - gamma * ops.g)
        for j in range(n_vars):
            t_j, _, _ = reductions[j]
            cols = [sp.csr_matrix((n, dims[i])) for i in range(n_vars)]
            cols[j] = -(ops.b_sparse @ t_j)
            vcols = [sp.csr_matrix((n, n)) for _ in range(n_vars)]
            vcols[j] = eye_g
            rows.append(sp.hstack(cols + vcols, format="csr"))
            lo_r.append(np.zeros(n))
            hi_r.append(np.zeros(n))
        a = sp.vstack(rows, format="csc")
        p_diag = np.concatenate([1.0 / z_var, np.zeros(n_vars * n)])
        q_lin = np.concatenate([-(z_mean / z_var), np.zeros(n_vars * n)])
        res = solve_qp_admm(p_diag, q_lin, a, np.concatenate(lo_r), np.concatenate(hi_r))
        status = res["status"]
        z = res["x"][:k_total]
        diag = {"route": "admm", "iterations": res["iterations"], "v_off": v_off.tolist()}
    xs = []
    for j in range(len(priors)):
        t_j, _, _ = reductions[j]
        xs.append(np.asarray(t_j @ z[offs[j]:offs[j + 1]]))
    obj = 0.5 * float(((z - z_mean) ** 2 / z_var).sum())
    return xs, obj, status, diag


def solve_map(variant: str, game: StochasticGame, policy: BiPolicy,
              prior1: GaussianPrior, prior2: GaussianPrior,
              ops: PolicyOperators | None = None, method: str = "auto") -> MirlSolution:
    """MAP reward pair under a uCS / advE / cooE assumption."""
    if variant not in MAP_VARIANTS:
        raise ValueError(f"solve_map handles {MAP_VARIANTS}, not {variant!r}")
    ops = ops or build_operators(game, policy)
    d = game.flat_dim
    for p in (prior1, prior2):
        if p.dim != d:
            raise ValueError("prior dimension must be N*M^2")
    fams = variant_families(variant, ops)
    targets_map = {"r1": [0], "r2": [1], "sum": [0, 1]}
    (x1, x2), obj, status, diag = _cone_qp(ops, fams, [prior1, prior2],
                                           targets_map, method)
    viol = max_violation(variant, game, policy, x1, x2, ops)
    return MirlSolution(variant,
                        RewardVector(x1, game.n_states, game.n_actions),
                        RewardVector(x2, game.n_states, game.n_actions),
                        obj, status, viol, diag)


def solve_reduced_gap(variant: str, game: StochasticGame, policy: BiPolicy,
                      lam: float = 1.0, beta_l1: float = 0.1, r_max: float = 1.0,
                      anchor1: np.ndarray | None = None,
                      anchor2: np.ndarray | None = None,
                      anchor_weight: float = 0.0,
                      ops: PolicyOperators | None = None,
                      lp_method: str = "auto") -> MirlSolution:
    """uCE / uNE recovery by the value-maximizing reduced-gap LP."""
    if variant not in GAP_VARIANTS:
        raise ValueError(f"solve_reduced_gap handles {GAP_VARIANTS}, not {variant!r}")
    if lam < 0 or beta_l1 < 0 or r_max <= 0:
        raise ValueError("lam, beta_l1 must be >= 0 and r_max > 0")
    ops = ops or build_operators(game, policy)
    n, d = game.n_states, game.flat_dim
    gamma = game.discount
    # discounted-visitation weights: column sums of 1' (I-gG)^-1 B
    w = ops.b_sparse.T @ ops.solve_ig_t(np.ones(n))
    anchor1 = np.zeros(d) if anchor1 is None else np.asarray(anchor1, float)
    anchor2 = np.zeros(d) if anchor2 is None else np.asarray(anchor2, float)
    # variables: [r1+, r1-, r2+, r2-, y]
    nv = 4 * d + n
    obj = np.concatenate([
        (1 + lam) * w + anchor_weight * anchor1 - beta_l1,
        -(1 + lam) * w - anchor_weight * anchor1 - beta_l1,
        (1 + lam) * w + anchor_weight * anchor2 - beta_l1,
        -(1 + lam) * w - anchor_weight * anchor2 - beta_l1,
        np.full(n, -lam),
    ])
    blocks = []
    senses = []
    for _, pre, target, sense in variant_families(variant, ops):
        dense = ops.propagate(pre)
        k = dense.shape[0]
        block = np.zeros((k, nv))
        if target == "r1":
            block[:, :d] = dense
            block[:, d:2 * d] = -dense
        elif target == "r2":
            block[:, 2 * d:3 * d] = dense
            block[:, 3 * d:4 * d] = -dense
        else:
            raise AssertionError("gap variants act on per-player rewards")
        blocks.append(block)
        senses.append(np.full(k, sense))
    d_mat = ops.d
    q_block = np.zeros((d, nv))
    q_block[:, :d] = d_mat
    q_block[:, d:2 * d] = -d_mat
    q_block[:, 2 * d:3 * d] = d_mat
    q_block[:, 3 * d:4 * d] = -d_mat
    q_block[np.arange(d), 4 * d + np.arange(d) % n] = -1.0
    blocks.append(q_block)
    senses.append(np.full(d, LE))
    w_rows = ops.solve_ig(ops.b)
    v_block = np.zeros((n, nv))
    v_block[:, :d] = w_rows
    v_block[:, d:2 * d] = -w_rows
    v_block[:, 2 * d:3 * d] = w_rows
    v_block[:, 3 * d:4 * d] = -w_rows
    v_block[:, 4 * d:] = -np.eye(n)
    blocks.append(v_block)
    senses.append(np.full(n, LE))
    a = np.vstack(blocks)
    senses = np.concatenate(senses)
    y_big = 4.0 * r_max / (1.0 - gamma)
    lo = np.concatenate([np.zeros(4 * d), np.full(n, -y_big)])
    hi = np.concatenate([np.full(4 * d, r_max), np.full(n, y_big)])
    res = solve_lp(LinearProgram(obj, a, senses, np.zeros(a.shape[0]), lo, hi),
                   method=lp_method)
    if not res.ok:
        raise RuntimeError(f"reduced-gap LP {res.status}; with box bounds the "
                           "program cannot be unbounded, check inputs")
    x = res.x
    r1 = x[:d] - x[d:2 * d]
    r2 = x[2 * d:3 * d] - x[3 * d:4 * d]
    y = x[4 * d:]
    viol = max_violation(variant, game, policy, r1, r2, ops)
    v_sum = w_rows @ (r1 + r2)
    diag = {"y": y, "v_sum": v_sum, "iterations": res.iterations,
            "gap": float(np.sum(y - v_sum))}
    return MirlSolution(variant,
                        RewardVector(r1, game.n_states, game.n_actions),
                        RewardVector(r2, game.n_states, game.n_actions),
                        res.objective, res.status, viol, diag)


def reduced_gap(game: StochasticGame, policy_ce: BiPolicy, r1: RewardVector,
                r2: RewardVector, ucs_policy: BiPolicy) -> float:
    """Total shortfall of playing the cooperative action once, then the
    given policy, relative to full cooperative play: the sum over states
    of V*(s) - Q_sum(s, a*(s))."""
    ops_star = build_operators(game, ucs_policy)
    v_star = total_game_value(game, ucs_policy, r1, r2, ops_star)
    total = RewardVector(r1.values + r2.values, game.n_states, game.n_actions)
    q_sum = q_vector(game, policy_ce, total)
    local = ops_star.b_sparse @ q_sum  # Q_sum at the cooperative pair per state
    return float(np.sum(v_star - local))


def solve_baseline(kind: str, game: StochasticGame, policy: BiPolicy,
                   player: int | None = None, prior: GaussianPrior | None = None,
                   lam: float = 1.0, r_max: float = 1.0,
                   ops: PolicyOperators | None = None,
                   method: str = "auto") -> MirlSolution:
    """Reference methods: dmirl (margin LP), birl (one-player reduction),
    zerosum (single-reward QP)."""
    ops = ops or build_operators(game, policy)
    n, m = game.n_states, game.n_actions
    d = game.flat_dim
    zeros = RewardVector(np.zeros(d), n, m)
    if kind == "dmirl":
        if player not in (1, 2):
            raise ValueError("dmirl needs player 1 or 2")
        lp, sl = build_dmirl_program(game, policy, player, lam, r_max, ops)
        res = solve_lp(lp, method=method if method != "admm" else "auto")
        if not res.ok:
            raise RuntimeError(f"dmirl LP {res.status}")
        r = res.x[sl["pos"]] - res.x[sl["neg"]]
        rv = RewardVector(r, n, m)
        sol = (rv, zeros) if player == 1 else (zeros, rv)
        viol = float(np.maximum(ops.propagate_apply(
            _player_family(ops, player), r), 0.0).max(initial=0.0))
        return MirlSolution("dmirl", sol[0], sol[1], res.objective, res.status,
                            viol, {"player": player, "t": res.x[sl["t"]]})
    if kind == "birl":
        if player not in (1, 2):
            raise ValueError("birl needs player 1 or 2")
        if prior is None or prior.dim != n * m:
            raise ValueError("birl needs a prior over the N*M own-action layout")
        cs = build_birl_constraints(game, policy, player, ops)
        t, z_mean, z_var = prior.reduction()
        a_z = cs.matrix @ t.toarray() if t.shape[1] != t.shape[0] else cs.matrix
        a_z, senses = _filter_rows(np.asarray(a_z), cs.senses)
        qp = QuadraticProgram(None, -(z_mean / z_var), a_z, senses,
                              np.zeros(a_z.shape[0]), q_diag=1.0 / z_var)
        res = solve_qp(qp)
        z = res.x if res.x is not None else np.zeros(t.shape[1])
        r_own = np.asarray(t @ z)
        viol = float(np.maximum(-(cs.matrix @ r_own), 0.0).max(initial=0.0))
        lifted = lift_own_action_reward(r_own, player, n, m)
        rv = RewardVector(lifted, n, m)
        sol = (rv, zeros) if player == 1 else (zeros, rv)
        obj = 0.5 * float(((z - z_mean) ** 2 / z_var).sum())
        return MirlSolution("birl", sol[0], sol[1], obj, res.status, viol,
                            {"player": player, "r_own": r_own})
    if kind == "zerosum":
        if prior is None or prior.dim != d:
            raise ValueError("zerosum needs a prior over the joint layout")
        fams = [("own_p1", _player_family(ops, 1), "r", LE),
                ("harm_p2", _player_family(ops, 2), "r", GE)]
        (x,), obj, status, diag = _cone_qp(ops, fams, [prior], {"r": [0]}, method)
        viol = max(
            float(np.maximum(ops.propagate_apply(_player_family(ops, 1), x), 0.0).max(initial=0.0)),
            float(np.maximum(-ops.propagate_apply(_player_family(ops, 2), x), 0.0).max(initial=0.0)),
        )
        return MirlSolution("zerosum", RewardVector(x, n, m),
                            RewardVector(-x, n, m), obj, status, viol, diag)
    raise ValueError(f"unknown baseline {kind!r}")


def _player_family(ops: PolicyOperators, player: int) -> sp.csr_matrix:
    from .mirl_constraints import _pinned_family
    return _pinned_family(ops, player)
