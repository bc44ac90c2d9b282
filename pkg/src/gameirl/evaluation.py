"""Metrics, benchmark priors, Monte Carlo tournaments, and the
replication pipelines that tie forward learning to reward recovery.

The normalized error metric rescales each recovered vector to [0, 1] by
its own min/max before comparing, so recovery is judged up to positive
affine transforms; the value-gap metric instead re-plans on the
recovered rewards and measures the total-game-value shortfall under the
true rewards.  Tournament evaluation trains each agent's safety-level
policy from its own recovered reward and plays full rounds on the
compiled dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .environments.base import CompiledEnvironment
from .environments.grid import _move as _grid_move
from .environments.soccer import COLS, KICK, PSS1, PSS2, ROWS, SoccerSpec, compile_soccer
from .game_core import BiPolicy, RewardVector, build_operators, total_game_value
from .inverse_solvers import (GaussianPrior, MirlSolution, solve_baseline,
                              solve_map, solve_reduced_gap)
from .multi_q import MultiQConfig, foe_policy, run_multi_q


def nrmse(r1_rec, r2_rec, r1_true, r2_true) -> float:
    """Normalized root mean squared recovery error.

    Each recovered vector is first rescaled to [0, 1] by its own range
    (an error if the range is empty), then compared to the true vector
    with the 2-norm under the radical, and the two players averaged.
    Invariant to positive affine transforms of the recovered rewards.
    """
    parts = []
    for rec, true in ((r1_rec, r1_true), (r2_rec, r2_true)):
        rec = rec.values if isinstance(rec, RewardVector) else np.asarray(rec, float)
        true = true.values if isinstance(true, RewardVector) else np.asarray(true, float)
        lo, hi = rec.min(), rec.max()
        if hi - lo <= 0.0:
            raise ValueError("constant recovered vector: normalization is degenerate")
        norm = (rec - lo) / (hi - lo)
        parts.append(np.sqrt(np.linalg.norm(norm - true) / true.shape[0]))
    return 0.5 * float(sum(parts))


def value_gap(env: CompiledEnvironment, scenario: str, r1_rec, r2_rec,
              concept: str = "uCS", sweeps: int = 600) -> float:
    """Mean squared total-game-value shortfall of re-planning on the
    recovered rewards.

    Player 1 keeps the true-reward equilibrium side; player 2's side is
    recomputed from the recovered pair; both are evaluated under the true
    rewards.  Perfect recovery (up to positive scale) gives 0.
    """
    r1_true, r2_true = env.reward_pair(scenario)
    cfg = MultiQConfig(concept=concept, iterations=0, refine_sweeps=sweeps)
    _, pol_true = run_multi_q(env, r1_true, r2_true, cfg)
    rec1 = r1_rec if isinstance(r1_rec, RewardVector) else RewardVector(
        np.asarray(r1_rec, float), env.n_states, env.n_actions)
    rec2 = r2_rec if isinstance(r2_rec, RewardVector) else RewardVector(
        np.asarray(r2_rec, float), env.n_states, env.n_actions)
    _, pol_rec = run_multi_q(env, rec1, rec2, cfg)
    combined = BiPolicy.independent(pol_true.pi1, pol_rec.pi2)
    v_true = total_game_value(env.game, pol_true, r1_true, r2_true)
    v_rec = total_game_value(env.game, combined, r1_true, r2_true)
    return float(np.mean((v_true - v_rec) ** 2))


# ---------------------------------------------------------------------------
# benchmark priors
# ---------------------------------------------------------------------------


def scoring_event_support(env: CompiledEnvironment, player: int,
                          scenario: str) -> np.ndarray:
    """Entries where the scenario's reward event can fire for the player,
    derived from the public rules plus the known outcome branches."""
    if scenario == "coordination":
        both = np.zeros(env.game.flat_dim, dtype=bool)
        for k, branches in enumerate(env.outcomes):
            both[k] = any(s1 and s2 for _, _, s1, s2 in branches)
        return both
    return env.score_probability(player) > 0


def grid_prior(env: CompiledEnvironment, player: int, scenario: str = "basic",
               cross_effect: float = 0.001, support_var: float = 1.0,
               off_var: float = 0.05) -> GaussianPrior:
    """Gaussian prior for the grid games: half-unit mass on the entries
    where the scenario's scoring event can fire (readable from the public
    rules and dynamics), a small cross-effect mass where the opponent
    sits next to the player's goal, diagonal covariance with tight
    variance off the support."""
    support = scoring_event_support(env, player, scenario)
    mean = 0.5 * support.astype(float)
    if cross_effect:
        spec = env.meta["spec"]
        states = env.meta["states"]
        goals_own = set(map(tuple, spec.goals1 if player == 1 else spec.goals2))
        n, m = env.n_states, env.n_actions
        for si, (c1, c2) in enumerate(states):
            other = c2 if player == 1 else c1
            near = any(_grid_move(spec, other, a) in goals_own for a in range(m))
            if near and not (c1 in goals_own or c2 in goals_own):
                for a1 in range(m):
                    for a2 in range(m):
                        k = env.flat(si, a1, a2)
                        if not support[k]:
                            mean[k] += cross_effect
    variances = np.where(support, support_var, off_var)
    return GaussianPrior(mean, variances=variances)


def goal_anchor(env: CompiledEnvironment, player: int) -> np.ndarray:
    """Unit anchor pattern on the player's scoring-event support."""
    return (env.score_probability(player) > 0).astype(float)


def _soccer_cells(env):
    states = env.meta["states"]
    return states


_FRONT1 = {0, 5, 10, 15}   # 0-based cells 1, 6, 11, 16 (left column)
_FRONT2 = {4, 9, 14, 19}   # cells 5, 10, 15, 20 (right column)


def soccer_prior(env: CompiledEnvironment, mean_kind: str, cov_kind: str,
                 player: int) -> GaussianPrior:
    """The six benchmark priors for the soccer duel, per player.

    Mean settings: WM scores possession only (+-0.5); MM adds +-0.5 on
    every shot entry and +-1 when the possessing player stands in the
    column fronting its goals; SM restricts the position mass to the goal
    cells themselves.  Covariances: WC is the identity; SC ties each
    player's shot entries across states with the same shooting position,
    and all of a state's non-shot entries together.
    """
    states = _soccer_cells(env)
    spec: SoccerSpec = env.meta["spec"]
    n, m = env.n_states, env.n_actions
    d = env.game.flat_dim
    goals_own = {c - 1 for c in (spec.goals1 if player == 1 else spec.goals2)}
    front_own = _FRONT1 if player == 1 else _FRONT2
    front_other = _FRONT2 if player == 1 else _FRONT1
    goals_other = {c - 1 for c in (spec.goals2 if player == 1 else spec.goals1)}
    del goals_other
    mean = np.zeros(d)
    for si, (p1, p2, ball) in enumerate(states):
        own_pos, other_pos = (p1, p2) if player == 1 else (p2, p1)
        has_ball = (ball == 0) == (player == 1)
        for a1 in range(m):
            for a2 in range(m):
                k = env.flat(si, a1, a2)
                a_own = a1 if player == 1 else a2
                a_other = a2 if player == 1 else a1
                if mean_kind == "WM":
                    mean[k] = 0.5 if has_ball else -0.5
                    continue
                if has_ball and a_own == KICK:
                    mean[k] = 0.5
                elif (not has_ball) and a_other == KICK:
                    mean[k] = -0.5
                elif mean_kind == "MM":
                    if has_ball and own_pos in front_own:
                        mean[k] = 1.0
                    elif (not has_ball) and other_pos in front_other:
                        mean[k] = -1.0
                else:  # SM
                    if has_ball and own_pos in goals_own:
                        mean[k] = 1.0
                    elif (not has_ball) and other_pos in {c - 1 for c in
                                                          (spec.goals2 if player == 1 else spec.goals1)}:
                        mean[k] = -1.0
    if mean_kind not in ("WM", "MM", "SM"):
        raise ValueError(f"unknown mean setting {mean_kind!r}")
    if cov_kind == "WC":
        return GaussianPrior(mean, variances=np.ones(d))
    if cov_kind != "SC":
        raise ValueError(f"unknown covariance setting {cov_kind!r}")
    shot_groups: dict[int, list[int]] = {c: [] for c in range(ROWS * COLS)}
    state_groups: list[list[int]] = []
    for si, (p1, p2, ball) in enumerate(states):
        own_pos = p1 if player == 1 else p2
        has_ball = (ball == 0) == (player == 1)
        bucket = []
        for a1 in range(m):
            for a2 in range(m):
                k = env.flat(si, a1, a2)
                a_own = a1 if player == 1 else a2
                if has_ball and a_own == KICK:
                    shot_groups[own_pos].append(k)
                else:
                    bucket.append(k)
        state_groups.append(bucket)
    groups = [np.asarray(g) for g in state_groups]
    groups += [np.asarray(v) for c, v in sorted(shot_groups.items()) if v]
    return GaussianPrior(mean, groups=groups, group_variance=1.0,
                         default_variance=1.0)


def soccer_prior_own_action(env: CompiledEnvironment, mean_kind: str,
                            cov_kind: str, player: int) -> GaussianPrior:
    """Projection of a soccer prior onto the (state, own action) layout
    used by the one-player reduction."""
    states = _soccer_cells(env)
    spec: SoccerSpec = env.meta["spec"]
    n, m = env.n_states, env.n_actions
    goals_own = {c - 1 for c in (spec.goals1 if player == 1 else spec.goals2)}
    front_own = _FRONT1 if player == 1 else _FRONT2
    mean = np.zeros(n * m)
    for si, (p1, p2, ball) in enumerate(states):
        own_pos = p1 if player == 1 else p2
        has_ball = (ball == 0) == (player == 1)
        for a in range(m):
            k = a * n + si
            if mean_kind == "WM":
                mean[k] = 0.5 if has_ball else -0.5
            elif has_ball and a == KICK:
                mean[k] = 0.5
            elif mean_kind == "MM" and has_ball and own_pos in front_own:
                mean[k] = 1.0
            elif mean_kind == "SM" and has_ball and own_pos in goals_own:
                mean[k] = 1.0
    if cov_kind == "WC":
        return GaussianPrior(mean, variances=np.ones(n * m))
    shot_groups: dict[int, list[int]] = {c: [] for c in range(ROWS * COLS)}
    state_groups: list[list[int]] = [[] for _ in range(n)]
    for si, (p1, p2, ball) in enumerate(states):
        own_pos = p1 if player == 1 else p2
        has_ball = (ball == 0) == (player == 1)
        for a in range(m):
            k = a * n + si
            if has_ball and a == KICK:
                shot_groups[own_pos].append(k)
            else:
                state_groups[si].append(k)
    groups = [np.asarray(g) for g in state_groups if g]
    groups += [np.asarray(v) for c, v in sorted(shot_groups.items()) if v]
    return GaussianPrior(mean, groups=groups, group_variance=1.0,
                         default_variance=1.0)


# ---------------------------------------------------------------------------
# grid-game recovery pipelines (the two summary tables)
# ---------------------------------------------------------------------------

GRID_FORWARD_ITERATIONS = 20_000
GRID_REFINE_SWEEPS = 600


def forward_policy(env: CompiledEnvironment, concept: str, scenario: str,
                   seed: int = 0, iterations: int = GRID_FORWARD_ITERATIONS,
                   refine_sweeps: int = GRID_REFINE_SWEEPS):
    r1, r2 = env.reward_pair(scenario)
    cfg = MultiQConfig(concept=concept, iterations=iterations, seed=seed,
                       refine_sweeps=refine_sweeps)
    return run_multi_q(env, r1, r2, cfg)


def gap_hyperparameters(ops) -> dict:
    """Anchored reduced-gap weights, auto-scaled so the L1 penalty
    dominates every discounted-visitation coefficient and the anchor
    bonus dominates both (recorded in emitted configs)."""
    w = ops.b_sparse.T @ ops.solve_ig_t(np.ones(ops.n_states))
    lam = 1.0
    beta = (1 + lam) * float(w.max()) + 0.5
    eta = beta + 10.0 * (1 + lam) * float(w.max()) + 1.0
    return {"lam": lam, "beta_l1": beta, "anchor_weight": eta, "r_max": 1.0}


def recover_rewards(env: CompiledEnvironment, concept: str, policy: BiPolicy,
                    scenario: str) -> MirlSolution:
    """Matched-variant recovery with the benchmark priors/anchors."""
    if concept in ("uCS", "advE", "cooE"):
        pr1 = grid_prior(env, 1, scenario)
        pr2 = grid_prior(env, 2, scenario)
        return solve_map(concept, env.game, policy, pr1, pr2)
    ops = build_operators(env.game, policy)
    hyper = gap_hyperparameters(ops)
    return solve_reduced_gap(concept, env.game, policy,
                             lam=hyper["lam"], beta_l1=hyper["beta_l1"],
                             r_max=hyper["r_max"],
                             anchor1=goal_anchor(env, 1),
                             anchor2=goal_anchor(env, 2),
                             anchor_weight=hyper["anchor_weight"], ops=ops)


def baseline_rewards(env: CompiledEnvironment, policy: BiPolicy, kind: str,
                     scenario: str) -> tuple[np.ndarray, np.ndarray]:
    """IRL / decentralized baselines run per player on the same policy.

    Both baselines assume independent strategies; a correlated observed
    policy is reduced to its marginal product (the baselines cannot
    represent the correlation either way)."""
    if not policy.is_product:
        policy = BiPolicy.independent(*policy.marginals())
    n, m = env.n_states, env.n_actions
    if kind == "dmirl":
        s1 = solve_baseline("dmirl", env.game, policy, player=1)
        s2 = solve_baseline("dmirl", env.game, policy, player=2)
        return s1.r1.values, s2.r2.values
    if kind == "birl":
        out = []
        for player in (1, 2):
            prior = _grid_shaping_prior(env, player)
            sol = solve_baseline("birl", env.game, policy, player=player, prior=prior)
            out.append(sol.r1.values if player == 1 else sol.r2.values)
        return out[0], out[1]
    raise ValueError(f"unknown baseline {kind!r}")


def _grid_shaping_prior(env: CompiledEnvironment, player: int) -> GaussianPrior:
    """Distance-shaped own-action prior for the one-player reduction:
    moves that close the gap to the player's goal look better.  The usual
    practitioner's guess, deliberately weaker than the event support."""
    spec = env.meta["spec"]
    states = env.meta["states"]
    n, m = env.n_states, env.n_actions
    goals = list(map(tuple, spec.goals1 if player == 1 else spec.goals2))
    gamma = env.game.discount
    mean = np.zeros(n * m)
    for si, (c1, c2) in enumerate(states):
        own = c1 if player == 1 else c2
        for a in range(m):
            nxt = _grid_move(spec, own, a)
            dist = min(abs(nxt[0] - g[0]) + abs(nxt[1] - g[1]) for g in goals)
            mean[a * n + si] = 0.5 * gamma ** dist
    return GaussianPrior(mean, variances=np.ones(n * m))


@dataclass
class RecoveryReport:
    env_name: str
    concept: str
    nrmse_mirl: float
    nrmse_irl: float
    nrmse_dmirl: float
    violation: float

    def row(self):
        return [self.env_name, self.concept, self.nrmse_mirl, self.nrmse_irl,
                self.nrmse_dmirl, self.violation]


def table1_cell(env: CompiledEnvironment, concept: str, seed: int = 0) -> RecoveryReport:
    scenario = "coordination" if concept == "cooE" else "basic"
    r1, r2 = env.reward_pair(scenario)
    _, policy = forward_policy(env, concept, scenario, seed=seed)
    sol = recover_rewards(env, concept, policy, scenario)
    err = nrmse(sol.r1, sol.r2, r1, r2)
    irl1, irl2 = baseline_rewards(env, policy, "birl", scenario)
    dm1, dm2 = baseline_rewards(env, policy, "dmirl", scenario)
    err_irl = nrmse(irl1, irl2, r1.values, r2.values)
    err_dm = nrmse(dm1, dm2, r1.values, r2.values)
    return RecoveryReport(env.name, concept, err, err_irl, err_dm, sol.violation)


def table2_cell(env: CompiledEnvironment, seed: int = 0) -> dict:
    """Total-game-value comparison for the cooperative recovery task."""
    scenario = "basic"
    r1, r2 = env.reward_pair(scenario)
    _, policy = forward_policy(env, "uCS", scenario, seed=seed)
    sol = recover_rewards(env, "uCS", policy, scenario)
    gap_mirl = value_gap(env, scenario, sol.r1, sol.r2)
    irl1, irl2 = baseline_rewards(env, policy, "birl", scenario)
    gap_irl = value_gap(env, scenario, irl1, irl2)
    dm1, dm2 = baseline_rewards(env, policy, "dmirl", scenario)
    gap_dmirl = value_gap(env, scenario, dm1, dm2)
    return {"env": env.name, "uCS-MIRL": gap_mirl, "IRL": gap_irl, "dMIRL": gap_dmirl}


# ---------------------------------------------------------------------------
# incomplete-policy imputation study
# ---------------------------------------------------------------------------


def imputation_study(env: CompiledEnvironment, k_list=(0, 1, 5, 10, 15),
                     n_masks: int = 10, seed: int = 0) -> dict:
    """uNE recovery quality as observed bi-strategies are replaced by
    uniform imputations at k randomly chosen board states.

    Returns {k: (mean nrmse, sd nrmse)} over `n_masks` masks per k."""
    scenario = "basic"
    r1, r2 = env.reward_pair(scenario)
    _, policy = forward_policy(env, "uNE", scenario)
    ops = build_operators(env.game, policy)
    hyper = gap_hyperparameters(ops)
    anchors = (goal_anchor(env, 1), goal_anchor(env, 2))
    rng = np.random.default_rng(seed)
    out = {}
    for k in k_list:
        errs = []
        n_rep = 1 if k == 0 else n_masks
        for _ in range(n_rep):
            masked = rng.choice(env.n_board_states, size=k, replace=False) if k else []
            pi1 = policy.pi1.copy()
            pi2 = policy.pi2.copy()
            for s in masked:
                pi1[s] = 1.0 / env.n_actions
                pi2[s] = 1.0 / env.n_actions
            imputed = BiPolicy.independent(pi1, pi2)
            sol = solve_reduced_gap("uNE", env.game, imputed,
                                    lam=hyper["lam"], beta_l1=hyper["beta_l1"],
                                    r_max=hyper["r_max"], anchor1=anchors[0],
                                    anchor2=anchors[1],
                                    anchor_weight=hyper["anchor_weight"])
            errs.append(nrmse(sol.r1, sol.r2, r1, r2))
        errs = np.asarray(errs)
        out[int(k)] = (float(errs.mean()), float(errs.std()))
    return out


# ---------------------------------------------------------------------------
# soccer tournaments
# ---------------------------------------------------------------------------


@dataclass
class TournamentConfig:
    pairs: list = field(default_factory=lambda: [("C", "D")])
    betas: list = field(default_factory=lambda: [0.4])
    rounds: int = 5000
    max_steps: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("need at least one round")


@dataclass
class TournamentResult:
    rates: dict  # (left, right, beta) -> {"win": %, "loss": %, "tie": %}

    def check(self):
        for key, r in self.rates.items():
            total = r["win"] + r["loss"] + r["tie"]
            assert abs(total - 100.0) <= 0.01, (key, total)


def play_rounds(env: CompiledEnvironment, strat1: np.ndarray, strat2: np.ndarray,
                rounds: int, max_steps: int, rng) -> tuple[int, int, int]:
    """Simulate rounds under fixed per-state strategies; capped rounds tie."""
    cum1 = np.cumsum(strat1, axis=1)
    cum2 = np.cumsum(strat2, axis=1)
    m = strat1.shape[1]
    wins = losses = ties = 0
    for _ in range(rounds):
        s = env.sample_initial(rng)
        outcome = 2
        for _ in range(max_steps):
            a1 = int(np.searchsorted(cum1[s], rng.random()))
            a2 = int(np.searchsorted(cum2[s], rng.random()))
            a1 = min(a1, m - 1)
            a2 = min(a2, m - 1)
            s, (sc1, sc2), terminal = env.step(s, a1, a2, rng)
            if terminal:
                outcome = 0 if sc1 else (1 if sc2 else 2)
                break
        if outcome == 0:
            wins += 1
        elif outcome == 1:
            losses += 1
        else:
            ties += 1
    return wins, losses, ties


def run_tournament(cfg: TournamentConfig, agent_rewards: dict,
                   discount: float = 0.9) -> TournamentResult:
    """Round-robin of the configured pairs across ball-exchange settings.

    `agent_rewards[name] = (r_side1, r_side2)` gives the flat reward the
    agent would use on each side; the left agent of a pair plays side 1.
    Policies are safety-level solves on the per-beta dynamics.
    """
    rates = {}
    seeds = np.random.SeedSequence(cfg.seed)
    policy_cache: dict = {}
    for beta in cfg.betas:
        env = compile_soccer(SoccerSpec(beta_exchange=beta, discount=discount))
        for left, right in cfg.pairs:
            key1 = (left, 1, beta)
            if key1 not in policy_cache:
                policy_cache[key1], _ = foe_policy(env, agent_rewards[left][0], 1)
            key2 = (right, 2, beta)
            if key2 not in policy_cache:
                policy_cache[key2], _ = foe_policy(env, agent_rewards[right][1], 2)
            child = np.random.default_rng(
                np.random.SeedSequence(entropy=cfg.seed,
                                       spawn_key=(cfg.betas.index(beta),
                                                  cfg.pairs.index((left, right)))))
            w, l, t = play_rounds(env, policy_cache[key1], policy_cache[key2],
                                  cfg.rounds, cfg.max_steps, child)
            total = cfg.rounds / 100.0
            rates[(left, right, beta)] = {"win": w / total, "loss": l / total,
                                          "tie": t / total}
    res = TournamentResult(rates)
    res.check()
    return res
