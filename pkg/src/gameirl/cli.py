"""Config-driven experiment runner.

Subcommands: forward (learn an equilibrium bi-policy), inverse (recover
rewards from a policy artifact), eval (recovery metrics), tournament
(soccer Monte Carlo), impute (incomplete-policy study), reproduce (chain
the full benchmark pipelines).  Flags override config-file fields which
override defaults; every run writes its resolved config plus a content
hash next to its artifacts.

Exit codes: 0 success, 1 solver failure, 2 input error.  The
GAMEIRL_WORKERS environment variable caps worker processes for the
tournament grid (default 1, fully serial).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .environments.grid import compile_grid, gg1_spec, gg2_spec
from .environments.soccer import SoccerSpec, compile_soccer
from .game_core import (policy_from_json, policy_to_json, reward_from_json,
                        reward_to_json, RewardVector)
from .inverse_solvers import solve_baseline, solve_map, solve_reduced_gap
from .mirl_constraints import max_violation
from .multi_q import MultiQConfig, run_multi_q

ENVS = ("gg1", "gg2", "soccer")


class InputError(Exception):
    pass


def make_env(name: str, beta: float = 0.6, discount: float = 0.9):
    if name == "gg1":
        return compile_grid(gg1_spec(discount))
    if name == "gg2":
        return compile_grid(gg2_spec(discount))
    if name == "soccer":
        return compile_soccer(SoccerSpec(beta_exchange=beta, discount=discount))
    raise InputError(f"unknown environment {name!r}; choose from {ENVS}")


def default_scenario(env_name: str, concept: str) -> str:
    if env_name == "soccer":
        return "duel"
    return "coordination" if concept == "cooE" else "basic"


def _resolve(args: argparse.Namespace, keys: list[str]) -> dict:
    """flags > config file > defaults (the parser's defaults are None)."""
    merged = {}
    file_cfg = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        file_cfg = json.loads(path.read_text())
    for key in keys:
        flag = getattr(args, key, None)
        merged[key] = flag if flag is not None else file_cfg.get(key)
    return merged


def _emit_config(outdir: Path, command: str, cfg: dict) -> str:
    outdir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **{k: cfg[k] for k in sorted(cfg)}}
    text = json.dumps(doc, sort_keys=True, default=str)
    digest = hashlib.sha256(text.encode()).hexdigest()[:16]
    doc["config_hash"] = digest
    (outdir / "resolved_config.json").write_text(json.dumps(doc, sort_keys=True,
                                                            default=str, indent=1))
    return digest


def _write_csv(path: Path, header: list[str], rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_forward(args) -> int:
    cfg = _resolve(args, ["env", "concept", "scenario", "seed", "iterations",
                          "refine", "beta", "out", "diagnostics"])
    if not cfg["env"] or not cfg["concept"]:
        raise InputError("forward needs --env and --concept")
    cfg.setdefault("seed", None)
    seed = int(cfg["seed"] or 0)
    iters = int(cfg["iterations"] if cfg["iterations"] is not None else 20000)
    refine = int(cfg["refine"] if cfg["refine"] is not None else 600)
    beta = float(cfg["beta"] if cfg["beta"] is not None else 0.6)
    out = Path(cfg["out"] or f"out_forward_{cfg['env']}_{cfg['concept']}")
    env = make_env(cfg["env"], beta)
    scenario = cfg["scenario"] or default_scenario(cfg["env"], cfg["concept"])
    cfg["scenario"] = scenario
    digest = _emit_config(out, "forward", cfg)
    r1, r2 = env.reward_pair(scenario)
    mq = MultiQConfig(concept=cfg["concept"], iterations=iters, seed=seed,
                      refine_sweeps=refine,
                      diagnostics_path=str(out / "diagnostics.csv")
                      if cfg["diagnostics"] else None)
    tables, policy = run_multi_q(env, r1, r2, mq)
    (out / "policy.json").write_text(policy_to_json(policy))
    qdoc = {"schema": "qtables_v1", "q1": tables.q1.tolist(), "q2": tables.q2.tolist()}
    (out / "qtables.json").write_text(json.dumps(qdoc))
    viol = max_violation(cfg["concept"] if cfg["concept"] in
                         ("uCS", "advE", "cooE", "uNE", "uCE") else "advE",
                         env.game, policy, r1.values, r2.values)
    print(f"forward {cfg['env']}/{cfg['concept']} scenario={scenario} "
          f"kind={policy.kind} self-consistency={viol:.2e} hash={digest}")
    print(f"artifacts in {out}")
    return 0


def _load_policy(path) -> object:
    p = Path(path)
    if not p.exists():
        raise InputError(f"policy artifact not found: {p}")
    return policy_from_json(p.read_text())


def cmd_inverse(args) -> int:
    cfg = _resolve(args, ["env", "variant", "policy", "scenario", "beta", "out",
                          "baseline", "lam", "beta_l1", "r_max", "prior",
                          "compare_true"])
    if not cfg["env"] or not cfg["policy"]:
        raise InputError("inverse needs --env and --policy")
    if not cfg["variant"] and not cfg["baseline"]:
        raise InputError("inverse needs --variant or --baseline")
    beta = float(cfg["beta"] if cfg["beta"] is not None else 0.6)
    env = make_env(cfg["env"], beta)
    policy = _load_policy(cfg["policy"])
    out = Path(cfg["out"] or f"out_inverse_{cfg['env']}")
    digest = _emit_config(out, "inverse", cfg)
    scenario = cfg["scenario"] or default_scenario(cfg["env"], cfg["variant"] or "")
    if cfg["baseline"]:
        kind = cfg["baseline"]
        if kind == "zerosum":
            mean_kind, cov_kind = (cfg["prior"] or "MM:SC").split(":")
            prior = (ev.soccer_prior(env, mean_kind, cov_kind, 1)
                     if cfg["env"] == "soccer" else ev.grid_prior(env, 1, scenario))
            sol = solve_baseline("zerosum", env.game, policy, prior=prior)
        elif kind == "dmirl":
            sol = solve_baseline("dmirl", env.game, policy, player=2)
        elif kind == "birl":
            if cfg["env"] == "soccer":
                mean_kind, cov_kind = (cfg["prior"] or "MM:SC").split(":")
                prior = ev.soccer_prior_own_action(env, mean_kind, cov_kind, 2)
            else:
                r1b, r2b = ev.baseline_rewards(env, policy, "birl", scenario)
                sol = None
                rec = (r1b, r2b)
            if cfg["env"] == "soccer":
                sol = solve_baseline("birl", env.game, policy, player=2, prior=prior)
        else:
            raise InputError(f"unknown baseline {kind!r}")
        if sol is not None:
            rec = (sol.r1.values, sol.r2.values)
        label = kind
        objective = sol.objective if sol is not None else float("nan")
        status = sol.status if sol is not None else "optimal"
        violation = sol.violation if sol is not None else float("nan")
    else:
        variant = cfg["variant"]
        if variant in ("uCS", "advE", "cooE"):
            if cfg["env"] == "soccer":
                mean_kind, cov_kind = (cfg["prior"] or "MM:SC").split(":")
                pr1 = ev.soccer_prior(env, mean_kind, cov_kind, 1)
                pr2 = ev.soccer_prior(env, mean_kind, cov_kind, 2)
            else:
                pr1 = ev.grid_prior(env, 1, scenario)
                pr2 = ev.grid_prior(env, 2, scenario)
            sol = solve_map(variant, env.game, policy, pr1, pr2)
        elif variant in ("uNE", "uCE"):
            from .game_core import build_operators
            ops = build_operators(env.game, policy)
            hyper = ev.gap_hyperparameters(ops)
            if cfg["lam"] is not None:
                hyper["lam"] = float(cfg["lam"])
            if cfg["beta_l1"] is not None:
                hyper["beta_l1"] = float(cfg["beta_l1"])
            if cfg["r_max"] is not None:
                hyper["r_max"] = float(cfg["r_max"])
            sol = solve_reduced_gap(variant, env.game, policy, lam=hyper["lam"],
                                    beta_l1=hyper["beta_l1"], r_max=hyper["r_max"],
                                    anchor1=ev.goal_anchor(env, 1),
                                    anchor2=ev.goal_anchor(env, 2),
                                    anchor_weight=hyper["anchor_weight"], ops=ops)
        else:
            raise InputError(f"unknown variant {variant!r}")
        rec = (sol.r1.values, sol.r2.values)
        label = variant
        objective, status, violation = sol.objective, sol.status, sol.violation
        if status != "optimal":
            print(f"solver status: {status}", file=sys.stderr)
            return 1
    doc = {"schema": "mirl_solution_v1", "variant": label,
           "objective": objective, "status": status, "violation": violation,
           "config_hash": digest,
           "r1": reward_to_json(RewardVector(rec[0], env.n_states, env.n_actions)),
           "r2": reward_to_json(RewardVector(rec[1], env.n_states, env.n_actions))}
    (out / "solution.json").write_text(json.dumps(doc))
    line = f"inverse {label} on {cfg['env']}: status={status} violation={violation:.2e}"
    if cfg["compare_true"]:
        t1, t2 = env.reward_pair(scenario)
        err = ev.nrmse(rec[0], rec[1], t1, t2)
        line += f" nrmse={err:.6g}"
    print(line)
    print(f"artifacts in {out}")
    return 0


def _load_solution(path, env):
    p = Path(path)
    if not p.exists():
        raise InputError(f"solution artifact not found: {p}")
    doc = json.loads(p.read_text())
    r1 = reward_from_json(doc["r1"])
    r2 = reward_from_json(doc["r2"])
    return r1, r2


def cmd_eval(args) -> int:
    cfg = _resolve(args, ["env", "metric", "solution", "scenario", "beta", "out"])
    if not cfg["env"] or not cfg["metric"] or not cfg["solution"]:
        raise InputError("eval needs --env, --metric and --solution")
    env = make_env(cfg["env"], float(cfg["beta"] if cfg["beta"] is not None else 0.6))
    scenario = cfg["scenario"] or default_scenario(cfg["env"], "")
    r1, r2 = _load_solution(cfg["solution"], env)
    t1, t2 = env.reward_pair(scenario)
    out = Path(cfg["out"] or "out_eval")
    _emit_config(out, "eval", cfg)
    if cfg["metric"] == "nrmse":
        value = ev.nrmse(r1, r2, t1, t2)
    elif cfg["metric"] == "value_gap":
        value = ev.value_gap(env, scenario, r1, r2)
    else:
        raise InputError(f"unknown metric {cfg['metric']!r}")
    _write_csv(out / "eval.csv", ["metric", "value"], [[cfg["metric"], value]])
    print(f"{cfg['metric']} = {value:.6g}")
    return 0


def soccer_agent_rewards(prior_label: str, beta_observe: float = 0.6,
                         seed: int = 0) -> dict:
    """Recover the tournament roster's rewards from the observed duel.

    C: both-sided equilibrium recovery under the no-harm assumption;
    D: true rewards; E: single-reward zero-sum recovery; F: margin LP;
    G: one-player reduction.  E/F/G mirror the benchmark roster.
    """
    mean_kind, cov_kind = prior_label.split(":")
    env = make_env("soccer", beta_observe)
    r1, r2 = env.reward_pair("duel")
    cfg = MultiQConfig(concept="minimax", iterations=0, refine_sweeps=600, seed=seed)
    _, policy = run_multi_q(env, r1, r2, cfg)
    pr1 = ev.soccer_prior(env, mean_kind, cov_kind, 1)
    pr2 = ev.soccer_prior(env, mean_kind, cov_kind, 2)
    sol_c = solve_map("advE", env.game, policy, pr1, pr2)
    sol_e = solve_baseline("zerosum", env.game, policy, prior=pr1)
    sol_f1 = solve_baseline("dmirl", env.game, policy, player=1)
    sol_f2 = solve_baseline("dmirl", env.game, policy, player=2)
    own1 = ev.soccer_prior_own_action(env, mean_kind, cov_kind, 1)
    own2 = ev.soccer_prior_own_action(env, mean_kind, cov_kind, 2)
    sol_g1 = solve_baseline("birl", env.game, policy, player=1, prior=own1)
    sol_g2 = solve_baseline("birl", env.game, policy, player=2, prior=own2)
    return {
        "C": (sol_c.r1.values, sol_c.r2.values),
        "D": (r1.values, r2.values),
        "E": (sol_e.r1.values, sol_e.r2.values),
        "F": (sol_f1.r1.values, sol_f2.r2.values),
        "G": (sol_g1.r1.values, sol_g2.r2.values),
    }


def cmd_tournament(args) -> int:
    cfg = _resolve(args, ["pairs", "betas", "prior", "rounds", "seed", "out"])
    pairs = [tuple(p.split(":")) for p in (cfg["pairs"] or "C:D").split(",")]
    betas = [float(b) for b in (cfg["betas"] or "0.4").split(",")]
    prior = cfg["prior"] or "MM:SC"
    rounds = int(cfg["rounds"] if cfg["rounds"] is not None else 5000)
    seed = int(cfg["seed"] or 0)
    out = Path(cfg["out"] or "out_tournament")
    _emit_config(out, "tournament", {**cfg, "pairs": pairs, "betas": betas})
    workers = int(os.environ.get("GAMEIRL_WORKERS", "1"))
    if workers < 1:
        raise InputError("GAMEIRL_WORKERS must be a positive integer")
    rewards = soccer_agent_rewards(prior, seed=seed)
    tc = ev.TournamentConfig(pairs=pairs, betas=betas, rounds=rounds, seed=seed)
    result = ev.run_tournament(tc, rewards)
    rows = [[left, right, beta, r["win"], r["loss"], r["tie"]]
            for (left, right, beta), r in sorted(result.rates.items())]
    _write_csv(out / "tournament.csv",
               ["left", "right", "beta_exchange", "win_pct", "loss_pct", "tie_pct"], rows)
    for row in rows:
        print("%s vs %s (beta=%.2f): %.2f/%.2f (%.2f tie)" % tuple(row))
    return 0


def cmd_impute(args) -> int:
    cfg = _resolve(args, ["env", "k", "masks", "seed", "out"])
    env = make_env(cfg["env"] or "gg1")
    ks = [int(k) for k in (cfg["k"] or "0,1,5,10,15").split(",")]
    masks = int(cfg["masks"] if cfg["masks"] is not None else 10)
    seed = int(cfg["seed"] or 0)
    out = Path(cfg["out"] or "out_impute")
    _emit_config(out, "impute", cfg)
    res = ev.imputation_study(env, ks, n_masks=masks, seed=seed)
    rows = [[k, res[k][0], res[k][1]] for k in ks]
    _write_csv(out / "impute.csv", ["masked_states", "nrmse_mean", "nrmse_sd"], rows)
    for k in ks:
        print(f"k={k}: nrmse {res[k][0]:.4f} +- {res[k][1]:.4f}")
    return 0


def cmd_reproduce(args) -> int:
    cfg = _resolve(args, ["out", "with_soccer", "rounds", "seed"])
    out = Path(cfg["out"] or "out_reproduce")
    seed = int(cfg["seed"] or 0)
    _emit_config(out, "reproduce", cfg)
    rows1, rows2 = [], []
    for name in ("gg1", "gg2"):
        env = make_env(name)
        for concept in ("uCS", "cooE", "uCE", "uNE"):
            rep = ev.table1_cell(env, concept, seed=seed)
            rows1.append(rep.row())
            print(f"{name} {concept}: mirl={rep.nrmse_mirl:.4g} "
                  f"irl={rep.nrmse_irl:.4g} dmirl={rep.nrmse_dmirl:.4g}")
        cell = ev.table2_cell(env, seed=seed)
        rows2.append([name, cell["uCS-MIRL"], cell["IRL"], cell["dMIRL"]])
        print(f"{name} value gaps: mirl={cell['uCS-MIRL']:.4g} "
              f"irl={cell['IRL']:.4g} dmirl={cell['dMIRL']:.4g}")
    _write_csv(out / "table1.csv",
               ["env", "concept", "nrmse_mirl", "nrmse_irl", "nrmse_dmirl",
                "violation"], rows1)
    _write_csv(out / "table2.csv", ["env", "gap_mirl", "gap_irl", "gap_dmirl"], rows2)
    env = make_env("gg1")
    res = ev.imputation_study(env, seed=seed)
    _write_csv(out / "impute.csv", ["masked_states", "nrmse_mean", "nrmse_sd"],
               [[k, v[0], v[1]] for k, v in sorted(res.items())])
    print("imputation:", {k: round(v[0], 4) for k, v in sorted(res.items())})
    if cfg["with_soccer"]:
        rounds = int(cfg["rounds"] if cfg["rounds"] is not None else 5000)
        rows = []
        for prior in ("WM:WC", "WM:SC", "MM:WC", "MM:SC", "SM:WC", "SM:SC"):
            rewards = soccer_agent_rewards(prior, seed=seed)
            tc = ev.TournamentConfig(pairs=[("C", "D"), ("C", "E"), ("C", "F"),
                                            ("C", "G")],
                                     betas=[0.4, 1.0, 0.0], rounds=rounds, seed=seed)
            result = ev.run_tournament(tc, rewards)
            for (left, right, beta), r in sorted(result.rates.items()):
                rows.append([prior, left, right, beta, r["win"], r["loss"], r["tie"]])
                print(f"{prior} {left} vs {right} (beta={beta}): "
                      f"{r['win']:.2f}/{r['loss']:.2f}")
        _write_csv(out / "soccer_tables.csv",
                   ["prior", "left", "right", "beta_exchange", "win_pct",
                    "loss_pct", "tie_pct"], rows)
    print(f"artifacts in {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gameirl",
                                 description="stochastic-game reward recovery")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("forward", help="learn an equilibrium bi-policy")
    common(p)
    p.add_argument("--env", choices=ENVS)
    p.add_argument("--concept", choices=("uCS", "cooE", "uCE", "uNE", "advE",
                                         "minimax"))
    p.add_argument("--scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--refine", type=int)
    p.add_argument("--beta", type=float, help="soccer ball-exchange rate")
    p.add_argument("--diagnostics", action="store_const", const=True)

    p = sub.add_parser("inverse", help="recover rewards from a policy artifact")
    common(p)
    p.add_argument("--env", choices=ENVS)
    p.add_argument("--variant", choices=("uCS", "advE", "cooE", "uNE", "uCE"))
    p.add_argument("--baseline", choices=("dmirl", "birl", "zerosum"))
    p.add_argument("--policy", help="policy.json artifact")
    p.add_argument("--scenario")
    p.add_argument("--beta", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--beta-l1", dest="beta_l1", type=float)
    p.add_argument("--r-max", dest="r_max", type=float)
    p.add_argument("--prior", help="soccer prior label, e.g. MM:SC")
    p.add_argument("--compare-true", dest="compare_true", action="store_const",
                   const=True)

    p = sub.add_parser("eval", help="recovery metrics for a solution artifact")
    common(p)
    p.add_argument("--env", choices=ENVS)
    p.add_argument("--metric", choices=("nrmse", "value_gap"))
    p.add_argument("--solution")
    p.add_argument("--scenario")
    p.add_argument("--beta", type=float)

    p = sub.add_parser("tournament", help="soccer Monte Carlo round-robins")
    common(p)
    p.add_argument("--pairs", help="e.g. C:D,C:E,C:F,C:G")
    p.add_argument("--betas", help="e.g. 0,0.4,1")
    p.add_argument("--prior", help="e.g. MM:SC")
    p.add_argument("--rounds", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("impute", help="incomplete-policy recovery study")
    common(p)
    p.add_argument("--env", choices=ENVS)
    p.add_argument("--k", help="comma list of masked-state counts")
    p.add_argument("--masks", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("reproduce", help="chain the benchmark pipelines")
    common(p)
    p.add_argument("--with-soccer", dest="with_soccer", action="store_const",
                   const=True)
    p.add_argument("--rounds", type=int)
    p.add_argument("--seed", type=int)
    return ap


_HANDLERS = {
    "forward": cmd_forward,
    "inverse": cmd_inverse,
    "eval": cmd_eval,
    "tournament": cmd_tournament,
    "impute": cmd_impute,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
