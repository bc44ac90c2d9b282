"""End-to-end CLI runs on the small grid game."""

import json
from pathlib import Path

import numpy as np
import pytest

from gameirl.cli import main


def run(args):
    return main(args)


def test_forward_inverse_eval_roundtrip(tmp_path):
    fwd = tmp_path / "fwd"
    rc = run(["forward", "--env", "gg1", "--concept", "uNE", "--seed", "7",
              "--iterations", "2000", "--refine", "400", "--out", str(fwd)])
    assert rc == 0
    assert (fwd / "policy.json").exists()
    assert (fwd / "qtables.json").exists()
    cfg = json.loads((fwd / "resolved_config.json").read_text())
    assert cfg["command"] == "forward" and "config_hash" in cfg

    inv = tmp_path / "inv"
    rc = run(["inverse", "--env", "gg1", "--variant", "uNE",
              "--policy", str(fwd / "policy.json"), "--out", str(inv),
              "--compare-true"])
    assert rc == 0
    doc = json.loads((inv / "solution.json").read_text())
    assert doc["status"] == "optimal"
    assert doc["violation"] <= 1e-6

    ev = tmp_path / "ev"
    rc = run(["eval", "--env", "gg1", "--metric", "nrmse",
              "--solution", str(inv / "solution.json"), "--out", str(ev)])
    assert rc == 0
    line = (ev / "eval.csv").read_text().splitlines()[1]
    assert float(line.split(",")[1]) <= 0.02


def test_forward_rerun_is_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        rc = run(["forward", "--env", "gg1", "--concept", "uCS", "--seed", "3",
                  "--iterations", "1500", "--refine", "300", "--out", str(out)])
        assert rc == 0
    assert (a / "policy.json").read_bytes() == (b / "policy.json").read_bytes()
    assert (a / "qtables.json").read_bytes() == (b / "qtables.json").read_bytes()


def test_missing_policy_file_exits_2(tmp_path):
    rc = run(["inverse", "--env", "gg1", "--variant", "uNE",
              "--policy", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_bad_env_exits_2(tmp_path, capsys):
    rc = run(["impute", "--env", "gg1", "--k", "zero", "--out", str(tmp_path / "o")])
    assert rc == 2


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"env": "gg1", "concept": "uCS",
                               "iterations": 1000, "refine": 200, "seed": 1}))
    out = tmp_path / "out"
    rc = run(["forward", "--config", str(cfg), "--seed", "9", "--out", str(out)])
    assert rc == 0
    doc = json.loads((out / "resolved_config.json").read_text())
    assert doc["seed"] == 9  # flag wins
    assert doc["concept"] == "uCS"  # file fills the rest


def test_baseline_inverse_smoke(tmp_path):
    fwd = tmp_path / "fwd"
    run(["forward", "--env", "gg1", "--concept", "uNE", "--seed", "5",
         "--iterations", "1000", "--refine", "300", "--out", str(fwd)])
    inv = tmp_path / "dm"
    rc = run(["inverse", "--env", "gg1", "--baseline", "dmirl",
              "--policy", str(fwd / "policy.json"), "--out", str(inv)])
    assert rc == 0
    assert (inv / "solution.json").exists()
