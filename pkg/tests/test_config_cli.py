import subprocess
import sys

import numpy as np
import pytest

from lqrguide.cli import main
from lqrguide.config import (
    ConfigError,
    RunConfig,
    config_from_dict,
    config_hash,
    dump_config,
    load_config,
)
from lqrguide.excitation import read_record_csv

SMALL_LAC = "lac: {hidden: [8, 8], critic_features: 4, batch_size: 8, warmup: 5}\n"


# ------------------------------------------------------------------ config

def test_defaults():
    cfg = RunConfig()
    assert (cfg.T, cfg.dt, cfg.episodes, cfg.history, cfg.alpha) == (20.0, 0.02, 100, 4, 0.5)
    assert cfg.reward_weights == (1.0, 1e-2, 1e-3)
    assert cfg.lac.gamma == 0.998 and cfg.lac.batch_size == 256
    assert cfg.lac.hidden == (256, 256, 256)
    assert cfg.lac.lr_actor == 1e-4 and cfg.lac.lr_critic == 3e-4
    assert cfg.state_dim == 16
    assert cfg.dt * cfg.n_steps >= cfg.T - 1e-12


@pytest.mark.parametrize("kw", [dict(alpha=1.5), dict(alpha=-0.1), dict(history=0),
                                dict(dt=0.0), dict(reward_weights=(1.0, -1.0, 0.0))])
def test_invalid_values(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw)


def test_dump_load_round_trip(tmp_path):
    cfg = RunConfig(seed=4, alpha=0.25).replace_lac(tau=0.01, hidden=(32, 32))
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    back = load_config(path)
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)
    assert config_hash(RunConfig(seed=5)) != config_hash(RunConfig(seed=4))


def test_partial_sections_merge_with_defaults():
    cfg = config_from_dict({"true": {"k3": 2.0}, "lac": {"tau": 0.1}})
    assert cfg.true.k3 == 2.0 and cfg.true.m == 1.0
    assert cfg.lac.tau == 0.1 and cfg.lac.gamma == 0.998


@pytest.mark.parametrize("data", [{"bogus": 1}, {"lac": {"nope": 1}}, {"true": {"m": -1}}])
def test_bad_config_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


# --------------------------------------------------------------------- CLI

def test_design_lqr(tmp_path, capsys):
    assert main(["design-lqr", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "K = [" in out and (tmp_path / "lqr.txt").read_text() == out


def test_design_lqr_randomized(capsys):
    assert main(["design-lqr", "--randomize-assumed", "--seed", "3"]) == 0
    assert "assumed.m = 1.6" not in capsys.readouterr().out


def test_gen_excitation(tmp_path):
    assert main(["gen-excitation", "--seed", "7", "--out", str(tmp_path)]) == 0
    t, x = read_record_csv(tmp_path / "excitation_seed7.csv")
    assert x.size == 1000


@pytest.mark.parametrize("policy", ["uncontrolled", "lqr"])
def test_simulate(tmp_path, policy):
    assert main(["simulate", "--policy", policy, "--out", str(tmp_path)]) == 0
    assert (tmp_path / f"{policy}_trajectory.csv").read_text().startswith("t,x,v,a,u,xg_ddot\n")


def test_train_then_evaluate(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("T: 0.4\neval_seeds: 2\n" + SMALL_LAC)
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--episodes", "2", "--out", str(run)]) == 0
    for name in ("config.yaml", "lqr.txt", "actor.sctl", "critic.sctl", "critic_target.sctl",
                 "agent.txt", "metrics.csv", "summary.txt", "trajectories/episode_001.csv"):
        assert (run / name).exists(), name
    assert "mode = guided" in (run / "agent.txt").read_text()
    ev = tmp_path / "ev"
    assert main(["evaluate", "--config", str(cfg), "--policy", "lqr-guided-rl",
                 "--run-dir", str(run), "--out", str(ev)]) == 0
    rows = (ev / "lqr-guided-rl_metrics.csv").read_text().splitlines()
    assert len(rows) == 3


def test_naive_flag(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("T: 0.2\n" + SMALL_LAC)
    assert main(["train", "--naive", "--config", str(cfg), "--episodes", "1",
                 "--out", str(tmp_path)]) == 0
    assert "mode = naive" in (tmp_path / "agent.txt").read_text()


def test_compare(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("T: 0.2\neval_seeds: 1\n" + SMALL_LAC)
    assert main(["compare", "--config", str(cfg), "--episodes", "1", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "summary.txt").read_text()
    for label in ("uncontrolled", "lqr", "rl", "lqr-guided-rl", "naive-training"):
        assert label in text


def test_usage_errors(tmp_path):
    assert main([]) == 1
    assert main(["simulate", "--policy", "nope"]) == 1
    assert main(["design-lqr", "--alpha", "3"]) == 1
    assert main(["evaluate", "--policy", "rl", "--run-dir", str(tmp_path),
                 "--out", str(tmp_path / "ev")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("unknown_key: 1\n")
    assert main(["design-lqr", "--config", str(bad)]) == 1


def test_numeric_failure_exit_code(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("T: 2.0\nalpha: 0.0\nu_max: 1.0e9\n" + SMALL_LAC)
    assert main(["train", "--naive", "--config", str(cfg), "--episodes", "1",
                 "--out", str(tmp_path / "r")]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lqrguide", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "design-lqr" in proc.stdout
