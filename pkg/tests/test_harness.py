import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lqrguide.config import RunConfig
from lqrguide.dynamics import PlantState, rk4_step
from lqrguide.excitation import ExcitationInputError
from lqrguide.harness import (
    HistoryWindow,
    RunMetrics,
    build_state,
    compute_reward,
    episode_record,
    evaluate,
    evaluation_excitation_seed,
    hybrid_action,
    load_actor,
    make_controller,
    rollout,
    summarize,
    train,
    training_excitation_seed,
)
from lqrguide.lac import UsageError
from lqrguide.lqr import design_lqr
from lqrguide.neural import GaussianActor

W = (1.0, 1e-2, 1e-3)


def tiny_cfg(**kw) -> RunConfig:
    cfg = RunConfig(**{"T": 0.4, "episodes": 2, "eval_seeds": 2, **kw})
    return cfg.replace_lac(hidden=(8, 8), critic_features=4, batch_size=8, warmup=5)


# ------------------------------------------------------------------ reward

def test_reward_examples():
    assert compute_reward(0.0, 0.0, 0.0, W) == 0.0
    assert compute_reward(1.0, 2.0, 3.0, W) == pytest.approx(-1.023, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_reward_sign_invariant_and_nonpositive(x, a, u):
    r = compute_reward(x, a, u, W)
    assert r <= 0.0
    assert r == compute_reward(-x, -a, -u, W)


# ------------------------------------------------------------------- state

def test_state_starts_at_zero():
    np.testing.assert_array_equal(build_state(HistoryWindow(4)), np.zeros(16))


def test_degenerate_window():
    h = HistoryWindow(1)
    h.push(1.0, 2.0, 3.0, 4.0)
    np.testing.assert_array_equal(build_state(h), [1.0, 2.0, 3.0, 4.0])


def test_sliding_window_shift():
    h = HistoryWindow(4)
    for i in range(6):
        h.push(i, 10 + i, 20 + i, 30 + i)
    before = build_state(h).reshape(4, 4)
    h.push(6, 16, 26, 36)
    after = build_state(h).reshape(4, 4)
    np.testing.assert_array_equal(after[:, :3], before[:, 1:])
    np.testing.assert_array_equal(after[:, 3], [6, 16, 26, 36])


def test_window_rejects_zero_length():
    with pytest.raises(ValueError):
        HistoryWindow(0)


# ------------------------------------------------------------------ action

def test_hybrid_action_examples():
    assert hybrid_action(0.0, 100.0, 0.5, 10.0) == 5.0
    assert hybrid_action(0.2, 100.0, 0.5, 10.0) == pytest.approx(25.0)
    assert hybrid_action(0.3, 100.0, 0.0, 10.0) == pytest.approx(30.0)
    assert hybrid_action(1.0, 100.0, 0.5, 10.0, u_clamp=50.0) == 50.0
    assert hybrid_action(-1.0, 100.0, 0.5, 10.0, u_clamp=50.0) == -50.0


# ----------------------------------------------------------------- rollout

def test_uncontrolled_rollout_is_plant_with_zero_force():
    cfg = RunConfig(T=2.0)
    pol = design_lqr(cfg.assumed)
    record = episode_record(cfg, 3)
    traj, m = rollout(cfg, record, pol, make_controller("uncontrolled", cfg))
    s = PlantState(0.0, 0.0)
    for j in range(cfg.n_steps):
        s, a = rk4_step(s, 0.0, record[j], cfg.dt, cfg.true)
        assert (traj.x[j], traj.v[j], traj.a[j]) == (s.x, s.v, a)
    assert np.all(traj.u == 0.0) and m.rms_u == 0.0
    assert traj.t.size == cfg.n_steps == 100


def test_lqr_on_zero_excitation_stays_at_rest():
    cfg = RunConfig(T=2.0)
    cfg = cfg.replace(excitation=type(cfg.excitation)(intensity=0.0))
    res = evaluate("lqr", cfg, seeds=[0, 1])
    for m in res.metrics:
        assert (m.rms_x, m.rms_a, m.peak_a, m.peak_x, m.rms_u) == (0.0,) * 5


def test_lqr_reduces_displacement_on_seeded_record():
    cfg = RunConfig()
    un = evaluate("uncontrolled", cfg, seeds=[0])
    lq = evaluate("lqr", cfg, seeds=[0])
    assert lq.metrics[0].rms_x < un.metrics[0].rms_x
    assert lq.metrics[0].rms_a < un.metrics[0].rms_a


def test_default_episode_length():
    assert RunConfig().n_steps == 1000
    assert episode_record(RunConfig(), 0).size == 1001


def test_seed_streams_disjoint():
    train_seeds = {training_excitation_seed(m, e) for m in range(5) for e in range(100)}
    eval_seeds = {evaluation_excitation_seed(i) for i in range(100)}
    assert len(train_seeds) == 500 and not (train_seeds & eval_seeds)


def test_learned_policy_needs_actor():
    cfg = tiny_cfg()
    with pytest.raises(UsageError):
        make_controller("rl", cfg)
    with pytest.raises(UsageError):
        make_controller("bogus", cfg)
    with pytest.raises(UsageError):
        evaluate("lqr-guided-rl", cfg)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(UsageError):
        load_actor(tmp_path)


def test_non_finite_record_rejected():
    cfg = RunConfig(T=0.1)
    with pytest.raises(ExcitationInputError):
        cfg = cfg.replace(excitation=type(cfg.excitation)(intensity=float("inf")))
        episode_record(cfg, 0)


# ------------------------------------------------------------------- train

def test_loop_accounting():
    cfg = tiny_cfg(T=0.04, episodes=1)
    res = train(cfg)
    assert len(res.buffer) == 2
    assert res.metrics[0].steps == 2
    assert res.agent.updates == 0  # warm-up not reached


def test_chain_integrity_and_rewards():
    cfg = tiny_cfg()
    res = train(cfg)
    items = res.buffer.items()
    per_episode = cfg.n_steps
    assert len(items) == cfg.episodes * per_episode
    for ep in range(cfg.episodes):
        chunk = items[ep * per_episode:(ep + 1) * per_episode]
        np.testing.assert_array_equal(chunk[0].s, np.zeros(cfg.state_dim))
        for a, b in zip(chunk, chunk[1:]):
            np.testing.assert_array_equal(a.s_next, b.s)
            assert a.a_next_hint == b.u_tilde
            # the actor-output history lags: s' ends with the action taken at s
            assert b.s[3 * cfg.history - 1] == a.u_tilde
    assert all(t.r <= 0 for t in items)
    assert all(m.total_reward <= 0 for m in res.metrics)
    assert res.agent.updates == len(items) - cfg.lac.warmup + 1
    assert res.agent.beta >= 0 and res.agent.lam >= 0


def test_zero_force_training_matches_uncontrolled():
    cfg = tiny_cfg(u_max=0.0, alpha=0.0)
    res = train(cfg, guided=False, keep_trajectories=True)
    pol = design_lqr(cfg.assumed)
    for seed, traj in zip(res.episode_seeds, res.trajectories):
        ref, _ = rollout(cfg, episode_record(cfg, seed), pol,
                         make_controller("uncontrolled", cfg))
        np.testing.assert_array_equal(traj.x, ref.x)
        np.testing.assert_array_equal(traj.a, ref.a)


def test_training_is_deterministic(tmp_path):
    cfg = tiny_cfg()
    train(cfg, out_dir=tmp_path / "a")
    train(cfg, out_dir=tmp_path / "b")
    for name in ("metrics.csv", "actor.sctl", "critic.sctl", "critic_target.sctl",
                 "config.yaml", "lqr.txt", "agent.txt", "trajectories/episode_002.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_naive_mode_ignores_lqr():
    cfg = tiny_cfg(episodes=1)
    res = train(cfg, guided=False, keep_trajectories=True)
    traj = res.trajectories[0]
    # applied force is purely the scaled actor output
    assert np.all(np.abs(traj.u) <= cfg.u_max + 1e-12)


def test_evaluate_from_run_dir(tmp_path):
    cfg = tiny_cfg()
    res = train(cfg, out_dir=tmp_path / "run")
    direct = evaluate("lqr-guided-rl", cfg, actor=res.agent.actor)
    loaded = evaluate("lqr-guided-rl", cfg, run_dir=tmp_path / "run", out_dir=tmp_path / "ev")
    assert direct.metrics == loaded.metrics
    assert (tmp_path / "ev" / "lqr-guided-rl_seed000.csv").read_text().startswith("t,x,v,a,u,xg_ddot\n")
    assert isinstance(load_actor(tmp_path / "run"), GaussianActor)


def test_divergence_is_recorded_and_training_continues():
    cfg = tiny_cfg(T=2.0, u_max=1e9, alpha=0.0)
    res = train(cfg, guided=False)
    assert len(res.metrics) == cfg.episodes
    assert all(m.diverged for m in res.metrics)
    assert all(m.steps < cfg.n_steps for m in res.metrics)


# ----------------------------------------------------------------- summary

def _m(v):
    return RunMetrics(v, 2 * v, 3 * v, 4 * v, 5 * v)


def test_summary_single_run_equals_metrics():
    s = summarize({"only": [_m(1.5)]})
    row = s.rows[0]
    assert (row["rms_x_mean"], row["rms_a_mean"], row["rms_u_mean"]) == (1.5, 3.0, 7.5)


def test_summary_identical_runs_zero_std():
    s = summarize({"x": [_m(2.0), _m(2.0)]})
    assert all(s.rows[0][f"{f}_std"] == 0.0 for f in RunMetrics.FIELDS)


def test_summary_baseline_ratios():
    s = summarize({"uncontrolled": [_m(2.0), _m(4.0)], "lqr": [_m(1.5)]})
    assert all(s.rows[0][f"{f}_ratio"] == 1.0 for f in RunMetrics.FIELDS)
    assert s.rows[1]["rms_x_ratio"] == pytest.approx(0.5)
    assert s.csv.splitlines()[0].startswith("policy,n,diverged,rms_x_mean")
    assert "lqr" in s.text


def test_summary_needs_runs():
    with pytest.raises(UsageError):
        summarize({})
