"""LQR-guided training loop, policy evaluation and result tables.

Index conventions for one episode of N = ceil(T/dt) steps (0-based j):

* the ground record has N + 1 samples; ``xg[j]`` is held over step j and
  ``xg[j + 1]`` is the sample measured at the end of it;
* after step j the window receives x''(t_{j+1}), xg[j + 1], the actor
  output used during step j, and the LQR force at the new state, so the
  actor-output history lags the response histories by one step.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from ._alloc import keep_heap_blocks
from .config import RunConfig, config_hash, dump_config
from .dynamics import PlantDivergence, PlantState, rk4_step
from .excitation import KanaiTajimiParams, generate_record
from .lac import LacAgent, ReplayBuffer, Transition, UsageError, learn
from .lqr import LqrPolicy, design_lqr, lqr_force
from .neural import (
    GaussianActor,
    LOG_STD_MAX,
    LOG_STD_MIN,
    checkpoint_bytes,
    forward,
    load_checkpoint,
)

log = logging.getLogger(__name__)

POLICIES = ("uncontrolled", "lqr", "rl", "lqr-guided-rl")

# independent random streams derived from the master seed
_STREAM_INIT, _STREAM_ACTION, _STREAM_LEARN, _STREAM_TRAIN_EXC, _STREAM_EVAL_EXC = range(1, 6)


def _stream(*entropy: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def _derived_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1, np.uint64)[0])


def training_excitation_seed(master: int, episode: int) -> int:
    return _derived_seed(master, _STREAM_TRAIN_EXC, episode)


def evaluation_excitation_seed(index: int) -> int:
    # deliberately independent of the master seed: one held-out set for all runs
    return _derived_seed(index, _STREAM_EVAL_EXC)


def kt_params(cfg: RunConfig) -> KanaiTajimiParams:
    e = cfg.excitation
    return KanaiTajimiParams(e.omega_g, e.zeta_g, e.intensity, cfg.dt, cfg.T)


def episode_record(cfg: RunConfig, seed: int) -> np.ndarray:
    """Ground record with one extra trailing sample for the final measurement."""
    return generate_record(seed, kt_params(cfg), cfg.n_steps + 1)


# ------------------------------------------------------------ primitives

def compute_reward(x: float, xddot: float, u: float, w: Sequence[float]) -> float:
    return -(w[0] * abs(x) + w[1] * abs(xddot) + w[2] * abs(u))


class HistoryWindow:
    """Rolling length-l windows of x'', xg'', actor output and LQR force."""

    SIGNALS = ("acc", "ground", "u_tilde", "u_star")

    def __init__(self, length: int):
        if length < 1:
            raise ValueError("history length must be >= 1")
        self.length = length
        self.acc = deque([0.0] * length, maxlen=length)
        self.ground = deque([0.0] * length, maxlen=length)
        self.u_tilde = deque([0.0] * length, maxlen=length)
        self.u_star = deque([0.0] * length, maxlen=length)

    def push(self, acc: float, ground: float, u_tilde: float, u_star: float) -> None:
        self.acc.append(acc)
        self.ground.append(ground)
        self.u_tilde.append(u_tilde)
        self.u_star.append(u_star)


def build_state(h: HistoryWindow) -> np.ndarray:
    """[x'' oldest..newest, xg'' ..., actor output ..., LQR force ...]."""
    return np.array([*h.acc, *h.ground, *h.u_tilde, *h.u_star])


def hybrid_action(raw: float, u_max: float, alpha: float, lqr_u: float,
                  u_clamp: float | None = None) -> float:
    u = u_max * raw + alpha * lqr_u
    if u_clamp is not None:
        u = min(max(u, -u_clamp), u_clamp)
    return u


def _sample_action(actor: GaussianActor, s: np.ndarray, noise: float) -> float:
    # single-state fast path of neural.actor_sample
    mean, raw_log_std = forward(actor.net, s).tolist()
    log_std = min(max(raw_log_std, LOG_STD_MIN), LOG_STD_MAX)
    return math.tanh(mean + math.exp(log_std) * noise)


def _mean_action(actor: GaussianActor, s: np.ndarray) -> float:
    return math.tanh(float(forward(actor.net, s)[0]))


# ------------------------------------------------------------ metrics

@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    u: np.ndarray
    xg: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,x,v,a,u,xg_ddot\n")
        for row in zip(*(arr.tolist() for arr in (self.t, self.x, self.v, self.a, self.u, self.xg))):
            buf.write(",".join(f"{v:.15g}" for v in row) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


@dataclass
class RunMetrics:
    rms_x: float
    rms_a: float
    peak_a: float
    peak_x: float
    rms_u: float
    diverged: bool = False
    total_reward: float = 0.0
    steps: int = 0

    FIELDS = ("rms_x", "rms_a", "peak_a", "peak_x", "rms_u")

    def as_row(self) -> dict:
        return {"rms_x": self.rms_x, "rms_a": self.rms_a, "peak_a": self.peak_a,
                "peak_x": self.peak_x, "rms_u": self.rms_u, "diverged": int(self.diverged),
                "total_reward": self.total_reward, "steps": self.steps}


def _rms(a: np.ndarray) -> float:
    return float(np.sqrt(np.mean(a * a))) if a.size else 0.0


def _peak(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


def metrics_of(traj: Trajectory, diverged: bool = False, total_reward: float = 0.0) -> RunMetrics:
    return RunMetrics(_rms(traj.x), _rms(traj.a), _peak(traj.a), _peak(traj.x), _rms(traj.u),
                      diverged, total_reward, int(traj.t.size))


def write_metrics_csv(path, metrics: Sequence[RunMetrics], label: str = "episode") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([label, "rms_x", "rms_a", "peak_a", "peak_x", "rms_u",
                         "diverged", "total_reward", "steps"])
        for i, m in enumerate(metrics, start=1):
            row = m.as_row()
            writer.writerow([i] + [repr(row[k]) if isinstance(row[k], float) else row[k]
                                   for k in ("rms_x", "rms_a", "peak_a", "peak_x", "rms_u",
                                             "diverged", "total_reward", "steps")])


# ------------------------------------------------------------ rollout

Controller = Callable[[np.ndarray, float], tuple[float, float]]
"""(agent state, LQR force at current plant state) -> (applied force, actor output)."""


def rollout(cfg: RunConfig, record: np.ndarray, policy: LqrPolicy,
            controller: Controller) -> tuple[Trajectory, RunMetrics]:
    """Deterministic closed-loop run on the true plant over one ground record."""
    n = cfg.n_steps
    hist = HistoryWindow(cfg.history)
    state = PlantState(cfg.x0, cfg.v0)
    u_star = lqr_force(policy, *state)
    s = build_state(hist)
    xs, vs, acs, us, gs = [], [], [], [], []
    total, diverged = 0.0, False
    for j in range(n):
        u, u_tilde = controller(s, u_star)
        try:
            state, acc = rk4_step(state, u, record[j], cfg.dt, cfg.true, step=j)
        except PlantDivergence:
            diverged = True
            break
        u_star = lqr_force(policy, *state)
        total += compute_reward(state.x, acc, u, cfg.reward_weights)
        hist.push(acc, record[j + 1], u_tilde, u_star)
        s = build_state(hist)
        xs.append(state.x); vs.append(state.v); acs.append(acc); us.append(u); gs.append(record[j])
    k = len(xs)
    traj = Trajectory(np.arange(1, k + 1) * cfg.dt, *(np.array(a, dtype=float)
                                                     for a in (xs, vs, acs, us, gs)))
    return traj, metrics_of(traj, diverged, total)


def make_controller(name: str, cfg: RunConfig, actor: GaussianActor | None = None,
                    alpha: float | None = None) -> Controller:
    if name not in POLICIES:
        raise UsageError(f"unknown policy {name!r}; expected one of {POLICIES}")
    alpha = cfg.alpha if alpha is None else alpha
    if name == "uncontrolled":
        return lambda s, u_star: (0.0, 0.0)
    if name == "lqr":
        return lambda s, u_star: (hybrid_action(0.0, 0.0, 1.0, u_star, cfg.u_clamp), 0.0)
    if actor is None:
        raise UsageError(f"policy {name!r} needs a trained actor")
    weight = 0.0 if name == "rl" else alpha

    def ctrl(s, u_star):
        raw = _mean_action(actor, s)
        return hybrid_action(raw, cfg.u_max, weight, u_star, cfg.u_clamp), raw
    return ctrl


# ------------------------------------------------------------ training

@dataclass
class TrainResult:
    agent: LacAgent
    policy: LqrPolicy
    metrics: list[RunMetrics]
    buffer: ReplayBuffer
    guided: bool
    elapsed: float
    trajectories: list[Trajectory] = field(default_factory=list, repr=False)
    episode_seeds: list[int] = field(default_factory=list)


def train(cfg: RunConfig, guided: bool = True, out_dir=None,
          keep_trajectories: bool = False,
          progress: Callable[[int, RunMetrics], None] | None = None) -> TrainResult:
    """Run the guided (or naive, alpha = 0) training loop on the true plant."""
    keep_heap_blocks()
    started = time.perf_counter()
    policy = design_lqr(cfg.assumed, np.array(cfg.lqr.q), cfg.lqr.r)
    alpha = cfg.alpha if guided else 0.0
    agent = LacAgent.create(cfg.state_dim, cfg.lac, _stream(cfg.seed, _STREAM_INIT))
    action_rng = _stream(cfg.seed, _STREAM_ACTION)
    learn_rng = _stream(cfg.seed, _STREAM_LEARN)
    buf = ReplayBuffer(cfg.lac.capacity, cfg.state_dim)
    w = cfg.reward_weights
    n = cfg.n_steps
    metrics, trajectories, seeds = [], [], []

    for episode in range(cfg.episodes):
        seed = training_excitation_seed(cfg.seed, episode)
        seeds.append(seed)
        record = episode_record(cfg, seed).tolist()
        hist = HistoryWindow(cfg.history)
        state = PlantState(cfg.x0, cfg.v0)
        u_star = lqr_force(policy, *state)
        s = build_state(hist)
        xs, vs, acs, us, gs = [], [], [], [], []
        total, diverged = 0.0, False
        pushed_last = False
        for j in range(n):
            u_tilde = _sample_action(agent.actor, s, action_rng.standard_normal())
            if pushed_last:
                # the previous transition's a' is the action just taken at its s'
                buf.a_next_hint[(buf.cursor - 1) % buf.capacity] = u_tilde
            u = hybrid_action(u_tilde, cfg.u_max, alpha, u_star, cfg.u_clamp)
            try:
                state, acc = rk4_step(state, u, record[j], cfg.dt, cfg.true, step=j)
            except PlantDivergence as exc:
                log.warning("episode %d: %s", episode + 1, exc)
                diverged = True
                break
            u_star = lqr_force(policy, *state)
            r = compute_reward(state.x, acc, u, w)
            total += r
            hist.push(acc, record[j + 1], u_tilde, u_star)
            s_next = build_state(hist)
            buf.push(Transition(s, u_tilde, r, s_next, u_tilde))
            pushed_last = True
            if len(buf) >= max(cfg.lac.warmup, 1):
                learn(agent, buf.sample(cfg.lac.batch_size, learn_rng), learn_rng)
            s = s_next
            xs.append(state.x); vs.append(state.v); acs.append(acc); us.append(u)
            gs.append(record[j])
        if pushed_last and not diverged:
            buf.a_next_hint[(buf.cursor - 1) % buf.capacity] = _sample_action(
                agent.actor, s, action_rng.standard_normal())
        k = len(xs)
        traj = Trajectory(np.arange(1, k + 1) * cfg.dt,
                          *(np.array(a, dtype=float) for a in (xs, vs, acs, us, gs)))
        m = metrics_of(traj, diverged, total)
        metrics.append(m)
        if keep_trajectories or (out_dir is not None and cfg.save_trajectories):
            trajectories.append(traj)
        if progress is not None:
            progress(episode + 1, m)
        log.info("episode %d/%d peak|a|=%.4g rms_a=%.4g rms_x=%.4g beta=%.3g lambda=%.3g",
                 episode + 1, cfg.episodes, m.peak_a, m.rms_a, m.rms_x, agent.beta, agent.lam)

    result = TrainResult(agent, policy, metrics, buf, guided, time.perf_counter() - started,
                         trajectories, seeds)
    if out_dir is not None:
        save_run(result, cfg, out_dir)
    return result


def agent_sidecar(agent: LacAgent, cfg: RunConfig) -> str:
    return (f"beta = {agent.beta!r}\n"
            f"lambda = {agent.lam!r}\n"
            f"log_beta = {float(agent.log_beta)!r}\n"
            f"log_lambda = {float(agent.log_lambda)!r}\n"
            f"updates = {agent.updates}\n"
            f"actor_adam_steps = {agent.actor_opt.step}\n"
            f"critic_adam_steps = {agent.critic_opt.step}\n"
            f"config_hash = {config_hash(cfg)}\n")


def save_run(result: TrainResult, cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    agent = result.agent
    (out / "config.yaml").write_text(dump_config(cfg))
    (out / "lqr.txt").write_text(result.policy.provenance())
    (out / "actor.sctl").write_bytes(checkpoint_bytes(agent.actor.net, agent.actor_opt))
    (out / "critic.sctl").write_bytes(checkpoint_bytes(agent.critic, agent.critic_opt))
    (out / "critic_target.sctl").write_bytes(checkpoint_bytes(agent.critic_target))
    (out / "agent.txt").write_text(
        f"mode = {'guided' if result.guided else 'naive'}\n" + agent_sidecar(agent, cfg))
    write_metrics_csv(out / "metrics.csv", result.metrics)
    if result.trajectories and cfg.save_trajectories:
        tdir = out / "trajectories"
        tdir.mkdir(exist_ok=True)
        for i, traj in enumerate(result.trajectories, start=1):
            traj.write_csv(tdir / f"episode_{i:03d}.csv")
    table = summarize({"training": result.metrics})
    (out / "summary.txt").write_text(table.text + f"\nwall time (s): {result.elapsed:.1f}\n")
    return out


def load_actor(run_dir) -> GaussianActor:
    path = Path(run_dir) / "actor.sctl"
    if not path.exists():
        raise UsageError(f"missing actor checkpoint {path}")
    net, _ = load_checkpoint(path)
    return GaussianActor(net)


# ------------------------------------------------------------ evaluation

@dataclass
class EvalResult:
    policy: str
    metrics: list[RunMetrics]
    trajectories: list[Trajectory]
    seeds: list[int]


def evaluate(policy_name: str, cfg: RunConfig, seeds: Iterable[int] | None = None,
             actor: GaussianActor | None = None, run_dir=None, out_dir=None,
             lqr_policy: LqrPolicy | None = None) -> EvalResult:
    """Roll out one policy (deterministic actor mean) on held-out excitation records."""
    if policy_name in ("rl", "lqr-guided-rl") and actor is None:
        if run_dir is None:
            raise UsageError(f"policy {policy_name!r} needs an actor or a run directory")
        actor = load_actor(run_dir)
    if lqr_policy is None:
        lqr_policy = design_lqr(cfg.assumed, np.array(cfg.lqr.q), cfg.lqr.r)
    ctrl = make_controller(policy_name, cfg, actor)
    seeds = list(range(cfg.eval_seeds)) if seeds is None else list(seeds)
    metrics, trajs = [], []
    for idx in seeds:
        record = episode_record(cfg, evaluation_excitation_seed(idx))
        traj, m = rollout(cfg, record, lqr_policy, ctrl)
        metrics.append(m)
        trajs.append(traj)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for idx, traj in zip(seeds, trajs):
            traj.write_csv(out / f"{policy_name}_seed{idx:03d}.csv")
        write_metrics_csv(out / f"{policy_name}_metrics.csv", metrics, label="eval")
    return EvalResult(policy_name, metrics, trajs, seeds)


# ------------------------------------------------------------ summary

@dataclass
class Summary:
    rows: list[dict]
    text: str
    csv: str


def summarize(runs: Mapping[str, Sequence[RunMetrics]], baseline: str = "uncontrolled") -> Summary:
    """Mean/std per metric across seeds, with ratios to the baseline's means."""
    if not runs or any(len(v) == 0 for v in runs.values()):
        raise UsageError("summarize needs at least one run per label")
    base_means = None
    if baseline in runs:
        base_means = {f: float(np.mean([getattr(m, f) for m in runs[baseline]]))
                      for f in RunMetrics.FIELDS}
    rows = []
    for label, ms in runs.items():
        row = {"policy": label, "n": len(ms), "diverged": sum(m.diverged for m in ms)}
        for f in RunMetrics.FIELDS:
            vals = np.array([getattr(m, f) for m in ms], dtype=float)
            row[f"{f}_mean"] = float(np.mean(vals))
            row[f"{f}_std"] = float(np.std(vals))
            if base_means is not None:
                denom = base_means[f]
                row[f"{f}_ratio"] = float(row[f"{f}_mean"] / denom) if denom else float("nan")
        rows.append(row)

    cols = ["policy", "n", "diverged"] + [f"{f}_{s}" for f in RunMetrics.FIELDS
                                          for s in ("mean", "std")]
    if base_means is not None:
        cols += [f"{f}_ratio" for f in RunMetrics.FIELDS]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})

    def cell(v):
        return f"{v:.4g}" if isinstance(v, float) else str(v)
    widths = {c: max(len(c), *(len(cell(r[c])) for r in rows)) for c in cols}
    lines = ["  ".join(c.rjust(widths[c]) for c in cols)]
    lines += ["  ".join(cell(r[c]).rjust(widths[c]) for c in cols) for r in rows]
    return Summary(rows, "\n".join(lines) + "\n", buf.getvalue())
