"""Lyapunov actor-critic learner and its experience replay.

The critic is a feature network ``f(s, a)`` whose squared norm is the
Lyapunov candidate, so nonnegativity holds by construction.  The actor is
a tanh-squashed Gaussian; the entropy weight ``beta`` and the Lyapunov
multiplier ``lambda`` are adapted by projected dual ascent in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np

from .neural import (
    ActorPass,
    AdamState,
    GaussianActor,
    Mlp,
    actor_backward,
    actor_forward,
    adam_step,
    backward,
    forward,
    forward_cached,
)


class UsageError(RuntimeError):
    """Raised for calls that violate an operation's preconditions."""


@dataclass(frozen=True)
class LacConfig:
    hidden: tuple[int, ...] = (256, 256, 256)
    critic_features: int = 16
    lr_actor: float = 1e-4
    lr_critic: float = 3e-4
    lr_dual: float = 3e-4
    gamma: float = 0.998
    tau: float = 0.005
    alpha3: float = 0.5
    target_entropy: float = -1.0
    batch_size: int = 256
    warmup: int = 1000
    capacity: int = 100_000
    init_beta: float = 1.0
    init_lambda: float = 1.0
    lambda_max: float | None = 1.0
    # undiscounted, online-critic target exactly as printed
    literal_target: bool = False
    # use the action actually taken at s' instead of a fresh actor sample
    use_stored_next_action: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.batch_size < 1 or self.capacity < 1 or self.warmup < 0:
            raise ValueError("batch_size, capacity must be >= 1 and warmup >= 0")
        if self.critic_features < 1:
            raise ValueError("critic_features must be >= 1")
        if self.init_beta < 0 or self.init_lambda < 0:
            raise ValueError("initial multipliers must be nonnegative")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ------------------------------------------------------------ replay

@dataclass
class Transition:
    s: np.ndarray
    u_tilde: float
    r: float
    s_next: np.ndarray
    a_next_hint: float = 0.0


class Batch(NamedTuple):
    s: np.ndarray
    u_tilde: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    a_next_hint: np.ndarray

    @property
    def size(self) -> int:
        return self.s.shape[0]

    def astype(self, dtype) -> "Batch":
        return Batch(*(np.asarray(x, dtype=dtype) for x in self))

    @classmethod
    def from_transitions(cls, items) -> "Batch":
        items = list(items)
        return cls(np.array([t.s for t in items], dtype=float),
                   np.array([t.u_tilde for t in items], dtype=float),
                   np.array([t.r for t in items], dtype=float),
                   np.array([t.s_next for t in items], dtype=float),
                   np.array([t.a_next_hint for t in items], dtype=float))


class ReplayBuffer:
    """Ring buffer of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.s = np.zeros((capacity, state_dim))
        self.s_next = np.zeros((capacity, state_dim))
        self.u_tilde = np.zeros(capacity)
        self.r = np.zeros(capacity)
        self.a_next_hint = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        s = np.asarray(t.s, dtype=float)
        s_next = np.asarray(t.s_next, dtype=float)
        if s.shape != (self.state_dim,) or s_next.shape != (self.state_dim,):
            raise ValueError(f"state vectors must have length {self.state_dim}")
        if not (math.isfinite(t.r) and t.r <= 0.0):
            raise ValueError(f"reward must be finite and <= 0, got {t.r}")
        i = self.cursor
        self.s[i] = s
        self.s_next[i] = s_next
        self.u_tilde[i] = t.u_tilde
        self.r[i] = t.r
        self.a_next_hint[i] = t.a_next_hint
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        # storage slots from oldest to newest
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.cursor) % self.capacity

    def item(self, i: int) -> Transition:
        j = int(self._order()[i])
        return Transition(self.s[j].copy(), float(self.u_tilde[j]), float(self.r[j]),
                          self.s_next[j].copy(), float(self.a_next_hint[j]))

    def items(self) -> list[Transition]:
        return [self.item(i) for i in range(self.size)]

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise UsageError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=n)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        idx = self.sample_indices(n, rng)
        return Batch(self.s[idx], self.u_tilde[idx], self.r[idx],
                     self.s_next[idx], self.a_next_hint[idx])


def replay_push(buf: ReplayBuffer, t: Transition) -> None:
    buf.push(t)


def replay_sample(buf: ReplayBuffer, n: int, rng: np.random.Generator) -> Batch:
    return buf.sample(n, rng)


# ------------------------------------------------------------ agent

@dataclass
class LacAgent:
    actor: GaussianActor
    critic: Mlp
    critic_target: Mlp
    cfg: LacConfig
    actor_opt: AdamState
    critic_opt: AdamState
    log_beta: np.ndarray
    log_lambda: np.ndarray
    beta_opt: AdamState
    lambda_opt: AdamState
    updates: int = 0

    @classmethod
    def create(cls, state_dim: int, cfg: LacConfig, rng: np.random.Generator) -> "LacAgent":
        dtype = np.dtype(cfg.dtype)
        actor = GaussianActor.init(state_dim, cfg.hidden, rng, dtype)
        critic = Mlp.init([state_dim + 1, *cfg.hidden, cfg.critic_features], rng, dtype)
        return cls.from_networks(actor, critic, critic.copy(), cfg)

    @classmethod
    def from_networks(cls, actor: GaussianActor, critic: Mlp, critic_target: Mlp,
                      cfg: LacConfig) -> "LacAgent":
        if critic_target.sizes != critic.sizes:
            raise ValueError("target critic must mirror the critic architecture")
        with np.errstate(divide="ignore"):
            log_beta = np.array(np.log(cfg.init_beta))
            log_lambda = np.array(np.log(cfg.init_lambda))
        return cls(actor, critic, critic_target, cfg,
                   AdamState.for_params(actor.net.params, cfg.lr_actor),
                   AdamState.for_params(critic.params, cfg.lr_critic),
                   log_beta, log_lambda,
                   AdamState.for_params([log_beta], cfg.lr_dual),
                   AdamState.for_params([log_lambda], cfg.lr_dual))

    @property
    def state_dim(self) -> int:
        return self.actor.net.sizes[0]

    @property
    def dtype(self):
        return self.actor.net.dtype

    @property
    def beta(self) -> float:
        return max(0.0, float(np.exp(self.log_beta)))

    @property
    def lam(self) -> float:
        value = max(0.0, float(np.exp(self.log_lambda)))
        if self.cfg.lambda_max is not None:
            value = min(value, self.cfg.lambda_max)
        return value


def _critic_input(s, a) -> np.ndarray:
    s = np.asarray(s)
    a = np.asarray(a, dtype=s.dtype)
    if s.ndim == 1:
        return np.concatenate([s, np.atleast_1d(a)])
    return np.concatenate([s, a.reshape(-1, 1)], axis=1)


def lyapunov_value(critic: Mlp, s, a):
    """L(s, a) = |f(s, a)|^2 for one pair or a batch."""
    f = forward(critic, _critic_input(s, a))
    out = np.sum(f * f, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def critic_target(r, s_next, a_next, agent: LacAgent):
    """Regression target ``-r + gamma * L'(s', a')`` (target network, no gradient)."""
    if agent.cfg.literal_target:
        return -np.asarray(r) + lyapunov_value(agent.critic, s_next, a_next)
    return -np.asarray(r) + agent.cfg.gamma * lyapunov_value(agent.critic_target, s_next, a_next)


def _check_batch(batch: Batch) -> None:
    if batch.size == 0:
        raise UsageError("update called with an empty batch")


def critic_loss_grads(agent: LacAgent, batch: Batch, a_next):
    """Mean of 1/2 (L(s,u) - target)^2 and its gradient w.r.t. the critic parameters.

    Also returns L(s, u) so the actor step can reuse it.
    """
    n = batch.size
    target = critic_target(batch.r, batch.s_next, a_next, agent)
    cache = forward_cached(agent.critic, _critic_input(batch.s, batch.u_tilde))
    f = cache.output
    l_sa = np.sum(f * f, axis=1)
    err = l_sa - target
    loss = 0.5 * float(np.mean(err * err))
    grads, _ = backward(agent.critic, cache, (2.0 / n) * err[:, None] * f)
    return loss, grads, l_sa


def _next_actions(agent: LacAgent, batch: Batch, rng: np.random.Generator) -> np.ndarray:
    if agent.cfg.use_stored_next_action:
        return batch.a_next_hint
    noise = rng.standard_normal(batch.size).astype(agent.dtype)
    return actor_forward(agent.actor, batch.s_next, noise).action


def critic_update(agent: LacAgent, batch: Batch, rng: np.random.Generator) -> float:
    """One Adam step on the critic; returns the pre-step loss."""
    _check_batch(batch)
    batch = batch.astype(agent.dtype)
    loss, grads, _ = critic_loss_grads(agent, batch, _next_actions(agent, batch, rng))
    adam_step(agent.critic.params, grads, agent.critic_opt)
    return loss


def polyak_update(agent: LacAgent) -> None:
    tau = agent.cfg.tau
    for target, online in zip(agent.critic_target.params, agent.critic.params):
        target *= 1.0 - tau
        target += tau * online


@dataclass
class ActorStats:
    loss: float
    entropy_gap: float   # mean(log pi + H_t)
    lyapunov_gap: float  # mean(L(s', a') - L(s, u) + alpha3 * c)
    apass: ActorPass = field(repr=False)


def actor_loss_grads(agent: LacAgent, batch: Batch, noise, l_sa=None,
                     apass: ActorPass | None = None):
    """Actor objective and its parameter gradient.

    ``noise`` holds 2n standard-normal draws: the first n reparameterise the
    sample at s (entropy term), the last n the fresh action at s'.  Gradients
    do not flow into the critic parameters.
    """
    n = batch.size
    cfg = agent.cfg
    beta, lam = agent.beta, agent.lam
    if apass is None:
        apass = actor_forward(agent.actor, np.concatenate([batch.s, batch.s_next]), noise)
    logp = apass.log_prob[:n]
    a_next = apass.action[n:]
    if l_sa is None:
        l_sa = lyapunov_value(agent.critic, batch.s, batch.u_tilde)
    cache = forward_cached(agent.critic, _critic_input(batch.s_next, a_next))
    f = cache.output
    l_next = np.sum(f * f, axis=1)
    cost = -batch.r
    lyap_term = l_next - l_sa + cfg.alpha3 * cost
    ent_term = logp + cfg.target_entropy
    loss = float(beta * np.mean(ent_term) + lam * np.mean(lyap_term))

    d_action = np.zeros(2 * n, dtype=apass.action.dtype)
    d_logp = np.zeros(2 * n, dtype=apass.action.dtype)
    d_logp[:n] = beta / n
    if lam != 0.0:
        _, dx = backward(agent.critic, cache, (2.0 * lam / n) * f,
                         input_grad=True, param_grads=False)
        d_action[n:] = dx[:, -1]
    grads = actor_backward(agent.actor, apass, d_action, d_logp)
    return grads, ActorStats(loss, float(np.mean(ent_term)), float(np.mean(lyap_term)), apass)


def dual_update(agent: LacAgent, entropy_gap: float, lyapunov_gap: float) -> None:
    """Projected ascent on log(beta) and log(lambda)."""
    adam_step([agent.log_beta], [np.array(-entropy_gap)], agent.beta_opt)
    adam_step([agent.log_lambda], [np.array(-lyapunov_gap)], agent.lambda_opt)
    if agent.cfg.lambda_max is not None:
        np.minimum(agent.log_lambda, math.log(agent.cfg.lambda_max), out=agent.log_lambda)


def actor_update(agent: LacAgent, batch: Batch, rng: np.random.Generator) -> float:
    """One Adam step on the actor followed by the multiplier updates."""
    _check_batch(batch)
    batch = batch.astype(agent.dtype)
    noise = rng.standard_normal(2 * batch.size).astype(agent.dtype)
    grads, stats = actor_loss_grads(agent, batch, noise)
    adam_step(agent.actor.net.params, grads, agent.actor_opt)
    dual_update(agent, stats.entropy_gap, stats.lyapunov_gap)
    return stats.loss


@dataclass
class LearnStats:
    critic_loss: float
    actor_loss: float
    beta: float
    lam: float


def learn(agent: LacAgent, batch: Batch, rng: np.random.Generator) -> LearnStats:
    """Critic, actor, multiplier and target updates from one batch.

    All losses are evaluated at the pre-update parameters, which lets the
    actor pass at s' double as the fresh next action in the critic target.
    """
    _check_batch(batch)
    batch = batch.astype(agent.dtype)
    n = batch.size
    noise = rng.standard_normal(2 * n).astype(agent.dtype)
    apass = actor_forward(agent.actor, np.concatenate([batch.s, batch.s_next]), noise)
    a_next = batch.a_next_hint if agent.cfg.use_stored_next_action else apass.action[n:]
    c_loss, c_grads, l_sa = critic_loss_grads(agent, batch, a_next)
    a_grads, stats = actor_loss_grads(agent, batch, noise, l_sa=l_sa, apass=apass)
    adam_step(agent.critic.params, c_grads, agent.critic_opt)
    adam_step(agent.actor.net.params, a_grads, agent.actor_opt)
    dual_update(agent, stats.entropy_gap, stats.lyapunov_gap)
    polyak_update(agent)
    agent.updates += 1
    return LearnStats(c_loss, stats.loss, agent.beta, agent.lam)
