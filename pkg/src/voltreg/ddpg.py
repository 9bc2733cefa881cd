"""Deterministic-policy actor-critic learner with replay and target nets.

The actor maps the flattened exogenous state to an action in [-1, 1]^m
(tanh output); the critic scores (state, action) pairs.  Targets use slowly
tracking copies of both nets; exploration adds clipped Gaussian noise whose
scale starts decaying once the replay buffer first fills.  All updates are
plain SGD on the batch losses.

With the default discount of zero the critic is a pure regression of the
immediate reward on (s, a); the bootstrap term is kept for nonzero discounts
and is zeroed at episode terminals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .nn import Mlp, soft_update

log = logging.getLogger(__name__)


@dataclass
class AgentConfig:
    gamma: float = 0.0
    lr_actor: float = 1e-3
    lr_critic: float = 2e-3
    tau: float = 0.005
    batch: int = 256
    buffer_capacity: int = 100_000
    sigma0: float = 0.2
    xi: float = 0.9995
    episodes: int = 5000
    hidden: tuple[int, ...] = (400, 200)

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if min(self.lr_actor, self.lr_critic, self.tau, self.sigma0 + 1e-300) <= 0 \
                or self.tau > 1.0:
            raise ValueError("rates must be positive (tau in (0, 1])")
        if not 0.0 < self.xi <= 1.0:
            raise ValueError("xi must be in (0, 1]")
        if self.batch > self.buffer_capacity:
            raise ValueError("batch cannot exceed buffer capacity")


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring store; overwrites the oldest transition once full.

    Batches are drawn uniformly without replacement.
    """

    def __init__(self, capacity, state_dim, action_dim):
        if capacity <= 0:
            raise ValueError("capacity must be > 0")
        self.capacity = int(capacity)
        self._s = np.empty((capacity, state_dim))
        self._a = np.empty((capacity, action_dim))
        self._r = np.empty(capacity)
        self._s_next = np.empty((capacity, state_dim))
        self._terminal = np.empty(capacity, dtype=bool)
        self._cursor = 0
        self._size = 0

    def __len__(self):
        return self._size

    @property
    def full(self):
        return self._size == self.capacity

    def store(self, s, a, r, s_next, terminal):
        k = self._cursor
        self._s[k] = s
        self._a[k] = a
        self._r[k] = r
        self._s_next[k] = s_next
        self._terminal[k] = terminal
        self._cursor = (k + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch, rng):
        if batch > self._size:
            raise ValueError("not enough stored transitions")
        rows = rng.choice(self._size, size=batch, replace=False)
        return Batch(s=self._s[rows], a=self._a[rows], r=self._r[rows],
                     s_next=self._s_next[rows], terminal=self._terminal[rows])


def select_action(actor, s, sigma, rng):
    """Policy output plus clipped Gaussian exploration noise.

    sigma = 0 returns the deterministic policy action.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    a = actor.forward(s)
    if sigma > 0:
        a = a + rng.normal(0.0, sigma, size=a.shape)
    return np.clip(a, -1.0, 1.0)


def critic_target(batch, target_actor, target_critic, gamma):
    """Bootstrap targets y = r + gamma * Q'(s', mu'(s')), zeroed at terminals."""
    if gamma == 0.0:
        return batch.r.copy()
    a_next = target_actor.forward(batch.s_next)
    q_next = target_critic.forward(np.hstack([batch.s_next, a_next]))[:, 0]
    return batch.r + gamma * np.where(batch.terminal, 0.0, q_next)


def update_critic(critic, batch, y, lr):
    """One SGD step on the batch-mean squared Bellman error; returns the
    pre-step loss."""
    x = np.hstack([batch.s, batch.a])
    q, cache = critic.forward_cached(x)
    err = q[:, 0] - y
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise FloatingPointError("critic loss is not finite")
    grads, _ = critic.backward(cache, (2.0 * err / err.size)[:, None])
    critic.sgd_step(grads, lr)
    return loss


def update_actor(actor, critic, states, lr):
    """Ascend the deterministic policy gradient; returns the gradient norm.

    Chains the critic's action gradient at a = mu(s) through the actor's
    parameter Jacobian, batch-averaged.
    """
    a, actor_cache = actor.forward_cached(states)
    x = np.hstack([states, a])
    _, critic_cache = critic.forward_cached(x)
    n = states.shape[0]
    # dJ/dQ = 1/n per sample; minus sign turns SGD into ascent
    _, grad_in = critic.backward(critic_cache, np.full((n, 1), 1.0 / n))
    grad_a = grad_in[:, states.shape[1]:]
    grads, _ = actor.backward(actor_cache, -grad_a)
    actor.sgd_step(grads, lr)
    return float(np.sqrt(sum(float((dw * dw).sum() + (db * db).sum())
                             for dw, db in grads)))


def build_actor(state_dim, action_dim, hidden, seed):
    return Mlp.init([state_dim, *hidden, action_dim],
                    hidden_act="tanh", out_act="scaled_tanh", seed=seed)


def build_critic(state_dim, action_dim, hidden, seed):
    return Mlp.init([state_dim + action_dim, *hidden, 1],
                    hidden_act="tanh", out_act="linear", seed=seed)


@dataclass
class TrainResult:
    actor: Mlp
    critic: Mlp
    returns: np.ndarray          # per-episode cumulative reward
    episode_days: np.ndarray
    sigma_final: float
    updates: int
    nonconverged_steps: int


def train(env, cfg, seed, days=None):
    """Run the episodic training loop against the env's backend.

    days restricts episode sampling to a subset of profile days (defaults to
    all).  Target nets start as copies of the online nets; updates begin once
    the buffer holds one batch; noise decays per step after the buffer first
    fills.  Deterministic for fixed (env, cfg, seed).
    """
    rng = np.random.default_rng(seed)
    actor = build_actor(env.state_dim, env.action_dim, cfg.hidden,
                        seed=rng.integers(2 ** 31))
    critic = build_critic(env.state_dim, env.action_dim, cfg.hidden,
                          seed=rng.integers(2 ** 31))
    target_actor = actor.copy()
    target_critic = critic.copy()
    buffer = ReplayBuffer(cfg.buffer_capacity, env.state_dim, env.action_dim)

    if days is None:
        days = np.arange(env.profiles.n_days)
    days = np.asarray(days)

    sigma = cfg.sigma0
    returns = np.empty(cfg.episodes)
    episode_days = np.empty(cfg.episodes, dtype=int)
    updates = 0
    nonconverged = 0
    for ep in range(cfg.episodes):
        day = int(days[rng.integers(len(days))])
        episode_days[ep] = day
        state = env.state(day, 0)
        ep_return = 0.0
        for hour in range(24):
            flat = env.flatten(state)
            action = select_action(actor, flat, sigma, rng)
            result = env.step(state, action)
            if not result.converged:
                nonconverged += 1
            ep_return += result.reward
            terminal = hour == 23
            if terminal:
                flat_next = np.zeros_like(flat)
            else:
                state = env.state(day, hour + 1)
                flat_next = env.flatten(state)
            buffer.store(flat, action, result.reward, flat_next, terminal)

            if buffer.full:
                sigma *= cfg.xi
            if len(buffer) >= cfg.batch:
                batch = buffer.sample(cfg.batch, rng)
                y = critic_target(batch, target_actor, target_critic, cfg.gamma)
                update_critic(critic, batch, y, cfg.lr_critic)
                update_actor(actor, critic, batch.s, cfg.lr_actor)
                soft_update(target_critic, critic, cfg.tau)
                soft_update(target_actor, actor, cfg.tau)
                updates += 1
        returns[ep] = ep_return
        if (ep + 1) % 500 == 0:
            recent = returns[max(0, ep - 99):ep + 1].mean()
            log.info("episode %d: mean return (last 100) %.3f, sigma %.4f",
                     ep + 1, recent, sigma)
    if nonconverged:
        log.warning("%d non-converged steps during training", nonconverged)
    return TrainResult(actor=actor, critic=critic, returns=returns,
                       episode_days=episode_days, sigma_final=sigma,
                       updates=updates, nonconverged_steps=nonconverged)


# -- evaluation ---------------------------------------------------------------

@dataclass
class EvalReport:
    """Voltage-deviation statistics of one method over the evaluation days.

    Percentages are relative to v0; drops/rises measure below/above v0.
    """

    method: str
    avg_dev_pct: float
    avg_dev_phase_pct: dict[str, float]
    max_drop_pct: float
    max_rise_pct: float
    violations: int


@dataclass
class EvalDetails:
    days: np.ndarray
    v_mag: np.ndarray              # (n_days, 24, nph)
    rewards: np.ndarray            # (n_days, 24)
    violations_per_day: np.ndarray
    nonconverged_steps: int


def evaluate(actor, env, days, method=None):
    """Greedy rollout (no noise) over the given days; actor None means the
    no-control baseline (zero reactive setpoints everywhere).

    Evaluation always runs on the env's backend; pass a true-model env for
    reporting.  Non-converged steps are excluded from the statistics and
    counted in the details.
    """
    feeder = env.feeder
    cfg = env.reward_cfg
    ns = feeder.nonslack_indices
    days = np.asarray(days)
    v_all = np.full((len(days), 24, feeder.nph), np.nan)
    rewards = np.zeros((len(days), 24))
    viol_day = np.zeros(len(days), dtype=int)
    nonconverged = 0
    if method is None:
        method = "no-control" if actor is None else "policy"

    for di, day in enumerate(days):
        for hour in range(24):
            state = env.state(int(day), hour)
            if actor is None:
                action = np.zeros(env.action_dim)
                # an SVC midpoint is not zero VAr unless its box is symmetric;
                # force true zero output for the baseline
                lo, hi = feeder.svc_q_min_pu, feeder.svc_q_max_pu
                if env.action_dim > len(feeder.pvs):
                    action[len(feeder.pvs):] = np.where(
                        hi > lo, 2.0 * (0.0 - lo) / (hi - lo) - 1.0, 0.0)
            else:
                action = select_action(actor, env.flatten(state), 0.0, None)
            result = env.step(state, action)
            rewards[di, hour] = result.reward
            if not result.converged:
                nonconverged += 1
                continue
            v_all[di, hour] = result.v_mag
            viol_day[di] += result.violations

    valid = ~np.isnan(v_all[:, :, 0])
    mags = v_all[valid][:, ns]
    dev = np.abs(mags - cfg.v0) / cfg.v0
    phase_pct = {}
    for ph in ("a", "b", "c"):
        cols = feeder.phase_labels[ns] == ph
        phase_pct[ph] = float(dev[:, cols].mean() * 100.0) if cols.any() else 0.0
    report = EvalReport(
        method=method,
        avg_dev_pct=float(dev.mean() * 100.0),
        avg_dev_phase_pct=phase_pct,
        max_drop_pct=float(max(0.0, (cfg.v0 - mags.min()) / cfg.v0 * 100.0)),
        max_rise_pct=float(max(0.0, (mags.max() - cfg.v0) / cfg.v0 * 100.0)),
        violations=int(viol_day.sum()),
    )
    details = EvalDetails(days=days, v_mag=v_all, rewards=rewards,
                          violations_per_day=viol_day,
                          nonconverged_steps=nonconverged)
    return report, details
