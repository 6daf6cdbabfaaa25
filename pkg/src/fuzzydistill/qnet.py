"""Teacher Q-network and a generic deep-Q training loop.

The loop trains any Q-function object exposing this surface:

    n_actions                       int
    q_values(obs) -> (k,)           action values for one observation
    batch_q(states) -> (B, k)
    batch_q_with_mask(states) -> ((B, k), (B,) bool)   mask marks usable rows
    backward_batch(states, grad_q) -> dict             grads of sum(grad_q * Q)
    params() -> dict                live parameter arrays, fixed order
    copy()                          deep copy (target nets, snapshots)
    post_update()                   parameter cleanup after an optimizer step
    greedy(obs) -> int              argmax action, lowest index on ties

Both MlpQNetwork and the neuro-fuzzy controller implement it, so the same
loop trains the teacher and the direct-RL fuzzy baseline.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .stats import EpisodeStats
from .util import fmt_array, parse_floats, rng_for, seed_int

log = logging.getLogger(__name__)


class DimensionMismatch(ValueError):
    """Input vector length does not match the network's input dimension."""


class NonFiniteLoss(FloatingPointError):
    """Training loss became NaN or infinite; the run is aborted."""


# ---------------------------------------------------------------------------
# Q-network


class MlpQNetwork:
    """One hidden ReLU layer with explicit weight arrays and analytic gradients."""

    def __init__(self, input_dim: int, output_dim: int, hidden_dim: int = 64,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        self.output_dim = int(output_dim)
        self.W1 = rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(hidden_dim, input_dim))
        self.b1 = np.zeros(hidden_dim)
        self.W2 = rng.normal(0.0, np.sqrt(1.0 / hidden_dim), size=(output_dim, hidden_dim))
        self.b2 = np.zeros(output_dim)

    @property
    def n_actions(self) -> int:
        return self.output_dim

    def params(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "MlpQNetwork":
        dup = MlpQNetwork.__new__(MlpQNetwork)
        dup.input_dim = self.input_dim
        dup.hidden_dim = self.hidden_dim
        dup.output_dim = self.output_dim
        dup.W1 = self.W1.copy()
        dup.b1 = self.b1.copy()
        dup.W2 = self.W2.copy()
        dup.b2 = self.b2.copy()
        return dup

    def q_values(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        if obs.shape != (self.input_dim,):
            raise DimensionMismatch(f"expected state of length {self.input_dim}, got shape {obs.shape}")
        hidden = np.maximum(self.W1 @ obs + self.b1, 0.0)
        return self.W2 @ hidden + self.b2

    def batch_q(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        if states.ndim != 2 or states.shape[1] != self.input_dim:
            raise DimensionMismatch(f"expected (B, {self.input_dim}) states, got {states.shape}")
        hidden = np.maximum(states @ self.W1.T + self.b1, 0.0)
        return hidden @ self.W2.T + self.b2

    def batch_q_with_mask(self, states):
        q = self.batch_q(states)
        return q, np.ones(len(q), dtype=bool)

    def backward_batch(self, states, grad_q) -> dict:
        """Gradients of sum(grad_q * Q(states)) w.r.t. every parameter."""
        states = np.asarray(states, dtype=float)
        grad_q = np.asarray(grad_q, dtype=float)
        z1 = states @ self.W1.T + self.b1
        hidden = np.maximum(z1, 0.0)
        d_w2 = grad_q.T @ hidden
        d_b2 = grad_q.sum(axis=0)
        d_hidden = grad_q @ self.W2
        d_z1 = d_hidden * (z1 > 0.0)
        d_w1 = d_z1.T @ states
        d_b1 = d_z1.sum(axis=0)
        return {"W1": d_w1, "b1": d_b1, "W2": d_w2, "b2": d_b2}

    def post_update(self) -> None:
        pass

    def greedy(self, obs) -> int:
        return int(np.argmax(self.q_values(obs)))


WEIGHTS_MAGIC = "mlp-q v1"


def save_weights(net: MlpQNetwork, path) -> None:
    """Versioned flat text format; parses back bit-exact."""
    lines = [
        WEIGHTS_MAGIC,
        f"dims {net.input_dim} {net.hidden_dim} {net.output_dim}",
    ]
    for name, arr in net.params().items():
        lines.append(f"{name} {fmt_array(arr)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_weights(path) -> MlpQNetwork:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != WEIGHTS_MAGIC:
        raise ValueError(f"{path}: not a {WEIGHTS_MAGIC} weights file")
    _, m, h, k = lines[1].split()
    net = MlpQNetwork(int(m), int(k), hidden_dim=int(h), rng=np.random.default_rng(0))
    shapes = {"W1": (net.hidden_dim, net.input_dim), "b1": (net.hidden_dim,),
              "W2": (net.output_dim, net.hidden_dim), "b2": (net.output_dim,)}
    for line in lines[2:]:
        name, _, payload = line.partition(" ")
        values = np.array(parse_floats(payload)).reshape(shapes[name])
        setattr(net, name, values)
    return net


# ---------------------------------------------------------------------------
# Replay memory and transitions


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer with oldest-first eviction."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._items: list = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, item) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._cursor] = item
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list:
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


@dataclass
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    @classmethod
    def from_transitions(cls, transitions: list) -> "TransitionBatch":
        return cls(
            states=np.array([t.state for t in transitions], dtype=float),
            actions=np.array([t.action for t in transitions], dtype=int),
            rewards=np.array([t.reward for t in transitions], dtype=float),
            next_states=np.array([t.next_state for t in transitions], dtype=float),
            dones=np.array([t.done for t in transitions], dtype=bool),
        )


# ---------------------------------------------------------------------------
# Optimizer


class GradientOptimizer:
    """Gradient descent with optional momentum and RMS per-parameter scaling."""

    def __init__(self, params: dict, lr: float, momentum: float = 0.0,
                 rms: bool = False, rms_rho: float = 0.99, eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.rms = bool(rms)
        self.rms_rho = float(rms_rho)
        self.eps = float(eps)
        self._velocity = {k: np.zeros_like(v) for k, v in params.items()} if momentum else None
        self._second = {k: np.zeros_like(v) for k, v in params.items()} if rms else None

    def step(self, grads: dict) -> None:
        for name, p in self.params.items():
            g = grads[name]
            if self.rms:
                s = self._second[name]
                s *= self.rms_rho
                s += (1.0 - self.rms_rho) * g * g
                g = g / (np.sqrt(s) + self.eps)
            if self._velocity is not None:
                v = self._velocity[name]
                v *= self.momentum
                v += g
                g = v
            p -= self.lr * g


def make_optimizer(params: dict, kind: str, lr: float, momentum: float = 0.9,
                   rms_rho: float = 0.99) -> GradientOptimizer:
    if kind == "sgd":
        return GradientOptimizer(params, lr)
    if kind == "momentum":
        return GradientOptimizer(params, lr, momentum=momentum)
    if kind == "rmsprop":
        return GradientOptimizer(params, lr, rms=True, rms_rho=rms_rho)
    raise ValueError(f"unknown optimizer {kind!r}; choose sgd, momentum, or rmsprop")


# ---------------------------------------------------------------------------
# DQN pieces


@dataclass
class DqnConfig:
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 10_000
    lr: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 50_000
    target_sync: int = 500
    learning_starts: int = 1_000
    max_episodes: int = 400
    hidden_dim: int = 64
    optimizer: str = "rmsprop"
    momentum: float = 0.9
    rms_rho: float = 0.99
    eval_every: int = 10
    eval_episodes: int = 5
    early_stop_reward: float | None = None


def epsilon_by_step(cfg: DqnConfig, step: int) -> float:
    if cfg.eps_decay_steps <= 0:
        return cfg.eps_end
    frac = min(step / cfg.eps_decay_steps, 1.0)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def epsilon_greedy(q_values, eps: float, rng: np.random.Generator) -> int:
    """Uniform random action with probability eps, else argmax (lowest index on ties)."""
    q_values = np.asarray(q_values)
    if rng.random() < eps:
        return int(rng.integers(len(q_values)))
    return int(np.argmax(q_values))


def bellman_target(batch: TransitionBatch, target_qf, gamma: float) -> np.ndarray:
    """r_i for terminal transitions, else r_i + gamma * max_a Q_target(s'_i, a)."""
    next_q = target_qf.batch_q(batch.next_states)
    return batch.rewards + gamma * next_q.max(axis=1) * (~batch.dones)


def bellman_loss_and_grads(qf, target_qf, batch: TransitionBatch, gamma: float):
    """Mean squared Bellman error on the batch plus its parameter gradients.

    Gradients flow only through Q(s, a); the target is held fixed. Rows the
    Q-function flags as unusable are dropped from the mean and counted.
    Returns (loss, grads_or_None, n_skipped).
    """
    q_pred, valid = qf.batch_q_with_mask(batch.states)
    n_skipped = int((~valid).sum())
    n_valid = int(valid.sum())
    if n_valid == 0:
        return 0.0, None, n_skipped
    targets = bellman_target(batch, target_qf, gamma)
    rows = np.arange(len(batch.actions))
    err = q_pred[rows, batch.actions] - targets
    err = np.where(valid, err, 0.0)
    loss = float((err * err).sum() / n_valid)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"Bellman loss is {loss}")
    grad_q = np.zeros_like(q_pred)
    grad_q[rows, batch.actions] = 2.0 * err / n_valid
    grads = qf.backward_batch(batch.states, grad_q)
    return loss, grads, n_skipped


def dqn_train_step(qf, target_qf, batch: TransitionBatch, gamma: float,
                   optimizer: GradientOptimizer):
    """One gradient step on the mean squared Bellman error; returns pre-step loss."""
    loss, grads, n_skipped = bellman_loss_and_grads(qf, target_qf, batch, gamma)
    if grads is not None:
        optimizer.step(grads)
        qf.post_update()
    return loss, n_skipped


# ---------------------------------------------------------------------------
# Rollouts and the training loop


def greedy_rollout(policy, env, seed: int) -> float:
    """Total reward of one greedy episode on a freshly seeded environment."""
    state = env.reset(seed)
    total = 0.0
    while not state.done:
        result = env.step(policy.greedy(state.observation))
        total += result.reward
        state = env.state
    return total


def eval_median(policy, env, episodes: int, seed: int) -> float:
    rewards = [greedy_rollout(policy, env, seed_int(seed, "ep", i)) for i in range(episodes)]
    return float(np.median(rewards))


@dataclass
class TrainResult:
    model: object
    stats: list[EpisodeStats] = field(default_factory=list)
    degenerate_skipped: int = 0


def dqn_train(qf, env, cfg: DqnConfig, seed: int, on_step=None) -> TrainResult:
    """Generic episodic DQN loop: per-step replay sampling, train step, and
    periodic hard target sync. Returns the best-evaluating snapshot."""
    explore_rng = rng_for(seed, "explore")
    sample_rng = rng_for(seed, "replay")
    buffer = ReplayBuffer(cfg.buffer_capacity)
    target = qf.copy()
    optimizer = make_optimizer(qf.params(), cfg.optimizer, cfg.lr, cfg.momentum, cfg.rms_rho)
    eval_env = type(env)()
    warmup = max(cfg.learning_starts, cfg.batch_size)

    best = qf.copy()
    best_score = -np.inf
    evaluated = False
    stats: list[EpisodeStats] = []
    skipped_total = 0
    global_step = 0

    for episode in range(cfg.max_episodes):
        t0 = time.perf_counter()
        state = env.reset(seed_int(seed, "episode", episode))
        ep_reward = 0.0
        losses: list[float] = []
        while not state.done:
            eps = epsilon_by_step(cfg, global_step)
            action = epsilon_greedy(qf.q_values(state.observation), eps, explore_rng)
            obs = state.observation
            result = env.step(action)
            # bootstrap through step-cap truncation: only genuinely terminal
            # observations cut the Bellman target off
            terminal = result.done and env.terminal_observation(result.next_observation)
            buffer.push(Transition(obs, action, result.reward, result.next_observation, terminal))
            state = env.state
            ep_reward += result.reward
            global_step += 1
            if len(buffer) >= warmup:
                batch = TransitionBatch.from_transitions(buffer.sample(cfg.batch_size, sample_rng))
                loss, n_skipped = dqn_train_step(qf, target, batch, cfg.gamma, optimizer)
                losses.append(loss)
                skipped_total += n_skipped
                if global_step % cfg.target_sync == 0:
                    target = qf.copy()
            if on_step is not None:
                on_step(global_step, qf, target)
        row = EpisodeStats(
            episode=episode,
            train_reward=ep_reward,
            loss_mean=float(np.mean(losses)) if losses else float("nan"),
            wall_time=time.perf_counter() - t0,
        )
        if (episode + 1) % cfg.eval_every == 0 or episode + 1 == cfg.max_episodes:
            # fixed eval starts: snapshots compete on the same episodes, so
            # picking the best is a paired comparison, not a seed lottery
            score = eval_median(qf, eval_env, cfg.eval_episodes, seed_int(seed, "eval"))
            row.eval_median = score
            evaluated = True
            if score >= best_score:
                best_score = score
                best = qf.copy()
            log.info("%s episode %d: train reward %.1f, eval median %.1f",
                     env.name, episode, ep_reward, score)
            stats.append(row)
            if cfg.early_stop_reward is not None and score >= cfg.early_stop_reward:
                # the fixed starts can flatter a snapshot; confirm on twice as
                # many fresh ones before stopping
                confirm = eval_median(qf, eval_env, 2 * cfg.eval_episodes,
                                      seed_int(seed, "confirm", episode))
                if confirm >= cfg.early_stop_reward:
                    break
        else:
            stats.append(row)

    model = qf
    if evaluated:
        # the paired-eval winner and the final network compete once more on
        # fresh starts; this drops snapshots that only flattered the fixed set
        select_seed = seed_int(seed, "final-select")
        best_fresh = eval_median(best, eval_env, 2 * cfg.eval_episodes, select_seed)
        current_fresh = eval_median(qf, eval_env, 2 * cfg.eval_episodes, select_seed)
        model = qf if current_fresh >= best_fresh else best
    return TrainResult(model=model, stats=stats, degenerate_skipped=skipped_total)


def train_teacher(env, cfg: DqnConfig, seed: int) -> TrainResult:
    """Train a fresh MLP teacher on the environment with the generic loop."""
    net = MlpQNetwork(env.obs_dim, env.n_actions, hidden_dim=cfg.hidden_dim,
                      rng=rng_for(seed, "init"))
    if cfg.max_episodes <= 0:
        return TrainResult(model=net, stats=[])
    return dqn_train(net, env, cfg, seed)
