"""Policy distillation into the neuro-fuzzy controller, and the direct-RL
fuzzy baseline.

Distillation follows epsilon-greedy student trajectories: at every
environment step the teacher is queried on the visited state, the
(state, teacher-Q) pair enters a replay memory, and one gradient step runs
on a sampled minibatch. The loss is a temperature KL divergence between the
softened teacher distribution and the student's softmax, plus two
interpretability penalties: one pulls the widths of overlapping sets in the
same input dimension together so they merge cleanly later, the other is an
L1 penalty on max-normalized importance weights that starves unimportant
antecedent terms.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nfc import NeuroFuzzyController
from .qnet import (
    DqnConfig,
    NonFiniteLoss,
    ReplayBuffer,
    TrainResult,
    dqn_train,
    epsilon_greedy,
    eval_median,
    make_optimizer,
)
from .stats import EpisodeStats
from .util import rng_for, seed_int

log = logging.getLogger(__name__)


@dataclass
class DistillConfig:
    tau: float = 0.1
    eps: float = 0.05
    lam_merge: float = 1.0
    lam_tnorm: float = 0.5
    batch: int = 64
    buffer_capacity: int = 10_000
    lr: float = 5e-3
    episodes: int = 20
    eval_interval: int = 1
    eval_episodes: int = 5
    optimizer: str = "rmsprop"
    momentum: float = 0.9
    rms_rho: float = 0.99


# ---------------------------------------------------------------------------
# Softmax / KL


def temperature_softmax(z, tau: float) -> np.ndarray:
    """Softmax of z / tau, computed with max subtraction for stability."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(z, dtype=float) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def kl_loss(q_teacher, q_student, tau: float) -> float:
    """KL between the tau-softened teacher distribution and the plain student softmax."""
    q_teacher = np.asarray(q_teacher, dtype=float)
    q_student = np.asarray(q_student, dtype=float)
    if q_teacher.shape != q_student.shape:
        raise ValueError("teacher and student Q-vectors must have the same length")
    p = temperature_softmax(q_teacher, tau)
    log_p = _log_softmax(q_teacher / tau)
    log_s = _log_softmax(q_student)
    return max(float((p * (log_p - log_s)).sum()), 0.0)


def _kl_batch(q_teacher, q_student, tau: float):
    """Per-row KL values and the gradient of each row w.r.t. the student logits."""
    p = temperature_softmax(q_teacher, tau)
    log_p = _log_softmax(np.asarray(q_teacher, dtype=float) / tau)
    log_s = _log_softmax(q_student)
    rows = np.maximum((p * (log_p - log_s)).sum(axis=1), 0.0)
    grad = np.exp(log_s) - p
    return rows, grad


# ---------------------------------------------------------------------------
# Interpretability regularizers


def merge_regularizer(ctrl: NeuroFuzzyController) -> float:
    return _merge_regularizer_grads(ctrl)[0]


def _merge_regularizer_grads(ctrl: NeuroFuzzyController):
    """Sum over input dims and ordered rule pairs of |dsigma| / (1 + |dmu|).

    Large when two sets of the same input overlap strongly (close centers)
    but have very different widths, which is exactly the configuration that
    resists merging. Pairs involving an inactive term are excluded.
    """
    mu, sigma, act = ctrl.mu, ctrl.sigma, ctrl.active
    pair = act[:, :, None] & act[:, None, :]
    ds = sigma[:, :, None] - sigma[:, None, :]
    dm = mu[:, :, None] - mu[:, None, :]
    u = 1.0 + np.abs(dm)
    term = np.where(pair, np.abs(ds) / u, 0.0)
    value = float(term.sum())
    sign_s = np.where(pair, np.sign(ds), 0.0)
    sign_m = np.where(pair, np.sign(dm), 0.0)
    d_sigma = 2.0 * (sign_s / u).sum(axis=2)
    d_mu = -2.0 * (np.abs(ds) * sign_m / (u * u)).sum(axis=2)
    d_sigma = np.where(act, d_sigma, 0.0)
    d_mu = np.where(act, d_mu, 0.0)
    return value, d_mu, d_sigma


def tnorm_regularizer(ctrl: NeuroFuzzyController) -> float:
    return _tnorm_regularizer_grads(ctrl)[0]


def _tnorm_regularizer_grads(ctrl: NeuroFuzzyController):
    """L1 penalty on max-normalized importance weights of active terms.

    Each rule's largest weight contributes exactly 1, so the penalty cannot
    be gamed by shrinking all weights together; it only rewards making terms
    unimportant relative to their rule's dominant term.
    """
    w = np.where(ctrl.active, ctrl.weights(), 0.0)
    wmax = w.max(axis=0)
    safe = wmax > 0
    denom = np.where(safe, wmax, 1.0)
    wn = w / denom
    wn[:, ~safe] = 0.0
    value = float(wn.sum())

    istar = np.argmax(np.where(ctrl.active, ctrl.weights(), -np.inf), axis=0)
    cols = np.arange(ctrl.n)
    star = np.zeros_like(ctrl.active)
    star[istar, cols] = True
    star &= ctrl.active
    nonstar = ctrl.active & ~star
    d_w = np.where(nonstar, 1.0 / denom, 0.0)
    d_star = -np.where(nonstar, w, 0.0).sum(axis=0) / (denom * denom)
    d_w[istar, cols] = np.where(safe, d_star, 0.0)
    d_w[:, ~safe] = 0.0
    d_w_raw = np.where(ctrl.w_raw > 0, d_w, 0.0)
    return value, d_w_raw


# ---------------------------------------------------------------------------
# Total loss


def total_loss(ctrl: NeuroFuzzyController, states, teacher_qs, cfg: DistillConfig) -> float:
    return distill_loss_and_grads(ctrl, states, teacher_qs, cfg)[0]


def distill_loss_and_grads(ctrl: NeuroFuzzyController, states, teacher_qs, cfg: DistillConfig):
    """Mean batch KL plus weighted regularizers, with full parameter gradients.

    Rows whose rule activations underflowed are dropped from the KL mean and
    counted. Returns (loss, grads, n_degenerate).
    """
    states = np.asarray(states, dtype=float)
    teacher_qs = np.asarray(teacher_qs, dtype=float)
    out = ctrl.forward_batch(states)
    valid = ~out.degenerate
    n_valid = int(valid.sum())
    n_degenerate = len(states) - n_valid

    if n_valid > 0:
        kl_rows, kl_grad = _kl_batch(teacher_qs, out.q, cfg.tau)
        kl_mean = float(kl_rows[valid].mean())
        grad_q = np.where(valid[:, None], kl_grad / n_valid, 0.0)
        grads = ctrl.backward_batch(states, grad_q)
    else:
        kl_mean = 0.0
        grads = {name: np.zeros_like(p) for name, p in ctrl.params().items()}

    m_value, m_dmu, m_dsigma = _merge_regularizer_grads(ctrl)
    t_value, t_dw = _tnorm_regularizer_grads(ctrl)
    grads["mu"] = grads["mu"] + cfg.lam_merge * m_dmu
    grads["sigma"] = grads["sigma"] + cfg.lam_merge * m_dsigma
    grads["w_raw"] = grads["w_raw"] + cfg.lam_tnorm * t_dw

    loss = kl_mean + cfg.lam_merge * m_value + cfg.lam_tnorm * t_value
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"distillation loss is {loss}")
    return loss, grads, n_degenerate


# ---------------------------------------------------------------------------
# Distillation loop


def distill(teacher, student: NeuroFuzzyController, env, cfg: DistillConfig,
            seed: int, checkpoint_dir=None) -> tuple[NeuroFuzzyController, list[EpisodeStats]]:
    """Train the student on teacher Q-vectors along epsilon-greedy student
    trajectories: one replay insertion and one gradient step per environment
    step. The student is modified in place and returned."""
    explore_rng = rng_for(seed, "explore")
    sample_rng = rng_for(seed, "replay")
    buffer = ReplayBuffer(cfg.buffer_capacity)
    optimizer = make_optimizer(student.params(), cfg.optimizer, cfg.lr,
                               cfg.momentum, cfg.rms_rho)
    eval_env = type(env)()
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    stats: list[EpisodeStats] = []
    for episode in range(cfg.episodes):
        t0 = time.perf_counter()
        state = env.reset(seed_int(seed, "episode", episode))
        ep_reward = 0.0
        losses: list[float] = []
        while not state.done:
            obs = state.observation
            action = epsilon_greedy(student.q_values(obs), cfg.eps, explore_rng)
            result = env.step(action)
            buffer.push((np.array(obs), np.array(teacher.q_values(obs))))
            state = env.state
            ep_reward += result.reward
            if len(buffer) >= cfg.batch:
                batch = buffer.sample(cfg.batch, sample_rng)
                b_states = np.array([s for s, _ in batch])
                b_qs = np.array([q for _, q in batch])
                loss, grads, _ = distill_loss_and_grads(student, b_states, b_qs, cfg)
                optimizer.step(grads)
                student.post_update()
                losses.append(loss)
        row = EpisodeStats(
            episode=episode,
            train_reward=ep_reward,
            loss_mean=float(np.mean(losses)) if losses else float("nan"),
            wall_time=time.perf_counter() - t0,
        )
        if (episode + 1) % cfg.eval_interval == 0:
            row.eval_median = eval_median(student, eval_env, cfg.eval_episodes,
                                          seed_int(seed, "eval", episode))
            if checkpoint_dir is not None:
                student.save(checkpoint_dir / f"controller.ep{episode:03d}.rules")
            log.info("distill %s episode %d: train %.1f, eval median %.1f, loss %.4f",
                     env.name, episode, ep_reward, row.eval_median, row.loss_mean)
        stats.append(row)
    return student, stats


# ---------------------------------------------------------------------------
# Direct-RL fuzzy baseline


def init_random_controller(env, rule_count: int, seed: int) -> NeuroFuzzyController:
    """Spread rule centers over the state ranges seen in a short random rollout."""
    rng = rng_for(seed, "init")
    probe = type(env)()
    state = probe.reset(seed_int(seed, "probe"))
    observations = [state.observation]
    for step in range(1_000):
        if state.done:
            state = probe.reset(seed_int(seed, "probe", step))
        probe.step(int(rng.integers(probe.n_actions)))
        state = probe.state
        observations.append(state.observation)
    obs = np.array(observations)
    lo, hi = obs.min(axis=0), obs.max(axis=0)
    span = np.maximum(hi - lo, 1e-2)
    m, n, k = env.obs_dim, rule_count, env.n_actions
    mu = rng.uniform(lo[:, None], hi[:, None], size=(m, n))
    sigma = np.tile((span / 4.0)[:, None], (1, n))
    consequents = rng.normal(0.0, 0.1, size=(n, k))
    return NeuroFuzzyController(mu=mu, sigma=sigma, w_raw=np.ones((m, n)),
                                active=np.ones((m, n), dtype=bool), consequents=consequents)


def naive_substitution(env, rule_count: int, cfg: DqnConfig, seed: int) -> TrainResult:
    """Train the fuzzy controller directly as the Q-function of the deep-Q loop.

    This is the baseline that compact rule bases fail at; minibatch rows with
    underflowed activations are skipped and counted in the result.
    """
    ctrl = init_random_controller(env, rule_count, seed)
    if cfg.max_episodes <= 0:
        return TrainResult(model=ctrl, stats=[])
    return dqn_train(ctrl, env, cfg, seed)
