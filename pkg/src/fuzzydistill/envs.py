"""Deterministic classic-control tasks behind a small episodic interface.

Both tasks use the standard physics constants of their well-known Gym
counterparts so value scales and state ranges stay in familiar physical
units. Observations are raw and unnormalized; any scaling is the
consumer's job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EnvState",
    "StepResult",
    "StepOnDoneEpisode",
    "CartPole",
    "MountainCar",
    "make_env",
    "ENV_NAMES",
]


class StepOnDoneEpisode(RuntimeError):
    """step() was called on an episode that already ended."""


@dataclass
class EnvState:
    observation: np.ndarray
    step_count: int = 0
    done: bool = False


@dataclass
class StepResult:
    next_observation: np.ndarray
    reward: float
    done: bool


class _EpisodicEnv:
    """Shared reset/step bookkeeping; subclasses provide the physics."""

    name: str
    obs_dim: int
    n_actions: int
    feature_names: tuple
    max_steps: int

    def __init__(self):
        self._rng = np.random.default_rng()
        self.state: EnvState | None = None

    def reset(self, seed: int | None = None) -> EnvState:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        obs = self._initial_observation(self._rng)
        self.state = EnvState(observation=obs, step_count=0, done=False)
        return self.state

    def step(self, action: int) -> StepResult:
        if self.state is None:
            raise StepOnDoneEpisode("reset() must be called before step()")
        if self.state.done:
            raise StepOnDoneEpisode("episode is done; call reset()")
        action = int(action)
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} outside 0..{self.n_actions - 1}")
        obs, reward = self._transition(self.state.observation, action)
        steps = self.state.step_count + 1
        done = bool(steps >= self.max_steps or self._terminal(obs))
        self.state = EnvState(observation=obs, step_count=steps, done=done)
        return StepResult(next_observation=obs, reward=reward, done=done)

    def terminal_observation(self, obs) -> bool:
        """True when the observation itself ends the episode (bounds or goal),
        as opposed to the step cap running out."""
        return bool(self._terminal(np.asarray(obs, dtype=float)))

    def _initial_observation(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _transition(self, obs: np.ndarray, action: int):
        raise NotImplementedError

    def _terminal(self, obs: np.ndarray) -> bool:
        raise NotImplementedError


class CartPole(_EpisodicEnv):
    """Pole balancing on a cart: +-10 N force, semi-implicit Euler at 0.02 s.

    Episode ends when |x| > 2.4, |angle| > 12 degrees, or after 500 steps.
    Reward is 1 per step.
    """

    name = "cartpole"
    obs_dim = 4
    n_actions = 2
    feature_names = ("p_x", "v_x", "angle", "v_tip")
    action_names = ("left", "right")
    max_steps = 500

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    total_mass = masscart + masspole
    half_length = 0.5
    polemass_length = masspole * half_length
    force_mag = 10.0
    tau = 0.02
    x_limit = 2.4
    theta_limit = 12 * math.pi / 180

    def _initial_observation(self, rng):
        return rng.uniform(-0.05, 0.05, size=4)

    def _transition(self, obs, action):
        x, x_dot, theta, theta_dot = (float(v) for v in obs)
        force = self.force_mag if action == 1 else -self.force_mag
        cos_t = math.cos(theta)
        sin_t = math.sin(theta)
        temp = (force + self.polemass_length * theta_dot * theta_dot * sin_t) / self.total_mass
        theta_acc = (self.gravity * sin_t - cos_t * temp) / (
            self.half_length * (4.0 / 3.0 - self.masspole * cos_t * cos_t / self.total_mass)
        )
        x_acc = temp - self.polemass_length * theta_acc * cos_t / self.total_mass
        # semi-implicit Euler: velocities first, then positions with the new velocities
        x_dot = x_dot + self.tau * x_acc
        x = x + self.tau * x_dot
        theta_dot = theta_dot + self.tau * theta_acc
        theta = theta + self.tau * theta_dot
        return np.array([x, x_dot, theta, theta_dot]), 1.0

    def _terminal(self, obs):
        return abs(obs[0]) > self.x_limit or abs(obs[2]) > self.theta_limit


class MountainCar(_EpisodicEnv):
    """Underpowered car in a valley; reach position 0.5 within 200 steps.

    Reward is -1 per step; actions are push left / no push / push right.
    """

    name = "mountaincar"
    obs_dim = 2
    n_actions = 3
    feature_names = ("p_x", "v_x")
    action_names = ("left", "none", "right")
    max_steps = 200

    force = 0.001
    gravity = 0.0025
    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.5

    def _initial_observation(self, rng):
        return np.array([rng.uniform(-0.6, -0.4), 0.0])

    def _transition(self, obs, action):
        position, velocity = float(obs[0]), float(obs[1])
        velocity += (action - 1) * self.force - self.gravity * math.cos(3 * position)
        velocity = min(max(velocity, -self.max_speed), self.max_speed)
        position += velocity
        position = min(max(position, self.min_position), self.max_position)
        if position == self.min_position and velocity < 0:
            velocity = 0.0
        return np.array([position, velocity]), -1.0

    def _terminal(self, obs):
        return obs[0] >= self.goal_position


_ENVS = {CartPole.name: CartPole, MountainCar.name: MountainCar}
ENV_NAMES = tuple(sorted(_ENVS))


def make_env(name: str) -> _EpisodicEnv:
    try:
        return _ENVS[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}") from None
