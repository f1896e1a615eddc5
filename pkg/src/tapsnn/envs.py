"""Deterministic CartPole and Pendulum physics with partially observable views.

The dynamics, constants and rewards follow the canonical v0 task definitions
(Euler-integrated cart-pole, torque-limited pendulum swing-up); those
constants are the de-facto specification for these benchmarks. Partial
observability comes purely from masking the state vector: the ``-P`` suffix
exposes positions/angles only, ``-V`` exposes velocities only.
"""

from __future__ import annotations

import math

import numpy as np

ENV_IDS = ("CartPole-P", "CartPole-V", "Pendulum-P", "Pendulum-V")

MAX_EPISODE_STEPS = 200


def angle_normalize(x: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return x - 2.0 * math.pi * math.ceil((x - math.pi) / (2.0 * math.pi))


class StepAfterDone(RuntimeError):
    """The episode already terminated; reset before stepping."""


class CartPoleEnv:
    """Pole balancing on a force-driven cart; +1 reward per step, 200-step cap.

    State (x, x_dot, theta, theta_dot); terminates when |x| > 2.4 or
    |theta| > 12 degrees. Discrete actions {0, 1} push left/right.
    """

    gravity = 9.8
    cart_mass = 1.0
    pole_mass = 0.1
    half_length = 0.5
    force_mag = 10.0
    dt = 0.02
    x_limit = 2.4
    theta_limit = 12.0 * 2.0 * math.pi / 360.0

    discrete = True
    n_actions = 2
    action_dim = 2  # one-hot width fed to policies

    def __init__(self, observed: str):
        assert observed in ("positions", "velocities")
        self.observed = observed
        self.obs_dim = 2
        self._state: np.ndarray | None = None
        self._steps = 0
        self._done = True

    def _observe(self) -> np.ndarray:
        x, x_dot, theta, theta_dot = self._state
        if self.observed == "positions":
            return np.array([x, theta])
        return np.array([x_dot, theta_dot])

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self._state = rng.uniform(-0.05, 0.05, size=4)
        self._steps = 0
        self._done = False
        return self._observe()

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self._done:
            raise StepAfterDone("CartPole episode is over")
        action = int(action)
        if action not in (0, 1):
            raise ValueError(f"CartPole action must be 0 or 1, got {action}")
        x, x_dot, theta, theta_dot = self._state
        force = self.force_mag if action == 1 else -self.force_mag
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        total_mass = self.cart_mass + self.pole_mass
        pml = self.pole_mass * self.half_length
        temp = (force + pml * theta_dot * theta_dot * sin_t) / total_mass
        theta_acc = (self.gravity * sin_t - cos_t * temp) / (
            self.half_length * (4.0 / 3.0 - self.pole_mass * cos_t * cos_t / total_mass))
        x_acc = temp - pml * theta_acc * cos_t / total_mass
        x += self.dt * x_dot
        x_dot += self.dt * x_acc
        theta += self.dt * theta_dot
        theta_dot += self.dt * theta_acc
        self._state = np.array([x, x_dot, theta, theta_dot])
        self._steps += 1
        failed = abs(x) > self.x_limit or abs(theta) > self.theta_limit
        self._done = failed or self._steps >= MAX_EPISODE_STEPS
        return self._observe(), 1.0, self._done


class PendulumEnv:
    """Torque-limited pendulum swing-up; runs exactly 200 steps.

    State (theta, theta_dot) with theta = 0 upright. Continuous torque in
    [-2, 2]; reward = -(wrapped_theta^2 + 0.1 * theta_dot^2 + 0.001 * torque^2).
    """

    gravity = 10.0
    mass = 1.0
    length = 1.0
    dt = 0.05
    max_speed = 8.0
    max_torque = 2.0

    discrete = False
    action_dim = 1

    def __init__(self, observed: str):
        assert observed in ("positions", "velocities")
        self.observed = observed
        self.obs_dim = 1
        self._theta = 0.0
        self._theta_dot = 0.0
        self._steps = 0
        self._done = True

    def _observe(self) -> np.ndarray:
        if self.observed == "positions":
            return np.array([angle_normalize(self._theta)])
        return np.array([self._theta_dot])

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self._theta = rng.uniform(-math.pi, math.pi)
        self._theta_dot = rng.uniform(-1.0, 1.0)
        self._steps = 0
        self._done = False
        return self._observe()

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self._done:
            raise StepAfterDone("Pendulum episode is over")
        torque = float(np.asarray(action).reshape(-1)[0])
        if not -self.max_torque <= torque <= self.max_torque:
            raise ValueError(f"Pendulum torque must lie in [-2, 2], got {torque}")
        th, th_dot = self._theta, self._theta_dot
        cost = angle_normalize(th) ** 2 + 0.1 * th_dot * th_dot + 0.001 * torque * torque
        th_dot = th_dot + (
            3.0 * self.gravity / (2.0 * self.length) * math.sin(th)
            + 3.0 / (self.mass * self.length * self.length) * torque
        ) * self.dt
        th_dot = min(max(th_dot, -self.max_speed), self.max_speed)
        th = th + th_dot * self.dt
        self._theta, self._theta_dot = th, th_dot
        self._steps += 1
        self._done = self._steps >= MAX_EPISODE_STEPS
        return self._observe(), -cost, self._done


def make(env_id: str):
    """Build an environment from its string id, e.g. ``CartPole-P``."""
    if env_id not in ENV_IDS:
        raise ValueError(f"unknown env id {env_id!r}; choose from {ENV_IDS}")
    family, suffix = env_id.split("-")
    observed = "positions" if suffix == "P" else "velocities"
    if family == "CartPole":
        return CartPoleEnv(observed)
    return PendulumEnv(observed)
