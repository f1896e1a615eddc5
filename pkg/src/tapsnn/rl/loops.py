"""Training orchestration: collect episodes, interleave updates, evaluate.

The loop alternates one collected episode with one gradient update per
collected environment step (configurable ratio), evaluates the deterministic
policy every few episodes, and scores a run as the mean of its last five
evaluations. Everything is driven by a single seeded generator so a repeat
run reproduces the learning curve exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..envs import make
from ..network import TapPolicy
from .agents import DiscreteSacTrainer, Td3Trainer
from .buffer import Episode, EpisodeBuffer


@dataclass
class TrainConfig:
    steps: int = 10_000
    lr: float = 3e-4
    gamma: float = 0.9
    tau: float = 0.005
    batch_size: int = 32
    seq_len: int = 64
    buffer_capacity: int = 1_000_000
    warmup_steps: int = 1000
    updates_per_step: float = 1.0
    eval_interval_episodes: int = 1
    eval_episodes: int = 10
    # TD3 specifics (fractions of max_action for the noises)
    policy_delay: int = 2
    target_noise: float = 0.2
    noise_clip: float = 0.5
    explore_noise: float = 0.1
    # discrete SAC
    target_entropy_scale: float = 0.98

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")


def default_config(env_id: str, steps: int | None = None) -> TrainConfig:
    pendulum = env_id.startswith("Pendulum")
    return TrainConfig(steps=steps if steps is not None else (50_000 if pendulum else 10_000),
                       eval_interval_episodes=5 if pendulum else 1)


@dataclass
class EvalResult:
    mean_return: float
    std_return: float
    returns: list[float]


@dataclass
class TrainResult:
    curve: list[tuple[int, float, float]]  # (env_steps, eval mean, eval std)
    final_score: float                     # mean of the last five evaluations
    env_steps: int
    cell_updates: int
    wall_seconds: float
    trainer: object = field(repr=False, default=None)


def build_trainer(env_id: str, cfg: TrainConfig, rng: np.random.Generator,
                  cell: str = "grsn", aligned: bool = True, t_inner: int = 4):
    env = make(env_id)
    if env.discrete:
        return DiscreteSacTrainer(env.obs_dim, env.n_actions, cfg, rng,
                                  cell_kind=cell, aligned=aligned, t_inner=t_inner)
    return Td3Trainer(env.obs_dim, env.action_dim, env.max_torque, cfg, rng,
                      cell_kind=cell, aligned=aligned, t_inner=t_inner)


def _encode_prev_action(env, action) -> np.ndarray:
    if env.discrete:
        return np.eye(env.n_actions)[int(action)]
    return np.asarray(action, dtype=np.float64).reshape(-1)


def collect_episode(env, seed: int, policy_fn, act_dim: int,
                    step_limit: int | None = None) -> tuple[Episode, float]:
    """Roll one episode; ``policy_fn(obs, prev_a, prev_r) -> action``."""
    obs = env.reset(seed=seed)
    observations = [obs]
    actions, rewards, dones = [], [], []
    prev_action = np.zeros(act_dim)
    prev_reward = 0.0
    done = False
    while not done:
        action = policy_fn(obs, prev_action, prev_reward)
        obs, reward, done = env.step(action)
        observations.append(obs)
        actions.append(action)
        rewards.append(reward)
        dones.append(float(done))
        prev_action = _encode_prev_action(env, action)
        prev_reward = reward
        if step_limit is not None and len(rewards) >= step_limit:
            break
    episode = Episode(
        obs=np.asarray(observations, dtype=np.float64),
        actions=(np.asarray(actions, dtype=np.int64) if env.discrete
                 else np.asarray(actions, dtype=np.float64).reshape(len(actions), -1)),
        rewards=np.asarray(rewards, dtype=np.float64),
        dones=np.asarray(dones, dtype=np.float64),
    )
    return episode, float(episode.rewards.sum())


def evaluate(actor: TapPolicy, env_id: str, n_episodes: int = 10,
             seed: int = 0) -> EvalResult:
    """Deterministic rollouts; hidden state carried within an episode only."""
    env = make(env_id)
    act_dim = env.n_actions if env.discrete else env.action_dim
    returns = []
    for i in range(n_episodes):
        state_holder = {"state": actor.initial_state(1)}

        def greedy(obs, prev_a, prev_r):
            action, state_holder["state"] = actor.act(
                obs, prev_a, prev_r, state_holder["state"], deterministic=True)
            return action

        _, ep_return = collect_episode(env, seed + i, greedy, act_dim)
        returns.append(ep_return)
    arr = np.asarray(returns)
    return EvalResult(float(arr.mean()), float(arr.std()), returns)


def random_policy_return(env_id: str, seed: int) -> float:
    """Return of one uniformly random episode; the sanity floor oracle."""
    env = make(env_id)
    rng = np.random.default_rng(seed)

    def random_action(obs, prev_a, prev_r):
        if env.discrete:
            return int(rng.integers(env.n_actions))
        return rng.uniform(-env.max_torque, env.max_torque, size=env.action_dim)

    act_dim = env.n_actions if env.discrete else env.action_dim
    _, ep_return = collect_episode(env, seed, random_action, act_dim)
    return ep_return


def train(env_id: str, cfg: TrainConfig, seed: int, cell: str = "grsn",
          aligned: bool = True, t_inner: int = 4,
          progress=None) -> TrainResult:
    """Full training run; deterministic for a given (config, seed)."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    env = make(env_id)
    act_dim = env.n_actions if env.discrete else env.action_dim
    trainer = build_trainer(env_id, cfg, rng, cell=cell, aligned=aligned, t_inner=t_inner)
    buffer = EpisodeBuffer(cfg.buffer_capacity, env.discrete, act_dim)
    actor = trainer.actor

    curve: list[tuple[int, float, float]] = []
    env_steps = 0
    episodes = 0
    update_debt = 0.0
    eval_seed_base = seed * 1_000_003 + 17

    while env_steps < cfg.steps:
        warm = env_steps < cfg.warmup_steps
        remaining = cfg.steps - env_steps
        if warm:
            def behave(obs, prev_a, prev_r, _rng=rng):
                if env.discrete:
                    return int(_rng.integers(env.n_actions))
                return _rng.uniform(-env.max_torque, env.max_torque, size=env.action_dim)
        else:
            state_holder = {"state": actor.initial_state(1)}

            def behave(obs, prev_a, prev_r, _rng=rng, _holder=state_holder):
                action, _holder["state"] = trainer.explore(obs, prev_a, prev_r,
                                                           _holder["state"], _rng)
                return action

        episode, _ = collect_episode(env, int(rng.integers(2**31)), behave, act_dim,
                                     step_limit=remaining)
        buffer.add(episode)
        env_steps += len(episode)
        episodes += 1

        if env_steps > cfg.warmup_steps and len(buffer) > 0:
            update_debt += len(episode) * cfg.updates_per_step
            n_updates = int(update_debt)
            update_debt -= n_updates
            for _ in range(n_updates):
                batch = buffer.sample(rng, cfg.batch_size, cfg.seq_len)
                if isinstance(trainer, Td3Trainer):
                    trainer.update(batch, rng)
                else:
                    trainer.update(batch)

        if episodes % cfg.eval_interval_episodes == 0:
            result = evaluate(actor, env_id, cfg.eval_episodes,
                              seed=eval_seed_base + episodes)
            curve.append((env_steps, result.mean_return, result.std_return))
            if progress is not None:
                progress(env_steps, result.mean_return)

    if not curve:
        result = evaluate(actor, env_id, cfg.eval_episodes, seed=eval_seed_base)
        curve.append((env_steps, result.mean_return, result.std_return))
    tail = [mean for _, mean, _ in curve[-5:]]
    return TrainResult(
        curve=curve,
        final_score=float(np.mean(tail)),
        env_steps=env_steps,
        cell_updates=sum(net.cell_updates for net in trainer.networks().values()),
        wall_seconds=time.perf_counter() - start,
        trainer=trainer,
    )
