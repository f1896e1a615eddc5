"""Episode replay storage with fixed-length subsequence sampling.

Whole episodes are kept intact; training batches are contiguous windows of a
single episode each, so a sampled subsequence never mixes transitions from
different episodes. Windows shorter than the requested length are zero-padded
and carry a validity mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Episode:
    """One complete episode: T transitions and T+1 observations."""

    obs: np.ndarray        # (T+1, obs_dim)
    actions: np.ndarray    # (T,) int for discrete, (T, act_dim) for continuous
    rewards: np.ndarray    # (T,)
    dones: np.ndarray      # (T,) 1.0 only on the final transition if terminal

    def __post_init__(self):
        T = len(self.rewards)
        assert self.obs.shape[0] == T + 1
        assert self.actions.shape[0] == T and self.dones.shape[0] == T

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass
class SequenceBatch:
    """Time-major window batch; index [t] slices give (batch, dim) arrays.

    ``prev_action_enc``/``prev_reward`` at window position 0 hold the true
    pre-window values (zeros at an episode start). ``mask`` flags valid
    transitions; padded steps are all-zero and must receive zero gradient.
    """

    obs: np.ndarray              # (L+1, B, obs_dim)
    prev_action_enc: np.ndarray  # (L+1, B, act_enc)
    prev_reward: np.ndarray      # (L+1, B, 1)
    action_enc: np.ndarray       # (L, B, act_enc) encoding of the taken action
    action_index: np.ndarray     # (L, B) int indices (discrete) or zeros
    reward: np.ndarray           # (L, B)
    done: np.ndarray             # (L, B)
    mask: np.ndarray             # (L, B)

    @property
    def seq_len(self) -> int:
        return self.reward.shape[0]

    @property
    def batch_size(self) -> int:
        return self.reward.shape[1]


class EpisodeBuffer:
    """Ring of complete episodes bounded by a total-transition capacity."""

    def __init__(self, capacity_transitions: int, discrete: bool, act_dim: int):
        if capacity_transitions <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity_transitions)
        self.discrete = discrete
        self.act_dim = act_dim
        self._episodes: list[Episode] = []
        self._transitions = 0

    def __len__(self) -> int:
        return len(self._episodes)

    @property
    def transitions(self) -> int:
        return self._transitions

    def add(self, episode: Episode) -> None:
        self._episodes.append(episode)
        self._transitions += len(episode)
        while self._transitions > self.capacity and len(self._episodes) > 1:
            evicted = self._episodes.pop(0)
            self._transitions -= len(evicted)

    def _encode_actions(self, actions: np.ndarray) -> np.ndarray:
        if self.discrete:
            return np.eye(self.act_dim)[actions.astype(np.int64)]
        return actions.reshape(len(actions), self.act_dim)

    def sample(self, rng: np.random.Generator, batch_size: int,
               seq_len: int) -> SequenceBatch:
        if not self._episodes:
            raise ValueError("cannot sample from an empty buffer")
        L, B = seq_len, batch_size
        obs_dim = self._episodes[0].obs.shape[1]
        batch = SequenceBatch(
            obs=np.zeros((L + 1, B, obs_dim)),
            prev_action_enc=np.zeros((L + 1, B, self.act_dim)),
            prev_reward=np.zeros((L + 1, B, 1)),
            action_enc=np.zeros((L, B, self.act_dim)),
            action_index=np.zeros((L, B), dtype=np.int64),
            reward=np.zeros((L, B)),
            done=np.zeros((L, B)),
            mask=np.zeros((L, B)),
        )
        ep_ids = rng.integers(len(self._episodes), size=B)
        for row, ep_id in enumerate(ep_ids):
            ep = self._episodes[ep_id]
            T = len(ep)
            start = 0 if T <= L else int(rng.integers(T - L + 1))
            valid = min(L, T - start)
            enc = self._encode_actions(ep.actions)
            batch.obs[:valid + 1, row] = ep.obs[start:start + valid + 1]
            batch.action_enc[:valid, row] = enc[start:start + valid]
            if self.discrete:
                batch.action_index[:valid, row] = ep.actions[start:start + valid]
            batch.reward[:valid, row] = ep.rewards[start:start + valid]
            batch.done[:valid, row] = ep.dones[start:start + valid]
            batch.mask[:valid, row] = 1.0
            # inputs carry the previous transition's action/reward, shifted one
            # step; position 0 sees the true pre-window history when it exists
            batch.prev_action_enc[1:valid + 1, row] = enc[start:start + valid]
            batch.prev_reward[1:valid + 1, row, 0] = ep.rewards[start:start + valid]
            if start > 0:
                batch.prev_action_enc[0, row] = enc[start - 1]
                batch.prev_reward[0, row, 0] = ep.rewards[start - 1]
        return batch
