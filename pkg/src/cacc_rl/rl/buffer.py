"""Replay memory of whole-platoon transitions."""
from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from ..errors import UsageError


class Batch(NamedTuple):
    obs: np.ndarray       # (B, N, 4)
    actions: np.ndarray   # (B, N) acceleration adjustments
    rewards: np.ndarray   # (B, N)
    next_obs: np.ndarray  # (B, N, 4)
    done: np.ndarray      # (B,)


class ReplayBuffer:
    """Fixed-capacity FIFO ring buffer; each entry is one platoon step."""

    def __init__(self, capacity: int, n_followers: int, obs_dim: int = 4,
                 rng: Optional[np.random.Generator] = None):
        if capacity < 1:
            raise UsageError("capacity must be >= 1")
        self.capacity = capacity
        self.n_followers = n_followers
        self.obs = np.zeros((capacity, n_followers, obs_dim))
        self.actions = np.zeros((capacity, n_followers))
        self.rewards = np.zeros((capacity, n_followers))
        self.next_obs = np.zeros((capacity, n_followers, obs_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def __len__(self) -> int:
        return self._size

    def add(self, obs, actions, rewards, next_obs, done: bool) -> None:
        j = self._next
        self.obs[j] = obs
        self.actions[j] = actions
        self.rewards[j] = rewards
        self.next_obs[j] = next_obs
        self.done[j] = done
        self._next = (j + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def oldest_index(self) -> int:
        return self._next if self._size == self.capacity else 0

    def sample(self, batch_size: int) -> Batch:
        """Uniform sample, without replacement inside one batch."""
        if self._size == 0:
            raise UsageError("cannot sample from an empty buffer")
        k = min(batch_size, self._size)
        idx = self.rng.choice(self._size, size=k, replace=False)
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.done[idx])
