"""Prioritized experience replay backed by a sum tree."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool


class SumTree:
    """Complete binary tree storing priorities in the leaves; internal nodes
    hold subtree sums so prefix sampling is O(log n)."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.nodes = np.zeros(2 * capacity, dtype=np.float64)

    def total(self) -> float:
        return float(self.nodes[1])

    def set(self, index: int, priority: float) -> None:
        if not 0 <= index < self.capacity:
            raise IndexError(index)
        if not priority > 0:
            raise ValueError(f"priority must be positive, got {priority}")
        i = index + self.capacity
        self.nodes[i] = priority
        i //= 2
        while i >= 1:
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1]
            i //= 2

    def get(self, index: int) -> float:
        return float(self.nodes[index + self.capacity])

    def find(self, prefix: float) -> int:
        """Leaf index i such that the cumulative sum of leaves 0..i-1 is
        <= prefix < cumulative sum of leaves 0..i."""
        i = 1
        while i < self.capacity:
            left = self.nodes[2 * i]
            if prefix < left:
                i = 2 * i
            else:
                prefix -= left
                i = 2 * i + 1
        return i - self.capacity


class PrioritizedBuffer:
    """Ring buffer of transitions sampled proportionally to priority^alpha,
    with importance-sampling weights annealed via beta."""

    def __init__(self, capacity: int, alpha: float = 0.6, beta0: float = 0.4,
                 beta_anneal_steps: int = 300_000, epsilon_p: float = 1e-6):
        self.capacity = capacity
        self.alpha = alpha
        self.beta0 = beta0
        self.beta_anneal_steps = beta_anneal_steps
        self.epsilon_p = epsilon_p
        self.tree = SumTree(capacity)
        self.storage: list[Transition | None] = [None] * capacity
        self.write = 0
        self.size = 0
        self.max_priority = 1.0
        self.sample_calls = 0

    def __len__(self) -> int:
        return self.size

    @property
    def beta(self) -> float:
        frac = min(1.0, self.sample_calls / max(1, self.beta_anneal_steps))
        return self.beta0 + (1.0 - self.beta0) * frac

    def add(self, transition: Transition) -> None:
        if not np.isfinite(transition.reward):
            raise ValueError("transition reward must be finite")
        self.storage[self.write] = transition
        self.tree.set(self.write, self.max_priority ** self.alpha)
        self.write = (self.write + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator
               ) -> tuple[np.ndarray, list[Transition], np.ndarray]:
        """Returns (indices, transitions, importance weights). Weights are
        normalized by the batch maximum."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        total = self.tree.total()
        # stratified proportional sampling
        bounds = np.linspace(0.0, total, batch_size + 1)
        prefixes = rng.uniform(bounds[:-1], bounds[1:])
        indices = np.array([self.tree.find(p) for p in prefixes], dtype=np.int64)
        indices = np.minimum(indices, self.size - 1)
        probs = np.array([self.tree.get(i) for i in indices]) / total
        beta = self.beta
        self.sample_calls += 1
        weights = (self.size * probs) ** (-beta)
        weights /= weights.max()
        transitions = [self.storage[i] for i in indices]
        return indices, transitions, weights

    def update_priorities(self, indices: np.ndarray, td_errors: np.ndarray) -> None:
        for i, td in zip(indices, td_errors):
            priority = abs(float(td)) + self.epsilon_p
            self.max_priority = max(self.max_priority, priority)
            self.tree.set(int(i), priority ** self.alpha)
