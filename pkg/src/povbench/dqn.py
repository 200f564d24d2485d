"""Double dueling DQN with prioritized replay, plus policy checkpoint I/O."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import sim
from .nets import Adam, DuelingNet, squared_loss_and_grad
from .replay import PrioritizedBuffer, Transition

CHECKPOINT_MAGIC = b"POVQ"
CHECKPOINT_VERSION = 1

# observation components are divided by their documented ranges so inputs
# land in roughly [0, 1]; the lane flag is already binary
_NORM_3 = np.array([40.0, 40.0, 100.0])
_NORM_4 = np.array([40.0, 40.0, 100.0, 1.0])


def normalize_obs(obs: np.ndarray) -> np.ndarray:
    scale = _NORM_3 if obs.shape[-1] == 3 else _NORM_4
    return obs / scale


@dataclass(frozen=True)
class DqnHyperparams:
    gamma: float = 0.8
    learning_rate: float = 1e-5
    batch_size: int = 64
    target_update_period: int = 500
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 50_000
    buffer_capacity: int = 100_000
    learn_start: int = 1_000
    alpha: float = 0.6
    beta0: float = 0.4
    beta_anneal_steps: int = 300_000
    epsilon_p: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def epsilon_at(self, env_step: int) -> float:
        frac = min(1.0, env_step / max(1, self.epsilon_decay_steps))
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac


def epsilon_greedy(q: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform random action with probability epsilon, else the greedy action
    (lowest index wins ties)."""
    q = np.asarray(q).ravel()
    if q.size == 0:
        raise ValueError("empty Q vector")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def double_dqn_target(reward: float, done: bool, q_online_next: np.ndarray,
                      q_target_next: np.ndarray, gamma: float) -> float:
    """Selects the next action with the online net, evaluates it with the
    target net."""
    if done:
        return float(reward)
    a_star = int(np.argmax(q_online_next))
    return float(reward + gamma * q_target_next[a_star])


class DqnAgent:
    """Owns the online/target nets, replay buffer, and optimizer state."""

    def __init__(self, case: str, hp: DqnHyperparams, seed: int):
        self.case = case
        self.hp = hp
        self.obs_dim = 3 if case == sim.ONE_LANE else 4
        self.n_actions = sim.action_count(case)
        ss = np.random.SeedSequence([seed, 0x51])
        init_ss, explore_ss, sample_ss = ss.spawn(3)
        self.online = DuelingNet(self.obs_dim, self.n_actions,
                                 np.random.default_rng(init_ss))
        self.target = DuelingNet(self.obs_dim, self.n_actions,
                                 np.random.default_rng(init_ss))
        self.target.copy_from(self.online)
        self.explore_rng = np.random.default_rng(explore_ss)
        self.sample_rng = np.random.default_rng(sample_ss)
        self.optimizer = Adam(self.online.parameters(), lr=hp.learning_rate)
        self.buffer = PrioritizedBuffer(hp.buffer_capacity, alpha=hp.alpha,
                                        beta0=hp.beta0,
                                        beta_anneal_steps=hp.beta_anneal_steps,
                                        epsilon_p=hp.epsilon_p)
        self.train_steps = 0

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        return self.online.q_values(normalize_obs(obs))[0]

    def act(self, obs: np.ndarray, epsilon: float) -> int:
        return epsilon_greedy(self.q_values(obs), epsilon, self.explore_rng)

    def greedy_policy(self):
        return lambda obs: int(np.argmax(self.q_values(obs)))

    def observe(self, transition: Transition) -> None:
        self.buffer.add(transition)

    def train_step(self) -> float:
        """One prioritized, importance-weighted gradient step on the squared
        TD error. Returns the loss."""
        if len(self.buffer) < self.hp.batch_size:
            raise ValueError("buffer smaller than batch size")
        indices, batch, weights = self.buffer.sample(self.hp.batch_size,
                                                     self.sample_rng)
        obs = normalize_obs(np.stack([t.obs for t in batch]))
        next_obs = normalize_obs(np.stack([t.next_obs for t in batch]))
        actions = np.array([t.action for t in batch])
        rewards = np.array([t.reward for t in batch])
        dones = np.array([t.done for t in batch])

        q_online_next = self.online.q_values(next_obs)
        q_target_next = self.target.q_values(next_obs)
        a_star = np.argmax(q_online_next, axis=1)
        bootstrap = q_target_next[np.arange(len(batch)), a_star]
        targets = rewards + self.hp.gamma * bootstrap * (~dones)

        q, cache = self.online.forward(obs)
        loss, grad_q, td = squared_loss_and_grad(q, actions, targets, weights)
        grads = self.online.backward(cache, grad_q)
        self.optimizer.step(grads)
        self.buffer.update_priorities(indices, td)

        self.train_steps += 1
        if self.train_steps % self.hp.target_update_period == 0:
            self.target.copy_from(self.online)
        return loss


def save_policy(path: Path | str, net: DuelingNet, case: str) -> None:
    """Versioned binary checkpoint; row-major float64 little-endian arrays."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "case": case,
        "obs_dim": net.obs_dim,
        "action_count": net.n_actions,
        "hidden": net.hidden,
        "layer_dims": net.layer_dims(),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for p in net.parameters():
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_policy(path: Path | str) -> tuple[DuelingNet, str]:
    """Reads a checkpoint back; bit-exact with respect to save_policy."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a policy checkpoint")
        version, blob_len = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        header = json.loads(f.read(blob_len).decode())
        net = DuelingNet(header["obs_dim"], header["action_count"],
                         np.random.default_rng(0), hidden=header["hidden"])
        for p in net.parameters():
            raw = f.read(p.size * 8)
            if len(raw) != p.size * 8:
                raise ValueError(f"{path}: truncated checkpoint")
            p[...] = np.frombuffer(raw, dtype="<f8").reshape(p.shape)
    return net, header["case"]


def greedy_policy_from_net(net: DuelingNet):
    def policy(obs: np.ndarray) -> int:
        return int(np.argmax(net.q_values(normalize_obs(obs))[0]))
    return policy
