"""Adversary training loop: interleave scenario generation with DQN updates,
checkpoint candidates on a fixed cadence, and select the best-scoring one."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import sim
from .dqn import DqnAgent, DqnHyperparams, save_policy
from .replay import Transition
from .reward import RewardConfig, step_reward
from .vut import make_vut, vut_controller

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainRunConfig:
    case: str = sim.ONE_LANE
    vut: str = "pi1"
    seed: int = 0
    total_env_steps: int = 300_000
    checkpoint_period: int = 10_000
    eval_scenarios: int = 100
    d: int = 25  # steps generated per burst before policy updates

    def __post_init__(self):
        if self.total_env_steps % self.checkpoint_period != 0:
            raise ValueError("checkpoint_period must divide total_env_steps")
        if self.d < 1:
            raise ValueError("d must be >= 1")


@dataclass
class Scenario:
    environment_id: str
    initial: sim.InitialCondition
    observations: list[np.ndarray]
    actions: list[int]


@dataclass
class PolicyCheckpoint:
    step_index: int
    eval_mean_episode_reward: float
    seed: int
    path: Optional[Path] = None
    crash_rate: float = 0.0


class ScenarioStream:
    """Rolls the world in bursts of d steps, continuing episodes across
    bursts and restarting from a fresh initial condition on termination."""

    def __init__(self, vut_ctrl: Callable[[sim.WorldState], float],
                 reward_fn: Callable[[sim.WorldState], float],
                 sim_cfg: sim.SimConfig, road: sim.RoadConfig, case: str,
                 rng: np.random.Generator, environment_id: str = ""):
        self.vut_ctrl = vut_ctrl
        self.reward_fn = reward_fn
        self.sim_cfg = sim_cfg
        self.road = road
        self.case = case
        self.rng = rng
        self.environment_id = environment_id
        self.world: Optional[sim.WorldState] = None
        self.initial: Optional[sim.InitialCondition] = None

    def _reset(self) -> None:
        self.initial = sim.sample_initial_condition(self.rng, self.sim_cfg, self.case)
        self.world = sim.make_world(self.initial, self.road)

    def burst(self, d: int, policy: Callable[[np.ndarray], int]
              ) -> tuple[Scenario, list[Transition]]:
        if self.world is None:
            self._reset()
        scenario = Scenario(self.environment_id, self.initial, [], [])
        transitions: list[Transition] = []
        for _ in range(d):
            obs = sim.pov_observation(self.world, self.road, self.case)
            action = int(policy(obs))
            self.world = sim.step_world(self.world, action, self.vut_ctrl,
                                        self.sim_cfg, self.road, self.case)
            reward = self.reward_fn(self.world)
            done = (self.world.collided
                    or self.world.time_step >= self.sim_cfg.episode_len)
            next_obs = sim.pov_observation(self.world, self.road, self.case)
            scenario.observations.append(obs)
            scenario.actions.append(action)
            transitions.append(Transition(obs, action, reward, next_obs, done))
            if done:
                self.world = None
                break
        return scenario, transitions


def evaluate_policy(policy: Callable[[np.ndarray], int],
                    vut_ctrl: Callable[[sim.WorldState], float],
                    reward_fn: Callable[[sim.WorldState], float],
                    sim_cfg: sim.SimConfig, road: sim.RoadConfig, case: str,
                    n_scenarios: int, rng: np.random.Generator
                    ) -> tuple[float, float, list[sim.EpisodeSummary]]:
    """Greedy rollouts on freshly sampled scenarios.

    Returns (mean episode reward, crash rate in percent, summaries).
    """
    rewards = []
    crashes = 0
    summaries = []
    for _ in range(n_scenarios):
        initial = sim.sample_initial_condition(rng, sim_cfg, case)
        world = sim.make_world(initial, road)
        _, summary = sim.run_episode(world, vut_ctrl, policy, reward_fn,
                                     sim_cfg, road, case)
        rewards.append(summary.episode_reward)
        crashes += summary.collided
        summaries.append(summary)
    return float(np.mean(rewards)), 100.0 * crashes / n_scenarios, summaries


def train_pov(run: TrainRunConfig,
              sim_cfg: sim.SimConfig = sim.SimConfig(),
              reward_cfg: Optional[RewardConfig] = None,
              hp: DqnHyperparams = DqnHyperparams(),
              out_dir: Optional[Path] = None,
              meta: Optional[dict] = None) -> list[PolicyCheckpoint]:
    """Runs the full training loop for one (VUT, seed) pair.

    Every checkpoint_period environment steps the current policy is saved
    and scored greedily on eval_scenarios fresh scenarios.
    """
    case = run.case
    road = sim.RoadConfig(lane_count=1 if case == sim.ONE_LANE else 2)
    reward_cfg = reward_cfg or RewardConfig(case=case)
    if reward_cfg.case != case:
        raise ValueError("reward config case does not match run case")
    vut_ctrl = vut_controller(make_vut(run.vut), road)
    reward_fn = lambda world: step_reward(world, road, reward_cfg)

    ss = np.random.SeedSequence([run.seed, 0x0DD])
    odd_ss, eval_ss = ss.spawn(2)
    odd_rng = np.random.default_rng(odd_ss)
    eval_children = eval_ss.spawn(run.total_env_steps // run.checkpoint_period)

    agent = DqnAgent(case, hp, run.seed)
    stream = ScenarioStream(vut_ctrl, reward_fn, sim_cfg, road, case, odd_rng,
                            environment_id=f"{case}/{run.vut}")

    env_steps = 0
    checkpoints: list[PolicyCheckpoint] = []
    csv_rows: list[tuple[int, float, float]] = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    def behavior_policy(obs: np.ndarray) -> int:
        return agent.act(obs, hp.epsilon_at(env_steps))

    while env_steps < run.total_env_steps:
        budget = min(run.d, run.total_env_steps - env_steps)
        _, transitions = stream.burst(budget, behavior_policy)
        for tr in transitions:
            agent.observe(tr)
            env_steps += 1
            if len(agent.buffer) >= max(hp.learn_start, hp.batch_size):
                loss = agent.train_step()
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at env step {env_steps}")
            if env_steps % run.checkpoint_period == 0:
                idx = env_steps // run.checkpoint_period - 1
                ckpt_path = None
                if out_dir is not None:
                    ckpt_path = out_dir / f"ckpt_{env_steps:09d}.qnet"
                    save_policy(ckpt_path, agent.online, case)
                eval_rng = np.random.default_rng(eval_children[idx])
                score, crash_rate, _ = evaluate_policy(
                    agent.greedy_policy(), vut_ctrl, reward_fn, sim_cfg,
                    road, case, run.eval_scenarios, eval_rng)
                checkpoints.append(PolicyCheckpoint(
                    step_index=env_steps, eval_mean_episode_reward=score,
                    seed=run.seed, path=ckpt_path, crash_rate=crash_rate))
                csv_rows.append((env_steps, score, crash_rate))
                log.info("vut=%s seed=%d step=%d eval_reward=%.3f crash=%.1f%%",
                         run.vut, run.seed, env_steps, score, crash_rate)

    if out_dir is not None:
        _write_training_csv(out_dir / "training.csv", csv_rows, run, meta)
    return checkpoints


def _write_training_csv(path: Path, rows, run: TrainRunConfig,
                        meta: Optional[dict]) -> None:
    with open(path, "w", newline="") as f:
        if meta:
            for key, value in meta.items():
                f.write(f"# {key}={value}\n")
        f.write(f"# vut={run.vut} seed={run.seed}\n")
        writer = csv.writer(f)
        writer.writerow(["step_index", "eval_mean_episode_reward", "crash_rate"])
        writer.writerows(rows)


def select_spcp(candidates: list[PolicyCheckpoint]) -> PolicyCheckpoint:
    """Highest mean evaluation reward wins; the earliest checkpoint wins
    ties."""
    if not candidates:
        raise ValueError("no SPCP candidates to select from")
    return min(candidates,
               key=lambda c: (-c.eval_mean_episode_reward, c.step_index))
