"""Experiment configuration: a versioned YAML schema with strict keys.

Unknown keys are rejected so typos cannot silently fall back to defaults.
The resolved configuration (defaults applied) is hashed; the hash is embedded
in every output file so artifacts can be traced to their exact config.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import sim
from .ayss import AyssFilterConfig
from .dqn import DqnHyperparams
from .reward import RewardConfig, RewardShape
from .training import TrainRunConfig
from .vut import NAMED_VUTS

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


_TOP_KEYS = {"schema_version", "case", "vuts", "seeds", "output_dir",
             "sim", "reward", "dqn", "train", "ayss"}
_SIM_KEYS = {"dt", "episode_len", "accel_bounds", "speed_cap", "kp_speed",
             "lane_change_duration_nominal", "init_speed_bounds",
             "gap_bounds_one_lane", "gap_bounds_two_lane",
             "pov_speed_offsets", "disturbance_amplitude"}
_REWARD_KEYS = {"alpha_a", "alpha_c", "one_lane_peak", "one_lane_zero",
                "lane_change_peak", "lane_change_zero", "same_lane_peak",
                "same_lane_zero"}
_DQN_KEYS = {"gamma", "learning_rate", "batch_size", "target_update_period",
             "epsilon_start", "epsilon_end", "epsilon_decay_steps",
             "buffer_capacity", "learn_start", "alpha", "beta0",
             "beta_anneal_steps", "epsilon_p"}
_TRAIN_KEYS = {"total_env_steps", "checkpoint_period", "eval_scenarios", "d"}
_AYSS_KEYS = {"n_samples", "bin_width", "max_headway", "min_ttc", "majority",
              "n_episodes"}


@dataclass
class ExperimentConfig:
    case: str
    vuts: list[str]
    seeds: list[int]
    output_dir: Path
    sim_cfg: sim.SimConfig
    reward_cfg: RewardConfig
    dqn_hp: DqnHyperparams
    train_defaults: dict
    ayss_filter: AyssFilterConfig
    n_samples: int
    bin_width: float
    majority: float
    n_episodes: int
    resolved: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.resolved, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def train_run(self, vut: str, seed: int, total_env_steps=None) -> TrainRunConfig:
        kwargs = dict(self.train_defaults)
        if total_env_steps is not None:
            kwargs["total_env_steps"] = int(total_env_steps)
        return TrainRunConfig(case=self.case, vut=vut, seed=seed, **kwargs)

    def run_dir(self, vut: str, seed: int) -> Path:
        return self.output_dir / "runs" / f"{self.case}_{vut}_seed{seed}"


def _check_keys(section: str, data: dict, allowed: set[str]) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}; "
                          f"allowed: {sorted(allowed)}")


def _pair(value) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"expected a [low, high] pair, got {value!r}")
    return (float(value[0]), float(value[1]))


def load_config(path: Path | str) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(raw, base_dir=path.parent)


def parse_config(raw: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    _check_keys("top-level", raw, _TOP_KEYS)
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")

    case = raw.get("case", sim.ONE_LANE)
    if case not in (sim.ONE_LANE, sim.TWO_LANE):
        raise ConfigError(f"case must be one_lane or two_lane, got {case!r}")

    vuts = raw.get("vuts", ["pi1", "pi2"])
    for name in vuts:
        if name not in NAMED_VUTS:
            raise ConfigError(f"unknown VUT policy {name!r}; "
                              f"known: {sorted(NAMED_VUTS)}")
    seeds = [int(s) for s in raw.get("seeds", [0, 1, 2])]

    sim_raw = dict(raw.get("sim") or {})
    _check_keys("sim", sim_raw, _SIM_KEYS)
    for key in ("accel_bounds", "init_speed_bounds", "gap_bounds_one_lane",
                "gap_bounds_two_lane", "pov_speed_offsets"):
        if key in sim_raw:
            sim_raw[key] = _pair(sim_raw[key])
    try:
        sim_cfg = sim.SimConfig(**sim_raw)
    except (TypeError, sim.SimError) as exc:
        raise ConfigError(f"sim: {exc}") from exc

    reward_raw = dict(raw.get("reward") or {})
    _check_keys("reward", reward_raw, _REWARD_KEYS)
    try:
        reward_cfg = RewardConfig(
            case=case,
            alpha_a=float(reward_raw.get("alpha_a", 1.0)),
            alpha_c=float(reward_raw.get("alpha_c", 25.0)),
            one_lane_shape=RewardShape(
                float(reward_raw.get("one_lane_peak", 0.25)),
                float(reward_raw.get("one_lane_zero", 20.0))),
            lane_change_shape=RewardShape(
                float(reward_raw.get("lane_change_peak", 1.0)),
                float(reward_raw.get("lane_change_zero", 5.0))),
            same_lane_shape=RewardShape(
                float(reward_raw.get("same_lane_peak", 0.25)),
                float(reward_raw.get("same_lane_zero", 20.0))),
        )
    except ValueError as exc:
        raise ConfigError(f"reward: {exc}") from exc

    dqn_raw = dict(raw.get("dqn") or {})
    _check_keys("dqn", dqn_raw, _DQN_KEYS)
    try:
        dqn_hp = DqnHyperparams(**dqn_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"dqn: {exc}") from exc

    train_raw = dict(raw.get("train") or {})
    _check_keys("train", train_raw, _TRAIN_KEYS)
    try:
        TrainRunConfig(case=case, **train_raw)  # validate eagerly
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc

    ayss_raw = dict(raw.get("ayss") or {})
    _check_keys("ayss", ayss_raw, _AYSS_KEYS)
    try:
        ayss_filter = AyssFilterConfig(
            case=case,
            max_headway=float(ayss_raw.get("max_headway", 5.0)),
            min_ttc=float(ayss_raw.get("min_ttc", 0.2)))
    except ValueError as exc:
        raise ConfigError(f"ayss: {exc}") from exc

    output_dir = Path(raw.get("output_dir", "out"))
    if not output_dir.is_absolute():
        output_dir = base_dir / output_dir

    resolved = {
        "schema_version": SCHEMA_VERSION,
        "case": case,
        "vuts": list(vuts),
        "seeds": seeds,
        "sim": sim_raw,
        "reward": reward_raw,
        "dqn": dqn_raw,
        "train": train_raw,
        "ayss": ayss_raw,
    }

    return ExperimentConfig(
        case=case, vuts=list(vuts), seeds=seeds, output_dir=output_dir,
        sim_cfg=sim_cfg, reward_cfg=reward_cfg, dqn_hp=dqn_hp,
        train_defaults=train_raw, ayss_filter=ayss_filter,
        n_samples=int(ayss_raw.get("n_samples", 100_000)),
        bin_width=float(ayss_raw.get("bin_width", 0.25)),
        majority=float(ayss_raw.get("majority", 0.8)),
        n_episodes=int(ayss_raw.get("n_episodes", 200)),
        resolved=resolved)
