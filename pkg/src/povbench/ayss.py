"""Adversarial-yet-safe scenario generation and VUT safety comparison.

Single-step scenarios are produced by Monte-Carlo sampling the adversary's
observation space, querying its greedy action, and filtering out typical
states and unavoidable collisions. Aggressiveness curves over headway and
whole-episode safety outcomes feed the final verdict.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import sim
from .dqn import normalize_obs
from .nets import DuelingNet
from .reward import AggressivenessRecord, RewardConfig, delta_v_bar, step_reward, ttc_1d
from .vut import make_vut, vut_controller

CI_Z = 1.96  # normal-approximation 95% confidence interval

# observation-space sampling box
SPEED_BOX = (0.0, 40.0)
HEADWAY_BOX_ONE_LANE = (0.0, 100.0)   # lower edge open: h=0 resampled away
HEADWAY_BOX_TWO_LANE = (-10.0, 100.0)


@dataclass(frozen=True)
class AyssFilterConfig:
    case: str = sim.ONE_LANE
    max_headway: float = 5.0   # one_lane: keep h <= this
    min_ttc: float = 0.2       # one_lane: drop unavoidable collisions below this

    def __post_init__(self):
        if self.max_headway <= 0 or self.min_ttc <= 0:
            raise ValueError("filter thresholds must be positive")


@dataclass
class OutcomeRow:
    vut: str
    seed: int
    n_episodes: int
    crash_rate: float                       # percent
    mean_episode_reward: float
    mean_final_headway: float
    lane_change_rate: Optional[float] = None  # percent, two_lane only


@dataclass
class CurveBin:
    bin_low: float
    bin_high: float
    group: str
    mean: float
    ci_low: Optional[float]
    ci_high: Optional[float]
    n: int


@dataclass
class CurveReport:
    bin_width: float
    bins: list[CurveBin]

    def group_bins(self, group: str) -> dict[int, CurveBin]:
        return {int(round(b.bin_low / self.bin_width)): b
                for b in self.bins if b.group == group}


@dataclass
class Verdict:
    group_a: str
    group_b: str
    common_bins: int
    frac_a_more_aggressive: float
    frac_b_more_aggressive: float
    verdict: str                # "<group> safer" or "inconclusive"
    outcomes_comparable: Optional[bool] = None
    mean_reward_by_group: dict = field(default_factory=dict)


def _greedy_actions(policy, observations: np.ndarray) -> np.ndarray:
    """Greedy actions for a batch; accepts a DuelingNet (batched forward) or
    a plain observation -> action callable."""
    if isinstance(policy, DuelingNet):
        actions = np.empty(len(observations), dtype=np.int64)
        chunk = 4096
        for i in range(0, len(observations), chunk):
            q = policy.q_values(normalize_obs(observations[i:i + chunk]))
            actions[i:i + chunk] = np.argmax(q, axis=1)
        return actions
    return np.array([int(policy(obs)) for obs in observations], dtype=np.int64)


def sample_ayss(policy, n_samples: int, filter_cfg: AyssFilterConfig,
                rng: np.random.Generator,
                sim_cfg: sim.SimConfig = sim.SimConfig(),
                vehicle_length: float = 5.0,
                lane_width: float = 4.0) -> list[AggressivenessRecord]:
    """Monte-Carlo sample the observation box, keep the surviving AYSSs."""
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    case = filter_cfg.case
    lo_v, hi_v = SPEED_BOX
    v_pov = rng.uniform(lo_v, hi_v, n_samples)
    v_vut = rng.uniform(lo_v, hi_v, n_samples)
    if case == sim.ONE_LANE:
        lo_h, hi_h = HEADWAY_BOX_ONE_LANE
        h = rng.uniform(lo_h, hi_h, n_samples)
        h[h == lo_h] = np.nextafter(lo_h, hi_h)  # open lower edge
        observations = np.column_stack([v_pov, v_vut, h])
    else:
        lo_h, hi_h = HEADWAY_BOX_TWO_LANE
        h = rng.uniform(lo_h, hi_h, n_samples)
        lane_flag = rng.integers(0, 2, n_samples).astype(float)
        observations = np.column_stack([v_pov, v_vut, h, lane_flag])

    actions = _greedy_actions(policy, observations)
    records: list[AggressivenessRecord] = []
    for obs, action in zip(observations, actions):
        action = int(action)
        if case == sim.ONE_LANE:
            vp, vv, hh = obs
            if hh > filter_cfg.max_headway:
                continue  # typical, not safety-critical
            if ttc_1d(hh, vv, vp) < filter_cfg.min_ttc:
                continue  # unavoidable collision
            target = sim.pov_target_speed_for_action(action, vp, case)
            accel = sim.speed_controller(vp, target, sim_cfg.kp_speed,
                                         sim_cfg.accel_bounds)
            records.append(AggressivenessRecord(
                observation=obs, action=action, headway=float(hh),
                derived_accel=accel))
        else:
            vp, vv, hh, _lane = obs
            if action != sim.LANE_CHANGE_ACTION:
                continue  # single-step scenario is critical only for cut-ins
            if hh < 0:
                continue  # POV rear bumper behind the VUT front bumper
            # reconstruct 2-D vectors: POV at the left-lane center, heading 0
            p_rel = np.array([hh + vehicle_length, lane_width])
            v_rel = np.array([vp - vv, 0.0])
            records.append(AggressivenessRecord(
                observation=obs, action=action, headway=float(hh),
                delta_v_bar=delta_v_bar(p_rel, v_rel)))
    return records


def build_curve(groups: dict[str, list[AggressivenessRecord]],
                bin_width: float = 0.25) -> CurveReport:
    """Bin records by headway and compute per-group means with 95% CIs."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    total = sum(len(records) for records in groups.values())
    if total == 0:
        raise ValueError("no records to bin")
    bins: list[CurveBin] = []
    for group, records in groups.items():
        by_bin: dict[int, list[float]] = {}
        for record in records:
            by_bin.setdefault(math.floor(record.headway / bin_width), []).append(
                record.metric)
        for idx in sorted(by_bin):
            values = np.array(by_bin[idx])
            mean = float(values.mean())
            if len(values) >= 2:
                half = CI_Z * float(values.std(ddof=1)) / math.sqrt(len(values))
                ci = (mean - half, mean + half)
            else:
                ci = (None, None)
            bins.append(CurveBin(bin_low=idx * bin_width,
                                 bin_high=(idx + 1) * bin_width,
                                 group=group, mean=mean,
                                 ci_low=ci[0], ci_high=ci[1], n=len(values)))
    return CurveReport(bin_width=bin_width, bins=bins)


def safety_outcome_study(policy: Callable[[np.ndarray], int], vut_name: str,
                         n_episodes: int, rng: np.random.Generator,
                         case: str, seed: int = 0,
                         sim_cfg: sim.SimConfig = sim.SimConfig(),
                         reward_cfg: Optional[RewardConfig] = None) -> OutcomeRow:
    """Full greedy episodes from fresh initial conditions.

    For the cut-in case, mean reward and mean final headway are computed
    over lane-changing, collision-free episodes only.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    road = sim.RoadConfig(lane_count=1 if case == sim.ONE_LANE else 2)
    reward_cfg = reward_cfg or RewardConfig(case=case)
    vut_ctrl = vut_controller(make_vut(vut_name), road)
    reward_fn = lambda world: step_reward(world, road, reward_cfg)

    summaries = []
    for _ in range(n_episodes):
        initial = sim.sample_initial_condition(rng, sim_cfg, case)
        world = sim.make_world(initial, road)
        _, summary = sim.run_episode(world, vut_ctrl, policy, reward_fn,
                                     sim_cfg, road, case)
        summaries.append(summary)

    crashes = sum(s.collided for s in summaries)
    if case == sim.ONE_LANE:
        kept = summaries
        lc_rate = None
    else:
        lc = sum(s.lane_changed for s in summaries)
        lc_rate = 100.0 * lc / n_episodes
        kept = [s for s in summaries if s.lane_changed and not s.collided]
    if kept:
        mean_reward = float(np.mean([s.episode_reward for s in kept]))
        mean_headway = float(np.mean([s.final_headway for s in kept]))
    else:
        mean_reward = math.nan
        mean_headway = math.nan
    return OutcomeRow(vut=vut_name, seed=seed, n_episodes=n_episodes,
                      crash_rate=100.0 * crashes / n_episodes,
                      mean_episode_reward=mean_reward,
                      mean_final_headway=mean_headway,
                      lane_change_rate=lc_rate)


def compare_vuts(curve: CurveReport, group_a: str, group_b: str,
                 outcomes: Optional[list[OutcomeRow]] = None,
                 majority: float = 0.8,
                 outcome_tolerance: float = 0.15) -> Verdict:
    """Per-bin dominance over common headway bins. Lower metric means more
    aggressive (harder braking / faster approach), which indicates the safer
    VUT. Antisymmetric in the two groups."""
    bins_a = curve.group_bins(group_a)
    bins_b = curve.group_bins(group_b)
    common = sorted(set(bins_a) & set(bins_b))
    if not common:
        return Verdict(group_a=group_a, group_b=group_b, common_bins=0,
                       frac_a_more_aggressive=0.0, frac_b_more_aggressive=0.0,
                       verdict="inconclusive")
    a_wins = sum(bins_a[i].mean < bins_b[i].mean for i in common)
    b_wins = sum(bins_b[i].mean < bins_a[i].mean for i in common)
    frac_a = a_wins / len(common)
    frac_b = b_wins / len(common)
    if frac_b >= majority:
        verdict = f"{group_b} safer"
    elif frac_a >= majority:
        verdict = f"{group_a} safer"
    else:
        verdict = "inconclusive"

    comparable = None
    reward_by_group: dict[str, float] = {}
    if outcomes:
        for group in (group_a, group_b):
            values = [o.mean_episode_reward for o in outcomes if o.vut == group
                      and not math.isnan(o.mean_episode_reward)]
            if values:
                reward_by_group[group] = float(np.mean(values))
        if len(reward_by_group) == 2:
            ra, rb = reward_by_group[group_a], reward_by_group[group_b]
            comparable = abs(ra - rb) <= outcome_tolerance * max(abs(ra), abs(rb))
    return Verdict(group_a=group_a, group_b=group_b, common_bins=len(common),
                   frac_a_more_aggressive=frac_a, frac_b_more_aggressive=frac_b,
                   verdict=verdict, outcomes_comparable=comparable,
                   mean_reward_by_group=reward_by_group)


def write_records_csv(path: Path | str, records: list[AggressivenessRecord],
                      case: str, meta: Optional[dict] = None) -> None:
    obs_cols = (["pov_speed", "vut_speed", "headway"] if case == sim.ONE_LANE
                else ["pov_speed", "vut_speed", "headway", "same_lane"])
    metric_col = "derived_accel" if case == sim.ONE_LANE else "delta_v_bar"
    with open(path, "w", newline="") as f:
        _write_meta(f, meta)
        writer = csv.writer(f)
        writer.writerow(obs_cols + ["action", metric_col])
        for r in records:
            writer.writerow([f"{v:.6f}" for v in r.observation]
                            + [r.action, f"{r.metric:.6f}"])


def write_curve_csv(path: Path | str, curve: CurveReport,
                    meta: Optional[dict] = None) -> None:
    with open(path, "w", newline="") as f:
        _write_meta(f, meta)
        writer = csv.writer(f)
        writer.writerow(["bin_low", "bin_high", "group", "mean",
                         "ci_low", "ci_high", "n"])
        for b in curve.bins:
            writer.writerow([b.bin_low, b.bin_high, b.group, f"{b.mean:.6f}",
                             "" if b.ci_low is None else f"{b.ci_low:.6f}",
                             "" if b.ci_high is None else f"{b.ci_high:.6f}",
                             b.n])


def write_outcomes_csv(path: Path | str, rows: list[OutcomeRow],
                       meta: Optional[dict] = None) -> None:
    with open(path, "w", newline="") as f:
        _write_meta(f, meta)
        writer = csv.writer(f)
        writer.writerow(["vut", "seed", "n_episodes", "crash_rate",
                         "lane_change_rate", "mean_episode_reward",
                         "mean_final_headway"])
        for r in rows:
            writer.writerow([
                r.vut, r.seed, r.n_episodes, f"{r.crash_rate:.2f}",
                "" if r.lane_change_rate is None else f"{r.lane_change_rate:.2f}",
                f"{r.mean_episode_reward:.4f}", f"{r.mean_final_headway:.4f}"])


def _write_meta(f, meta: Optional[dict]) -> None:
    if meta:
        for key, value in meta.items():
            f.write(f"# {key}={value}\n")
