"""Surrogate safety measures and the adversarial-yet-safe reward.

The per-step reward is alpha_A * R_A + alpha_C * R_C where R_A is a
piecewise-linear headway shape (rises from 0 at h=0 to 1 at the peak, decays
to 0 at the zero point) and R_C penalizes collision states with the minimum
reward, suppressing R_A.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import sim


@dataclass(frozen=True)
class RewardShape:
    peak_h: float
    zero_h: float

    def __post_init__(self):
        if not 0.0 < self.peak_h < self.zero_h:
            raise ValueError(f"need 0 < peak_h < zero_h, got {self}")


ONE_LANE_SHAPE = RewardShape(peak_h=0.25, zero_h=20.0)
LANE_CHANGE_SHAPE = RewardShape(peak_h=1.0, zero_h=5.0)
SAME_LANE_SHAPE = ONE_LANE_SHAPE


@dataclass(frozen=True)
class RewardConfig:
    case: str = sim.ONE_LANE
    alpha_a: float = 1.0
    alpha_c: float = 25.0
    one_lane_shape: RewardShape = ONE_LANE_SHAPE
    lane_change_shape: RewardShape = LANE_CHANGE_SHAPE
    same_lane_shape: RewardShape = SAME_LANE_SHAPE

    def __post_init__(self):
        if self.alpha_a <= 0 or self.alpha_c <= 0:
            raise ValueError("alpha_a and alpha_c must be positive")

    @property
    def collision_reward(self) -> float:
        return -self.alpha_c

    @property
    def max_step_reward(self) -> float:
        return self.alpha_a


def adversarial_reward(h: float, peak_h: float, zero_h: float) -> float:
    """Headway-shaped reward in [0, 1]: 0 at h<=0, 1 at the peak, 0 beyond
    the zero point, linear in between."""
    if not math.isfinite(h):
        raise ValueError(f"headway must be finite, got {h}")
    if h <= 0.0 or h >= zero_h:
        return 0.0
    if h <= peak_h:
        return h / peak_h
    return (zero_h - h) / (zero_h - peak_h)


def step_reward(world: sim.WorldState, road: sim.RoadConfig,
                config: RewardConfig) -> float:
    if world.collided:
        return config.collision_reward
    h = sim.headway(world.vut, world.pov)
    if config.case == sim.ONE_LANE:
        shape = config.one_lane_shape
    else:
        changing = world.pov_target_lane is not None
        same_lane = road.nearest_lane(world.pov.y) == road.nearest_lane(world.vut.y)
        if changing:
            shape = config.lane_change_shape
        elif same_lane:
            shape = config.same_lane_shape
        else:
            return 0.0
    return config.alpha_a * adversarial_reward(h, shape.peak_h, shape.zero_h)


def ttc_1d(h: float, v_follower: float, v_leader: float) -> float:
    """Time to collision of a follower closing a gap h; +inf when not
    closing, 0 when already in contact."""
    if h <= 0.0:
        return 0.0
    closing = v_follower - v_leader
    if closing <= 0.0:
        return math.inf
    return h / closing


def delta_v_bar(p_rel: np.ndarray, v_rel: np.ndarray) -> float:
    """Scalar projection of the relative velocity onto the relative position
    direction; negative means the vehicles are approaching."""
    p_rel = np.asarray(p_rel, dtype=float)
    v_rel = np.asarray(v_rel, dtype=float)
    norm = float(np.linalg.norm(p_rel))
    if norm == 0.0:
        raise ValueError("relative position is zero; vehicles coincident")
    return float(p_rel @ v_rel) / norm


@dataclass
class AggressivenessRecord:
    observation: np.ndarray
    action: int
    headway: float
    derived_accel: Optional[float] = None   # one_lane
    delta_v_bar: Optional[float] = None     # two_lane

    def __post_init__(self):
        if (self.derived_accel is None) == (self.delta_v_bar is None):
            raise ValueError("exactly one of derived_accel / delta_v_bar "
                             "must be set")

    @property
    def metric(self) -> float:
        return self.derived_accel if self.derived_accel is not None else self.delta_v_bar
