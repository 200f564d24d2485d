"""Deterministic 5 Hz highway world.

Straight, longitudinally infinite road with one or two lanes. Vehicles are
kinematic bicycles integrated with semi-implicit Euler (speed first, then
pose with the new speed). Low-level control is a proportional speed tracker
plus a two-gain lateral law for lane keeping / lane changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .replay import Transition

MAX_STEER = math.pi / 6
MAX_HEADING_TARGET = math.pi / 12
K_LAT = 1.5    # 1/s, lateral error -> lateral closing rate
K_HEAD = 2.5   # 1/s, heading error -> commanded heading rate

LANE_DONE_Y_TOL = 0.1    # m, lateral tolerance for maneuver completion
LANE_DONE_HEADING_TOL = 0.02  # rad

ONE_LANE = "one_lane"
TWO_LANE = "two_lane"

# POV action spaces.
# one_lane: target-speed multipliers u' in {0.0, 0.5, ..., 10.0}; the target
# speed is u' * current POV speed.
# two_lane: action 0 starts a lane change, actions 1..41 set absolute target
# speeds {0, 1, ..., 40} m/s.
ONE_LANE_MULTIPLIERS = tuple(0.5 * k for k in range(21))
TWO_LANE_TARGET_SPEEDS = tuple(float(k) for k in range(41))
LANE_CHANGE_ACTION = 0


class SimError(ValueError):
    """Invalid simulator input or configuration."""


@dataclass(frozen=True)
class RoadConfig:
    lane_count: int = 1
    lane_width: float = 4.0
    speed_limit: float = 30.0

    def __post_init__(self):
        if self.lane_count not in (1, 2):
            raise SimError(f"lane_count must be 1 or 2, got {self.lane_count}")
        if self.lane_width <= 0 or self.speed_limit <= 0:
            raise SimError("lane_width and speed_limit must be positive")

    def lane_center(self, lane: int) -> float:
        if not 0 <= lane < self.lane_count:
            raise SimError(f"lane {lane} out of range for {self.lane_count}-lane road")
        return lane * self.lane_width

    def nearest_lane(self, y: float) -> int:
        lane = int(round(y / self.lane_width))
        return min(max(lane, 0), self.lane_count - 1)


@dataclass
class VehicleState:
    x: float
    y: float
    v: float
    heading: float = 0.0
    length: float = 5.0
    width: float = 2.0


@dataclass
class WorldState:
    time_step: int
    vut: VehicleState
    pov: VehicleState
    pov_target_lane: Optional[int] = None   # active lane-change target, None = keep lane
    pov_target_speed: float = 0.0
    collided: bool = False


@dataclass(frozen=True)
class InitialCondition:
    vut_speed: float
    pov_speed: float
    gap: float          # bumper-to-bumper, positive = POV ahead
    pov_lane: int = 0


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.2
    episode_len: int = 25
    accel_bounds: tuple[float, float] = (-6.0, 6.0)
    speed_cap: float = 40.0
    kp_speed: float = 1.67
    lane_change_duration_nominal: float = 2.0
    # ODD sampling bounds for initial conditions
    init_speed_bounds: tuple[float, float] = (5.0, 30.0)
    gap_bounds_one_lane: tuple[float, float] = (4.0, 8.0)
    gap_bounds_two_lane: tuple[float, float] = (2.0, 12.0)
    # POV initial speed is sampled relative to the VUT's so episodes start
    # near car-following equilibrium instead of with hopeless closing rates.
    pov_speed_offsets: tuple[float, float] = (-6.0, 5.0)
    disturbance_amplitude: float = 0.0  # reserved, fixed 0

    def __post_init__(self):
        if self.dt <= 0 or self.episode_len <= 0:
            raise SimError("dt and episode_len must be positive")
        if self.accel_bounds[0] >= self.accel_bounds[1]:
            raise SimError("accel_bounds must be an increasing pair")


@dataclass
class EpisodeSummary:
    collided: bool
    steps: int
    episode_reward: float
    final_headway: float
    lane_changed: bool = False


def _require_finite(**values):
    for name, value in values.items():
        if not math.isfinite(value):
            raise SimError(f"{name} must be finite, got {value}")


def step_vehicle(state: VehicleState, accel: float, steer: float, dt: float,
                 accel_bounds: tuple[float, float] = (-6.0, 6.0),
                 speed_cap: float = 40.0) -> VehicleState:
    """Semi-implicit Euler update of a kinematic bicycle."""
    _require_finite(accel=accel, steer=steer, dt=dt, x=state.x, y=state.y,
                    v=state.v, heading=state.heading)
    if dt <= 0:
        raise SimError(f"dt must be positive, got {dt}")
    if not accel_bounds[0] - 1e-9 <= accel <= accel_bounds[1] + 1e-9:
        raise SimError(f"accel {accel} outside bounds {accel_bounds}")
    if abs(steer) > MAX_STEER + 1e-9:
        raise SimError(f"steer {steer} exceeds max {MAX_STEER}")

    v_new = min(max(state.v + accel * dt, 0.0), speed_cap)
    heading_new = state.heading + (v_new / state.length) * math.tan(steer) * dt
    x_new = state.x + v_new * math.cos(heading_new) * dt
    y_new = state.y + v_new * math.sin(heading_new) * dt
    return replace(state, x=x_new, y=y_new, v=v_new, heading=heading_new)


def speed_controller(current_v: float, target_v: float,
                     kp_speed: float = 1.67,
                     accel_bounds: tuple[float, float] = (-6.0, 6.0)) -> float:
    """Proportional speed tracking, clamped to the acceleration bounds."""
    _require_finite(current_v=current_v, target_v=target_v)
    accel = kp_speed * (target_v - current_v)
    return min(max(accel, accel_bounds[0]), accel_bounds[1])


def lane_change_controller(state: VehicleState, target_lane: int,
                           road: RoadConfig) -> float:
    """Two-gain lateral law: heading setpoint from lateral error, steer from
    heading error. Also serves as the lane-keeping controller.

    Both loops are normalized by speed so the discrete closed loop stays
    stable at dt = 0.2 s across the whole speed range.
    """
    y_target = road.lane_center(target_lane)
    heading_target = math.atan2(K_LAT * (y_target - state.y), max(state.v, 1.0))
    heading_target = min(max(heading_target, -MAX_HEADING_TARGET), MAX_HEADING_TARGET)
    rate_cmd = K_HEAD * (heading_target - state.heading)
    steer = math.atan(state.length * rate_cmd / max(state.v, 0.5))
    return min(max(steer, -MAX_STEER), MAX_STEER)


def lane_change_complete(state: VehicleState, target_lane: int,
                         road: RoadConfig) -> bool:
    y_target = road.lane_center(target_lane)
    return (abs(state.y - y_target) < LANE_DONE_Y_TOL
            and abs(state.heading) < LANE_DONE_HEADING_TOL)


def _rect_corners(s: VehicleState) -> np.ndarray:
    c, si = math.cos(s.heading), math.sin(s.heading)
    hl, hw = s.length / 2.0, s.width / 2.0
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    rot = np.array([[c, -si], [si, c]])
    return local @ rot.T + np.array([s.x, s.y])


def detect_collision(a: VehicleState, b: VehicleState) -> bool:
    """Oriented-rectangle intersection via the separating axis theorem."""
    ca, cb = _rect_corners(a), _rect_corners(b)
    for corners in (ca, cb):
        edges = np.roll(corners, -1, axis=0) - corners
        # two unique axes per rectangle are enough, but testing all four is cheap
        for ex, ey in edges:
            axis = np.array([-ey, ex])
            pa = ca @ axis
            pb = cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def headway(vut: VehicleState, pov: VehicleState) -> float:
    """Longitudinal bumper-to-bumper gap along the road axis, any lane."""
    return (pov.x - pov.length / 2.0) - (vut.x + vut.length / 2.0)


def sample_initial_condition(rng: np.random.Generator, config: SimConfig,
                             case: str) -> InitialCondition:
    """Draw an initial condition from the case's operational design domain.

    Gap and relative speed are correlated: the POV speed band tracks the
    VUT speed, and in the single-lane case the maximum closing rate shrinks
    with the gap so the VUT's braking authority (|a| <= 6 m/s^2) can always
    avoid the rear-end, keeping every sampled scenario collision-avoidable.
    """
    if case == ONE_LANE:
        gap_bounds = config.gap_bounds_one_lane
        pov_lane = 0
    elif case == TWO_LANE:
        gap_bounds = config.gap_bounds_two_lane
        pov_lane = 1  # left adjacent lane
    else:
        raise SimError(f"unknown case {case!r}")
    lo_v, hi_v = config.init_speed_bounds
    lo_g, hi_g = gap_bounds
    if lo_v > hi_v or lo_g > hi_g:
        raise SimError("degenerate ODD bounds: low > high")
    vut_speed = float(rng.uniform(lo_v, hi_v))
    gap = float(rng.uniform(lo_g, hi_g))
    off_lo, off_hi = config.pov_speed_offsets
    pov_lo = max(0.0, vut_speed + off_lo)
    if case == ONE_LANE:
        # cap the closing rate: stopping from closing speed c under full
        # braking eats c^2 / (2 * 2 * b_max) = c^2 / 24 metres of gap
        margin = max(gap - 3.0, 0.0)
        pov_lo = max(pov_lo, vut_speed - math.sqrt(24.0 * margin))
    pov_hi = min(hi_v, vut_speed + off_hi)
    pov_speed = float(rng.uniform(pov_lo, max(pov_hi, pov_lo)))
    return InitialCondition(
        vut_speed=vut_speed,
        pov_speed=pov_speed,
        gap=gap,
        pov_lane=pov_lane,
    )


def make_world(initial: InitialCondition, road: RoadConfig,
               length: float = 5.0, width: float = 2.0) -> WorldState:
    """Both vehicles lane-centered, headings parallel to the lane direction.
    The VUT always starts in lane 0 at x = 0."""
    vut = VehicleState(x=0.0, y=road.lane_center(0), v=initial.vut_speed,
                       length=length, width=width)
    pov_x = initial.gap + length  # bumper gap -> center distance
    pov = VehicleState(x=pov_x, y=road.lane_center(initial.pov_lane),
                       v=initial.pov_speed, length=length, width=width)
    return WorldState(time_step=0, vut=vut, pov=pov,
                      pov_target_speed=initial.pov_speed,
                      collided=detect_collision(vut, pov))


def action_count(case: str) -> int:
    if case == ONE_LANE:
        return len(ONE_LANE_MULTIPLIERS)
    if case == TWO_LANE:
        return 1 + len(TWO_LANE_TARGET_SPEEDS)
    raise SimError(f"unknown case {case!r}")


def pov_target_speed_for_action(action: int, pov_speed: float,
                                case: str) -> Optional[float]:
    """Target speed set by an action; None for the lane-change action."""
    n = action_count(case)
    if not 0 <= action < n:
        raise SimError(f"action {action} out of range for case {case!r}")
    if case == ONE_LANE:
        return ONE_LANE_MULTIPLIERS[action] * pov_speed
    if action == LANE_CHANGE_ACTION:
        return None
    return TWO_LANE_TARGET_SPEEDS[action - 1]


def pov_observation(world: WorldState, road: RoadConfig, case: str) -> np.ndarray:
    """POV view: {v', v, h} (one lane) or {v', v, h, l} (two lanes)."""
    h = headway(world.vut, world.pov)
    if case == ONE_LANE:
        return np.array([world.pov.v, world.vut.v, h])
    same_lane = 1.0 if road.nearest_lane(world.pov.y) == road.nearest_lane(world.vut.y) else 0.0
    return np.array([world.pov.v, world.vut.v, h, same_lane])


def step_world(world: WorldState, action: int,
               vut_controller: Callable[[WorldState], float],
               config: SimConfig, road: RoadConfig, case: str) -> WorldState:
    """Advance the world one tick given the POV's action index."""
    target_speed = pov_target_speed_for_action(action, world.pov.v, case)
    pov_target_lane = world.pov_target_lane
    pov_target_speed = world.pov_target_speed
    if target_speed is None:
        # start (or continue) a lane change toward the other lane
        if pov_target_lane is None:
            pov_target_lane = 1 - road.nearest_lane(world.pov.y)
    else:
        pov_target_speed = target_speed

    pov_accel = speed_controller(world.pov.v, pov_target_speed,
                                 config.kp_speed, config.accel_bounds)
    steer_lane = pov_target_lane if pov_target_lane is not None else road.nearest_lane(world.pov.y)
    pov_steer = lane_change_controller(world.pov, steer_lane, road)

    vut_accel = vut_controller(world)
    vut_accel = min(max(vut_accel, config.accel_bounds[0]), config.accel_bounds[1])

    vut = step_vehicle(world.vut, vut_accel, 0.0, config.dt,
                       config.accel_bounds, config.speed_cap)
    # perfect lane centering for the VUT
    vut = replace(vut, y=world.vut.y, heading=0.0)
    pov = step_vehicle(world.pov, pov_accel, pov_steer, config.dt,
                       config.accel_bounds, config.speed_cap)

    if pov_target_lane is not None and lane_change_complete(pov, pov_target_lane, road):
        pov_target_lane = None

    collided = world.collided or detect_collision(vut, pov)
    return WorldState(time_step=world.time_step + 1, vut=vut, pov=pov,
                      pov_target_lane=pov_target_lane,
                      pov_target_speed=pov_target_speed,
                      collided=collided)


def run_episode(world: WorldState,
                vut_controller: Callable[[WorldState], float],
                pov_policy: Callable[[np.ndarray], int],
                reward_fn: Callable[[WorldState], float],
                config: SimConfig, road: RoadConfig,
                case: str) -> tuple[list[Transition], EpisodeSummary]:
    """Roll one episode from the POV's perspective.

    Terminates early on collision; the reward of a transition is evaluated on
    the successor state.
    """
    transitions: list[Transition] = []
    episode_reward = 0.0
    lane_changed = False
    n_actions = action_count(case)
    while world.time_step < config.episode_len and not world.collided:
        obs = pov_observation(world, road, case)
        action = int(pov_policy(obs))
        if not 0 <= action < n_actions:
            raise SimError(f"policy returned invalid action index {action}")
        if case == TWO_LANE and action == LANE_CHANGE_ACTION:
            lane_changed = True
        world = step_world(world, action, vut_controller, config, road, case)
        reward = reward_fn(world)
        done = world.collided or world.time_step >= config.episode_len
        next_obs = pov_observation(world, road, case)
        transitions.append(Transition(obs, action, reward, next_obs, done))
        episode_reward += reward
    summary = EpisodeSummary(collided=world.collided, steps=world.time_step,
                             episode_reward=episode_reward,
                             final_headway=headway(world.vut, world.pov),
                             lane_changed=lane_changed)
    return transitions, summary
