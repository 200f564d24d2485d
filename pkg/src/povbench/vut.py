"""Black-box vehicle-under-test policies.

IDM longitudinal control with perfect lane centering and no lane changes.
The rest of the system only sees an opaque observation -> acceleration
callable; IDM parameters stay private to this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from . import sim

ACCEL_BOUNDS = (-6.0, 6.0)


@dataclass(frozen=True)
class IDMParams:
    v0: float = 30.0      # desired speed, m/s
    s0: float = 10.0      # minimum spacing, m
    T: float = 1.5        # desired time headway, s
    a_max: float = 3.0    # max comfortable acceleration, m/s^2
    b: float = 5.0        # comfortable deceleration, m/s^2
    delta: float = 4.0

    def __post_init__(self):
        for name in ("v0", "s0", "T", "a_max", "b", "delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"IDM parameter {name} must be positive")


PI1 = IDMParams(s0=10.0)
PI2 = IDMParams(s0=20.0)
NAMED_VUTS = {"pi1": PI1, "pi2": PI2}


def idm_accel(v: float, v_lead: Optional[float], gap: Optional[float],
              params: IDMParams,
              accel_bounds: tuple[float, float] = ACCEL_BOUNDS) -> float:
    """IDM acceleration; gap=None means free road. A non-positive gap means
    contact, where the model is singular, so maximum braking is returned."""
    if v < 0 or (v_lead is not None and v_lead < 0):
        raise ValueError("speeds must be non-negative")
    free_flow = 1.0 - (v / params.v0) ** params.delta
    if gap is None or math.isinf(gap):
        a = params.a_max * free_flow
    elif gap <= 0:
        return accel_bounds[0]
    else:
        dv = v - (v_lead if v_lead is not None else 0.0)
        s_star = params.s0 + max(0.0, v * params.T
                                 + v * dv / (2.0 * math.sqrt(params.a_max * params.b)))
        a = params.a_max * (free_flow - (s_star / gap) ** 2)
    return min(max(a, accel_bounds[0]), accel_bounds[1])


class IdmVut:
    """Opaque observation -> acceleration interface around IDM."""

    def __init__(self, params: IDMParams):
        self.__params = params

    def act(self, v: float, v_lead: Optional[float], gap: Optional[float]) -> float:
        return idm_accel(v, v_lead, gap, self.__params)


def make_vut(name: str) -> IdmVut:
    if name not in NAMED_VUTS:
        raise KeyError(f"unknown VUT policy {name!r}; known: {sorted(NAMED_VUTS)}")
    return IdmVut(NAMED_VUTS[name])


def perceived_leader(world: sim.WorldState, road: sim.RoadConfig
                     ) -> tuple[Optional[float], Optional[float]]:
    """(lead speed, gap) of the POV as seen by the VUT, or (None, None).

    The POV counts as a leader once its footprint reaches into the VUT's
    lane (lateral center within half a vehicle width of the lane boundary)
    and its center is not behind the VUT's.
    """
    vut_lane_center = world.vut.y
    half_lane = road.lane_width / 2.0
    lateral_offset = abs(world.pov.y - vut_lane_center)
    in_lane = lateral_offset < half_lane + world.pov.width / 2.0
    ahead = world.pov.x >= world.vut.x
    if in_lane and ahead:
        return world.pov.v, sim.headway(world.vut, world.pov)
    return None, None


def vut_controller(vut: IdmVut, road: sim.RoadConfig
                   ) -> Callable[[sim.WorldState], float]:
    """Adapts the opaque VUT policy to the world-stepping interface."""
    def controller(world: sim.WorldState) -> float:
        v_lead, gap = perceived_leader(world, road)
        return vut.act(world.vut.v, v_lead, gap)
    return controller
