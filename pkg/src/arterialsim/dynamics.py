"""Per-vehicle longitudinal dynamics and lane changing.

Car following uses the Intelligent Driver Model. Automated vehicles run
tighter parameters (shorter headway, no start-up lost time); conventional
drivers get a per-vehicle desired-speed draw and a 2 s start-up lost time at
the head of a discharging queue.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from .errors import NonPositiveGap

VEHICLE_LENGTH = 4.5  # m

EMERGENCY_DECEL = 9.0  # m/s^2, absolute floor for commanded deceleration
DILEMMA_DECEL = 3.0  # m/s^2, comfortable-stop threshold at yellow onset
SAFE_DECEL = 3.5  # m/s^2, max deceleration imposed on a new follower by a lane change
INCENTIVE_THRESHOLD = 0.2  # m/s^2 IDM gain required for a discretionary change
LANE_CHANGE_COOLDOWN = 2.0  # s
SEEK_DISTANCE = 800.0  # m before a mandatory deadline at which a vehicle starts seeking
PANIC_DISTANCE = 100.0  # m before the deadline at which the vehicle slows for a gap
PANIC_SPEED = 5.0  # m/s crawl target while hunting for a mandatory gap
SPEED_TOLERANCE = 1.1  # vehicles never exceed 1.1 x link speed limit


class VehicleClass(enum.Enum):
    AUTOMATED = "automated"
    CONVENTIONAL = "conventional"


@dataclass(frozen=True)
class DriverParams:
    desired_speed: float  # v0, m/s
    max_accel: float  # a, m/s^2
    comfortable_decel: float  # b, m/s^2
    min_gap: float  # s0, m
    headway: float  # T, s
    startup_lost_time: float  # s

    def __post_init__(self):
        for name in ("desired_speed", "max_accel", "comfortable_decel", "min_gap", "headway"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.startup_lost_time < 0:
            raise ValueError("startup_lost_time must be >= 0")


def automated_params(speed_limit: float) -> DriverParams:
    return DriverParams(
        desired_speed=speed_limit,
        max_accel=2.0,
        comfortable_decel=2.5,
        min_gap=1.0,
        headway=0.9,
        startup_lost_time=0.0,
    )


def conventional_params(speed_limit: float, speed_factor: float = 1.0) -> DriverParams:
    """speed_factor is the per-driver desired-speed draw, nominally in [0.9, 1.1]."""
    return DriverParams(
        desired_speed=speed_limit * speed_factor,
        max_accel=1.5,
        comfortable_decel=2.0,
        min_gap=2.0,
        headway=1.5,
        startup_lost_time=2.0,
    )


@dataclass(frozen=True)
class Route:
    left_at: str | None = None  # intersection id, None = through


@dataclass(frozen=True)
class Vehicle:
    id: int
    vehicle_class: VehicleClass
    direction: str
    position: float  # m along the direction chain
    lane_index: int
    speed: float
    accel: float
    params: DriverParams
    route: Route = Route()
    advisory: float | None = None  # target speed, m/s
    entry_time: float = 0.0
    length: float = VEHICLE_LENGTH


def idm_acceleration(follower: Vehicle, gap: float | None, leader_speed: float, params: DriverParams) -> float:
    """IDM acceleration; gap=None means unobstructed (free road ahead)."""
    v = follower.speed
    free = params.max_accel * (1.0 - (v / params.desired_speed) ** 4)
    if gap is None:
        return max(free, -EMERGENCY_DECEL)
    if gap <= 0:
        raise NonPositiveGap(f"gap must be > 0 when a leader exists, got {gap}")
    dv = v - leader_speed
    s_star = params.min_gap + v * params.headway + v * dv / (
        2.0 * math.sqrt(params.max_accel * params.comfortable_decel)
    )
    s_star = max(0.0, s_star)
    accel = params.max_accel * (1.0 - (v / params.desired_speed) ** 4 - (s_star / gap) ** 2)
    return max(accel, -EMERGENCY_DECEL)


def advance(vehicle: Vehicle, commanded_accel: float, dt: float) -> Vehicle:
    """Ballistic update with the speed floored at zero: when the vehicle would
    stop mid-step, the position gain uses the truncated profile."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    v = vehicle.speed
    a = commanded_accel
    v_new = v + a * dt
    if v_new < 0.0:
        # Stops at t* = v / -a; no motion afterwards.
        dx = 0.0 if a >= 0 else v * v / (-2.0 * a)
        v_new = 0.0
    else:
        dx = (v + v_new) * 0.5 * dt
    return replace(vehicle, position=vehicle.position + dx, speed=v_new, accel=a)


def signal_interaction(
    vehicle: Vehicle,
    distance_to_stopbar: float,
    state: str,
    time_since_green: float = 0.0,
    first_in_queue: bool = False,
) -> tuple[float, float] | None:
    """Virtual stopped leader implied by the signal, or None when the vehicle
    may proceed.

    Red always presents a stopped leader at the bar. Yellow does unless the
    vehicle is kinematically unable to stop at the comfortable-dilemma
    threshold. On green, a conventional vehicle at the head of the queue stays
    held until its start-up lost time has elapsed since green onset.
    """
    if distance_to_stopbar < 0:
        raise ValueError("distance_to_stopbar must be >= 0")
    from .signals import GREEN, RED, YELLOW

    if state == RED:
        return (distance_to_stopbar, 0.0)
    if state == YELLOW:
        v = vehicle.speed
        if distance_to_stopbar <= 1e-9:
            return None
        required = v * v / (2.0 * distance_to_stopbar)
        if required <= DILEMMA_DECEL:
            return (distance_to_stopbar, 0.0)
        return None
    # Green: start-up lost time for the first conventional vehicle in queue.
    if (
        first_in_queue
        and vehicle.vehicle_class is VehicleClass.CONVENTIONAL
        and time_since_green < vehicle.params.startup_lost_time
    ):
        return (distance_to_stopbar, 0.0)
    return None


@dataclass(frozen=True)
class LaneInfo:
    """Neighbors in one adjacent lane, gaps measured from this vehicle."""
    lead_gap: float | None  # None = no leader in that lane
    lead_speed: float
    follow_gap: float | None  # None = no follower
    follow_speed: float
    reserved: bool = False


@dataclass(frozen=True)
class Neighborhood:
    current_lead_gap: float | None
    current_lead_speed: float
    left: LaneInfo | None  # None = no lane to the left
    right: LaneInfo | None


def _accel_for(vehicle: Vehicle, gap: float | None, lead_speed: float) -> float:
    if gap is not None and gap <= 0:
        return -EMERGENCY_DECEL
    return idm_acceleration(vehicle, gap, lead_speed, vehicle.params)


def _follower_decel_ok(info: LaneInfo, vehicle: Vehicle, b_limit: float) -> bool:
    if info.follow_gap is None:
        return True
    if info.follow_gap <= 0.3:
        return False
    # Follower params unknown at this level; a nominal conventional profile is
    # the conservative estimate.
    probe = Vehicle(
        id=-1,
        vehicle_class=VehicleClass.CONVENTIONAL,
        direction=vehicle.direction,
        position=0.0,
        lane_index=0,
        speed=info.follow_speed,
        accel=0.0,
        params=conventional_params(max(vehicle.params.desired_speed, info.follow_speed, 1.0)),
    )
    return idm_acceleration(probe, info.follow_gap, vehicle.speed, probe.params) >= -b_limit


def _target_safe(vehicle: Vehicle, info: LaneInfo, b_limit: float = SAFE_DECEL) -> bool:
    if info.lead_gap is not None and info.lead_gap <= 0.3:
        return False
    own = _accel_for(vehicle, info.lead_gap, info.lead_speed)
    if own < -b_limit:
        return False
    return _follower_decel_ok(info, vehicle, b_limit)


def lane_change_decision(vehicle: Vehicle, neighborhood: Neighborhood, obligations) -> str:
    """Returns 'stay', 'move_left' or 'move_right'. Mandatory obligations
    (leave reserved lane before the jughandle, keep conventional traffic out
    of reserved lanes, reach the right-most lane before the diverge) dominate
    discretionary IDM-gain moves."""
    from .reservation import ObligationKind

    keep_out = any(ob.kind is ObligationKind.KEEP_OUT_OF_RESERVED for ob in obligations)

    def allowed(info: LaneInfo | None) -> bool:
        if info is None:
            return False
        if keep_out and info.reserved:
            return False
        return True

    # Mandatory rightward pull toward a jughandle diverge or out of a reserved lane.
    deadlines = [
        ob.position
        for ob in obligations
        if ob.kind in (ObligationKind.REACH_RIGHTMOST_BEFORE, ObligationKind.EXIT_RESERVED_BEFORE)
        and ob.position is not None
    ]
    if deadlines and neighborhood.right is not None:
        deadline = min(deadlines)
        dist = deadline - vehicle.position
        if dist < SEEK_DISTANCE:
            b_limit = vehicle.params.comfortable_decel + 2.0 if dist < PANIC_DISTANCE else SAFE_DECEL
            if allowed(neighborhood.right) and _target_safe(vehicle, neighborhood.right, b_limit):
                return "move_right"
            return "stay"

    # Discretionary: IDM-acceleration incentive with safety on both sides.
    current = _accel_for(vehicle, neighborhood.current_lead_gap, neighborhood.current_lead_speed)
    best = "stay"
    best_gain = INCENTIVE_THRESHOLD
    for name, info in (("move_left", neighborhood.left), ("move_right", neighborhood.right)):
        if not allowed(info):
            continue
        if not _target_safe(vehicle, info):
            continue
        gain = _accel_for(vehicle, info.lead_gap, info.lead_speed) - current
        if gain > best_gain:
            best = name
            best_gain = gain
    return best
