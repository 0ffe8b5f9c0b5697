"""Centralized speed-advisory agent.

Every control interval the agent snapshots all equipped vehicles and signal
plans, then issues one constant target speed per vehicle chosen so the
vehicle's stop-bar arrival (after a bounded-acceleration transition from its
current speed) lands inside a green window. Infeasible cases fall back to the
floor speed and queue for the next green.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signals import SignalPlan

CONTROL_INTERVAL = 1.0  # s between advisory recomputations
V_MIN_FACTOR = 0.3  # advisory floor as a fraction of the approach speed limit
END_MARGIN = 1.0  # s kept clear at the end of a green window
HORIZON_CYCLES = 3
QUEUE_DISCHARGE_HEADWAY = 2.0  # s added per queued vehicle ahead at the bar
ACCEL_UP = 2.0  # m/s^2 assumed for speed-up transitions
DECEL_DOWN = 2.5  # m/s^2 assumed for slow-down transitions


def arrival_time(distance, speed, target, a_up: float = ACCEL_UP, b_down: float = DECEL_DOWN):
    """Travel time over `distance` when ramping from `speed` to the constant
    `target` (trapezoidal profile), array-broadcastable."""
    d = np.asarray(distance, dtype=float)
    v = np.asarray(speed, dtype=float)
    vt = np.asarray(target, dtype=float)
    dv = vt - v
    rate = np.where(dv >= 0, a_up, b_down)
    t1 = np.abs(dv) / rate
    d1 = (v + vt) * 0.5 * t1
    cruise = t1 + (d - d1) / np.maximum(vt, 1e-9)
    # Arrival mid-transition when the ramp distance exceeds d.
    accel_hit = (-v + np.sqrt(np.maximum(v * v + 2 * a_up * d, 0.0))) / a_up
    decel_hit = (v - np.sqrt(np.maximum(v * v - 2 * b_down * d, 0.0))) / b_down
    mid = np.where(dv >= 0, accel_hit, decel_hit)
    out = np.where(d1 >= d, mid, cruise)
    return out if out.ndim else float(out)


def advisory_speeds(
    distance,
    speed,
    v_min,
    v_max,
    cycle,
    offset,
    green_start,
    green_end,
    now: float,
    queue_delay=0.0,
    horizon_cycles: int = HORIZON_CYCLES,
    end_margin: float = END_MARGIN,
    a_up: float = ACCEL_UP,
    b_down: float = DECEL_DOWN,
):
    """Vectorized advisory: highest constant speed in [v_min, v_max] whose
    stop-bar arrival lands inside a green window within the horizon; v_min
    when no window is reachable. green_start/green_end are local-cycle bounds
    of the green block; queue_delay shifts the earliest window's start."""
    d, v, vmin, vmax, cyc, off, gs, ge, qd = np.broadcast_arrays(
        *(np.atleast_1d(np.asarray(x, dtype=float)) for x in
          (distance, speed, v_min, v_max, cycle, offset, green_start, green_end, queue_delay))
    )
    n = d.shape[0]
    result = vmin.copy()
    done = np.zeros(n, dtype=bool)

    tau_fast = arrival_time(d, v, vmax, a_up, b_down)
    tau_slow = arrival_time(d, v, vmin, a_up, b_down)
    horizon = now + horizon_cycles * cyc

    # Index of the first green window whose end is still ahead of `now`.
    k0 = np.ceil((now - off - ge) / cyc)
    for j in range(horizon_cycles + 1):
        k = k0 + j
        w_start = off + k * cyc + gs
        w_end = off + k * cyc + ge
        start_eff = np.maximum(w_start, now) + np.where(j == 0, qd, 0.0)
        lo = np.maximum(start_eff - now, 0.0)
        hi = w_end - end_margin - now
        feasible = (~done) & (w_start < horizon) & (tau_fast <= hi) & (tau_slow >= lo) & (hi >= lo)
        if np.any(feasible):
            # Max speed with arrival no earlier than lo: bisection on the
            # monotone arrival-time curve.
            fast_ok = feasible & (tau_fast >= lo)
            result[fast_ok] = vmax[fast_ok]
            need = feasible & ~fast_ok
            if np.any(need):
                idxs = np.flatnonzero(need)
                low = vmin[idxs].copy()
                high = vmax[idxs].copy()
                dn, vn, lon = d[idxs], v[idxs], lo[idxs]
                for _ in range(24):
                    mid = 0.5 * (low + high)
                    t_mid = arrival_time(dn, vn, mid, a_up, b_down)
                    too_late = t_mid >= lon
                    low = np.where(too_late, mid, low)
                    high = np.where(too_late, high, mid)
                result[idxs] = low
            done |= feasible
        if np.all(done):
            break
    return result


def compute_advisory(
    distance_to_stopbar: float,
    current_speed: float,
    v_min: float,
    v_max: float,
    plan: SignalPlan,
    now: float,
    queue_delay: float = 0.0,
) -> float:
    """Scalar advisory for one vehicle approaching one signal."""
    if distance_to_stopbar <= 0:
        raise ValueError("distance_to_stopbar must be > 0")
    if v_min > v_max:
        raise ValueError("v_min must not exceed v_max")
    gs, ge = plan.green_bounds()
    out = advisory_speeds(
        distance_to_stopbar, current_speed, v_min, v_max,
        plan.cycle, plan.offset, gs, ge, now, queue_delay,
    )
    return float(out[0])


@dataclass(frozen=True)
class EquippedState:
    vehicle_id: int
    direction: str
    position: float
    speed: float
    lane: int
    left_at: str | None


@dataclass(frozen=True)
class SignalState:
    intersection_id: str
    state: str
    plan: SignalPlan


@dataclass
class SystemSnapshot:
    time: float
    equipped_states: list[EquippedState] = field(default_factory=list)
    signal_states: list[SignalState] = field(default_factory=list)


@dataclass(frozen=True)
class Advisory:
    vehicle_id: int
    target_speed: float
    valid_until: float


def collect(world) -> SystemSnapshot:
    """Snapshot all equipped (automated) vehicles and all signal states."""
    from .signals import phase_state

    snap = SystemSnapshot(time=world.time)
    for vehicle in world.vehicles():
        from .dynamics import VehicleClass

        if vehicle.vehicle_class is VehicleClass.AUTOMATED:
            snap.equipped_states.append(
                EquippedState(
                    vehicle_id=vehicle.id,
                    direction=vehicle.direction,
                    position=vehicle.position,
                    speed=vehicle.speed,
                    lane=vehicle.lane_index,
                    left_at=vehicle.route.left_at,
                )
            )
    for inter in world.corridor.intersections.values():
        snap.signal_states.append(
            SignalState(inter.id, phase_state(inter.signal_plan, world.time), inter.signal_plan)
        )
    snap._world = world
    return snap


def issue_advisories(snapshot: SystemSnapshot) -> list[Advisory]:
    """One advisory per equipped vehicle: window-matched target toward the
    next downstream signal, or the approach v_max past the last signal."""
    from .corridor import next_signal

    world = getattr(snapshot, "_world", None)
    if world is None:
        raise ValueError("snapshot is not bound to a world")
    corridor = world.corridor
    advisories = []
    valid_until = snapshot.time + world.control_interval
    for state in snapshot.equipped_states:
        limit = world.speed_limit(state.direction)
        v_max = limit
        v_min = world.v_min_factor * limit
        found = next_signal(corridor, state.direction, min(state.position, corridor.total_length(state.direction)))
        if found is None or found[1] <= 0.0:
            advisories.append(Advisory(state.vehicle_id, v_max, valid_until))
            continue
        inter, dist = found
        queued = world.queued_ahead(state.vehicle_id)
        target = compute_advisory(
            dist, state.speed, v_min, v_max, inter.signal_plan, snapshot.time,
            queue_delay=QUEUE_DISCHARGE_HEADWAY * queued,
        )
        advisories.append(Advisory(state.vehicle_id, target, valid_until))
    return advisories
