"""Reserved-lane policy and per-vehicle lane-access rules.

The policy maps congestion regime and automated-vehicle market penetration to
a recommended reserved-lane count; the access rules keep conventional traffic
out of reserved lanes and steer left-turning vehicles toward the jughandle.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .corridor import Corridor
from .errors import MpOutOfRange, UnknownIntersection

# Distance upstream of the jughandle diverge by which an automated left-turner
# must have left the reserved lane(s); leaves room for two lane changes at
# arterial speed.
EXIT_MARGIN = 300.0


class LosClass(enum.Enum):
    A_TO_C = "A_to_C"  # uncongested regime
    C_TO_E = "C_to_E"  # congested regime

    @classmethod
    def parse(cls, raw: str) -> "LosClass":
        low = raw.strip().lower()
        for member in cls:
            if member.value.lower() == low or member.name.lower() == low:
                return member
        raise ValueError(f"unknown LOS class '{raw}' (expected A_to_C or C_to_E)")


class ObligationKind(enum.Enum):
    EXIT_RESERVED_BEFORE = "exit_reserved_before"
    KEEP_OUT_OF_RESERVED = "keep_out_of_reserved"
    REACH_RIGHTMOST_BEFORE = "reach_rightmost_before"


@dataclass(frozen=True)
class LaneObligation:
    vehicle_id: int
    kind: ObligationKind
    position: float | None = None  # chain position deadline, None for keep-out


def recommended_reserved_lanes(los: LosClass, mp: float) -> int:
    """Reserved-lane count for a congestion regime and market penetration.

    Uncongested: one lane from 10% penetration, a second from 50%.
    Congested: nothing until penetration exceeds 60%, then two lanes.
    """
    if not 0.0 <= mp <= 1.0:
        raise MpOutOfRange(f"market penetration {mp} outside [0, 1]")
    if los is LosClass.A_TO_C:
        if mp < 0.10:
            return 0
        if mp < 0.50:
            return 1
        return 2
    if mp <= 0.60:
        return 0
    return 2


def lane_access(vehicle_class, lane) -> bool:
    """True when the vehicle class may occupy the lane. Conventional vehicles
    are barred from reserved lanes; automated vehicles may use any lane (they
    must reach general lanes to use jughandles)."""
    from .dynamics import VehicleClass

    reserved = lane.reserved if hasattr(lane, "reserved") else bool(lane)
    if reserved and vehicle_class is VehicleClass.CONVENTIONAL:
        return False
    return True


def obligations_for(vehicle, corridor: Corridor) -> list[LaneObligation]:
    """Lane obligations implied by the vehicle's class, lane and route."""
    from .dynamics import VehicleClass

    obligations: list[LaneObligation] = []
    if vehicle.vehicle_class is VehicleClass.CONVENTIONAL:
        obligations.append(LaneObligation(vehicle.id, ObligationKind.KEEP_OUT_OF_RESERVED))
    target = vehicle.route.left_at
    if target is None:
        return obligations
    if target not in corridor.intersections:
        raise UnknownIntersection(f"route references unknown intersection '{target}'")
    inter = corridor.intersections[target]
    if inter.jughandle is None:
        raise UnknownIntersection(f"intersection '{target}' has no jughandle to turn left at")
    bar_pos = None
    for cand, pos in corridor.signal_positions(vehicle.direction):
        if cand.id == target:
            bar_pos = pos
            break
    if bar_pos is None:
        raise UnknownIntersection(f"intersection '{target}' not on direction '{vehicle.direction}'")
    diverge = bar_pos - inter.jughandle.diverge_position
    link, _ = corridor.link_at(vehicle.direction, min(vehicle.position, corridor.total_length(vehicle.direction)))
    if vehicle.lane_index < len(link.lanes) and link.lanes[vehicle.lane_index].reserved:
        obligations.append(
            LaneObligation(vehicle.id, ObligationKind.EXIT_RESERVED_BEFORE, diverge - EXIT_MARGIN)
        )
    obligations.append(LaneObligation(vehicle.id, ObligationKind.REACH_RIGHTMOST_BEFORE, diverge))
    return obligations
