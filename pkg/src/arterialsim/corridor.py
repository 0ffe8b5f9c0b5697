"""Arterial corridor model: links, lanes, intersections, jughandle ramps.

A corridor is two opposing chains of links (one per travel direction).
Signalized intersections sit between consecutive links of a chain; left turns
happen only via jughandle ramps that diverge from the right-most lane.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

from .errors import InvalidGeometry, LeftTurnWithoutJughandle, OutOfExtent, SpecParseError, TooManyReservedLanes
from .files import Section, parse_sections
from .signals import GREEN, RED, YELLOW, PhaseInterval, SignalPlan

MAX_LANES = 5

_STATE_CODES = {"green": GREEN, "yellow": YELLOW, "red": RED}


@dataclass
class Lane:
    index: int
    reserved: bool = False


@dataclass
class JughandleRamp:
    diverge_position: float  # meters upstream of the stop bar
    ramp_length: float
    target: str  # cross-street sink identifier

    def validate(self):
        if self.diverge_position <= 0:
            raise InvalidGeometry("jughandle diverge_position must be > 0")
        if self.ramp_length <= 0:
            raise InvalidGeometry("jughandle ramp_length must be > 0")


@dataclass
class Intersection:
    id: str
    signal_plan: SignalPlan
    jughandle: JughandleRamp | None = None
    stopbar_positions: dict[str, float] = field(default_factory=dict)  # direction -> m from link start
    through_only: bool = False
    left_turn_fraction: float = 0.0
    coordinated: bool = True


@dataclass
class Link:
    length: float
    lanes: list[Lane]
    speed_limit: float
    direction: str
    downstream_intersection: str | None = None  # None = corridor exit

    def validate(self):
        if self.length <= 0:
            raise InvalidGeometry("link length must be > 0")
        if not (1 <= len(self.lanes) <= MAX_LANES):
            raise InvalidGeometry(f"lane count must be in [1, {MAX_LANES}], got {len(self.lanes)}")
        if self.speed_limit <= 0:
            raise InvalidGeometry("speed_limit must be > 0")
        for i, lane in enumerate(self.lanes):
            if lane.index != i:
                raise InvalidGeometry("lane indices must be 0..n-1 in order")


@dataclass
class Corridor:
    name: str
    links: list[Link]
    intersections: dict[str, Intersection]

    @property
    def directions(self) -> list[str]:
        seen = []
        for link in self.links:
            if link.direction not in seen:
                seen.append(link.direction)
        return seen

    def chain(self, direction: str) -> list[Link]:
        return [link for link in self.links if link.direction == direction]

    def total_length(self, direction: str) -> float:
        return sum(link.length for link in self.chain(direction))

    def link_at(self, direction: str, position: float) -> tuple[Link, float]:
        """Link containing the chain position, and the link-local position."""
        total = self.total_length(direction)
        if position < 0 or position > total:
            raise OutOfExtent(f"position {position} outside [0, {total}] on direction '{direction}'")
        offset = 0.0
        chain = self.chain(direction)
        for link in chain:
            if position <= offset + link.length:
                return link, position - offset
            offset += link.length
        return chain[-1], chain[-1].length

    def signal_positions(self, direction: str) -> list[tuple[Intersection, float]]:
        """Downstream-ordered (intersection, stop-bar chain position) pairs."""
        out = []
        offset = 0.0
        for link in self.chain(direction):
            if link.downstream_intersection is not None:
                inter = self.intersections[link.downstream_intersection]
                bar = inter.stopbar_positions.get(direction, link.length)
                out.append((inter, offset + bar))
            offset += link.length
        return out

    def min_lane_count(self) -> int:
        return min(len(link.lanes) for link in self.links)

    def reserved_count(self) -> int:
        counts = {sum(1 for lane in link.lanes if lane.reserved) for link in self.links}
        if len(counts) != 1:
            raise InvalidGeometry("reserved-lane count differs across links")
        return counts.pop()

    def validate(self):
        if len(self.directions) != 2:
            raise InvalidGeometry(f"corridor must have exactly 2 directions, got {self.directions}")
        for link in self.links:
            link.validate()
        for direction in self.directions:
            chain = self.chain(direction)
            for link in chain[:-1]:
                if link.downstream_intersection is None:
                    raise InvalidGeometry(f"interior link in direction '{direction}' has no downstream intersection")
                if link.downstream_intersection not in self.intersections:
                    raise InvalidGeometry(f"unknown downstream intersection '{link.downstream_intersection}'")
            if chain[-1].downstream_intersection is not None:
                raise InvalidGeometry(f"last link in direction '{direction}' must end at the corridor exit")
        for inter in self.intersections.values():
            if inter.jughandle is not None:
                inter.jughandle.validate()
            if inter.left_turn_fraction < 0 or inter.left_turn_fraction > 0.5:
                raise InvalidGeometry(f"left_turn_fraction at '{inter.id}' must be in [0, 0.5]")
            if inter.left_turn_fraction > 0 and inter.jughandle is None:
                raise LeftTurnWithoutJughandle(
                    f"intersection '{inter.id}' declares left-turn demand but has no jughandle ramp"
                )
            if inter.through_only and inter.left_turn_fraction > 0:
                raise LeftTurnWithoutJughandle(
                    f"through-only intersection '{inter.id}' cannot carry left-turn demand"
                )
        # Stop bars must lie on the approaching link; jughandle diverge must stay upstream of the entry.
        for direction in self.directions:
            offset = 0.0
            for link in self.chain(direction):
                if link.downstream_intersection is not None:
                    inter = self.intersections[link.downstream_intersection]
                    bar = inter.stopbar_positions.get(direction, link.length)
                    if bar < 0 or bar > link.length:
                        raise InvalidGeometry(
                            f"stop bar for '{inter.id}' ({bar} m) outside link of length {link.length} m"
                        )
                    if inter.jughandle is not None and inter.jughandle.diverge_position > offset + bar:
                        raise InvalidGeometry(
                            f"jughandle diverge at '{inter.id}' lies upstream of the corridor entry"
                        )
                offset += link.length
        # Reserved lanes must be a contiguous inner prefix.
        for link in self.links:
            flags = [lane.reserved for lane in link.lanes]
            count = sum(flags)
            if flags != [True] * count + [False] * (len(flags) - count):
                raise InvalidGeometry("reserved lanes must be a contiguous prefix of inner lanes")
        self.reserved_count()


def _parse_intervals(raw: str, line: int) -> tuple[PhaseInterval, ...]:
    intervals = []
    for token in raw.split():
        if ":" not in token:
            raise SpecParseError(f"interval token '{token}' must be state:seconds", line)
        state, dur = token.split(":", 1)
        state = state.lower()
        if state not in _STATE_CODES:
            raise SpecParseError(f"unknown phase state '{state}'", line)
        try:
            duration = float(dur)
        except ValueError:
            raise SpecParseError(f"bad interval duration '{dur}'", line) from None
        intervals.append(PhaseInterval(_STATE_CODES[state], duration))
    if not intervals:
        raise SpecParseError("empty interval list", line)
    return tuple(intervals)


def _link_from_section(sec: Section) -> Link:
    length = sec.get_float("length")
    lanes = sec.get_int("lanes")
    reserved = sec.get_int("reserved", 0)
    if reserved < 0 or reserved > lanes:
        raise SpecParseError(f"reserved count {reserved} invalid for {lanes} lanes", sec.line)
    downstream = sec.get("downstream")
    if downstream in (None, "", "exit"):
        downstream = None
    return Link(
        length=length,
        lanes=[Lane(index=i, reserved=i < reserved) for i in range(lanes)],
        speed_limit=sec.get_float("speed_limit"),
        direction=sec.require("direction"),
        downstream_intersection=downstream,
    )


def _intersection_from_section(sec: Section, directions: list[str]) -> Intersection:
    plan = SignalPlan(
        cycle=sec.get_float("cycle"),
        offset=sec.get_float("offset", 0.0),
        intervals=_parse_intervals(sec.require("intervals"), sec.field_lines.get("intervals", sec.line)),
    )
    jughandle = None
    if "jughandle_diverge" in sec.fields:
        jughandle = JughandleRamp(
            diverge_position=sec.get_float("jughandle_diverge"),
            ramp_length=sec.get_float("jughandle_length", 150.0),
            target=sec.get("jughandle_target", f"{sec.name}_cross"),
        )
    stopbars = {}
    for direction in directions:
        key = f"stopbar_{direction}"
        if key in sec.fields:
            stopbars[direction] = sec.get_float(key)
    return Intersection(
        id=sec.name,
        signal_plan=plan,
        jughandle=jughandle,
        stopbar_positions=stopbars,
        through_only=sec.get_bool("through_only", False),
        left_turn_fraction=sec.get_float("left_turn_fraction", 0.0),
        coordinated=sec.get_bool("coordinated", True),
    )


def build_corridor(text: str) -> Corridor:
    """Parse and validate a corridor file (see the bundled .corridor files)."""
    sections = parse_sections(text)
    name = "corridor"
    link_secs = []
    inter_secs = []
    for sec in sections:
        if sec.kind == "corridor":
            name = sec.get("name", sec.name or "corridor")
        elif sec.kind == "link":
            link_secs.append(sec)
        elif sec.kind == "intersection":
            if not sec.name:
                raise SpecParseError("intersection section needs a name", sec.line)
            inter_secs.append(sec)
        else:
            raise SpecParseError(f"unknown section kind '{sec.kind}'", sec.line)
    if not link_secs:
        raise SpecParseError("corridor file contains no links")
    links = [_link_from_section(sec) for sec in link_secs]
    directions = []
    for link in links:
        if link.direction not in directions:
            directions.append(link.direction)
    intersections = {}
    for sec in inter_secs:
        if sec.name in intersections:
            raise SpecParseError(f"duplicate intersection '{sec.name}'", sec.line)
        intersections[sec.name] = _intersection_from_section(sec, directions)
    corridor = Corridor(name=name, links=links, intersections=intersections)
    corridor.validate()
    return corridor


def serialize_corridor(corridor: Corridor) -> str:
    """Inverse of build_corridor: build_corridor(serialize_corridor(c)) == c."""
    lines = ["[corridor]", f"name = {corridor.name}", ""]
    for link in corridor.links:
        lines.append("[link]")
        lines.append(f"direction = {link.direction}")
        lines.append(f"length = {link.length!r}")
        lines.append(f"lanes = {len(link.lanes)}")
        reserved = sum(1 for lane in link.lanes if lane.reserved)
        if reserved:
            lines.append(f"reserved = {reserved}")
        lines.append(f"speed_limit = {link.speed_limit!r}")
        lines.append(f"downstream = {link.downstream_intersection or 'exit'}")
        lines.append("")
    for inter in corridor.intersections.values():
        lines.append(f"[intersection {inter.id}]")
        plan = inter.signal_plan
        lines.append(f"cycle = {plan.cycle!r}")
        lines.append(f"offset = {plan.offset!r}")
        ivs = " ".join(f"{iv.state}:{iv.duration!r}" for iv in plan.intervals)
        lines.append(f"intervals = {ivs}")
        if inter.jughandle is not None:
            lines.append(f"jughandle_diverge = {inter.jughandle.diverge_position!r}")
            lines.append(f"jughandle_length = {inter.jughandle.ramp_length!r}")
            lines.append(f"jughandle_target = {inter.jughandle.target}")
        for direction, bar in inter.stopbar_positions.items():
            lines.append(f"stopbar_{direction} = {bar!r}")
        if inter.through_only:
            lines.append("through_only = true")
        if inter.left_turn_fraction:
            lines.append(f"left_turn_fraction = {inter.left_turn_fraction!r}")
        if not inter.coordinated:
            lines.append("coordinated = false")
        lines.append("")
    return "\n".join(lines)


def set_reserved_lanes(corridor: Corridor, count: int) -> Corridor:
    """Return a copy with the inner `count` lanes reserved on every mainline
    link (count=0 clears all reservations). At least one general lane must
    remain on every link."""
    if count not in (0, 1, 2):
        raise TooManyReservedLanes(f"reserved-lane count must be 0, 1 or 2, got {count}")
    if count > corridor.min_lane_count() - 1:
        raise TooManyReservedLanes(
            f"cannot reserve {count} lanes: narrowest link has {corridor.min_lane_count()} lanes"
        )
    out = copy.deepcopy(corridor)
    for link in out.links:
        for lane in link.lanes:
            lane.reserved = lane.index < count
    return out


def next_signal(corridor: Corridor, direction: str, position: float) -> tuple[Intersection, float] | None:
    """Nearest downstream signalized intersection and stop-bar distance, or
    None when only the corridor exit remains."""
    total = corridor.total_length(direction)
    if position < 0 or position > total:
        raise OutOfExtent(f"position {position} outside [0, {total}] on direction '{direction}'")
    for inter, bar_pos in corridor.signal_positions(direction):
        if bar_pos >= position:
            return inter, bar_pos - position
    return None
