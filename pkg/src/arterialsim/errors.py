"""Exception types shared across the package."""


class ArterialError(Exception):
    """Base class for all arterialsim errors."""


class SpecParseError(ArterialError):
    """A corridor/scenario file could not be parsed. Carries the 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidGeometry(ArterialError):
    """Corridor geometry violates a structural invariant."""


class LeftTurnWithoutJughandle(ArterialError):
    """Left-turn demand declared at an intersection without a jughandle ramp."""


class TooManyReservedLanes(ArterialError):
    """Reserving this many lanes would leave no general-purpose lane."""


class OutOfExtent(ArterialError):
    """Position outside the corridor's extent."""


class NonPositiveGap(ArterialError):
    """Car-following gap must be strictly positive when a leader exists."""


class MpOutOfRange(ArterialError):
    """Market penetration must lie in [0, 1]."""


class UnknownIntersection(ArterialError):
    """Route references an intersection the corridor does not contain."""


class ConfigInvalid(ArterialError):
    """Scenario configuration failed validation."""


class IncompleteMatrix(ArterialError):
    """Result matrix lacks rows required for the requested comparison."""


class IoFailure(ArterialError):
    """Report files could not be written."""
