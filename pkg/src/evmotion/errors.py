"""Exception types shared across the package."""


class EvMotionError(Exception):
    """Base class for all errors raised by this package."""


class EventParseError(EvMotionError):
    """A line of an event text file could not be parsed."""

    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class CoordinateOutOfBoundsError(EvMotionError):
    """An event coordinate falls outside the sensor geometry."""


class NonMonotoneTimestampsError(EvMotionError):
    """Event timestamps regress and strict ordering was requested."""


class GeometryMismatchError(EvMotionError):
    """Two per-pixel maps (or a map and intrinsics) disagree on width/height."""


class InsufficientEventsError(EvMotionError):
    """Too few events to run an estimation."""


class NoValidDepthError(EvMotionError):
    """The depth map has no (or too few) valid pixels."""


class EmptyMaskError(EvMotionError):
    """An object mask selects no pixels or too few events."""


class TrajectorySpanError(EvMotionError):
    """A query time falls outside the span of a trajectory."""
