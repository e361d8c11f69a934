"""Event streams, fixed-duration slicing and 3-channel slice projections.

An event is a timestamped, signed report at one pixel. Streams are kept in
columnar numpy storage (one array per field) so slicing and projection stay
vectorized; all containers are frozen after construction and safe to share
across threads.

Per-pixel maps throughout the package are numpy arrays indexed ``[y, x]``
(row-major, height first).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    CoordinateOutOfBoundsError,
    EventParseError,
    GeometryMismatchError,
    NonMonotoneTimestampsError,
)

__all__ = [
    "Event",
    "EventArray",
    "EventSlice",
    "SliceMap",
    "load_events",
    "save_events",
    "slice_stream",
    "subdivide",
    "project_slice",
]


@dataclass(frozen=True)
class Event:
    """A single sensor event: time in seconds, pixel position, polarity ±1."""

    t: float
    x: int
    y: int
    polarity: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class EventArray:
    """Columnar, immutable, time-sorted sequence of events.

    Indexing with an int yields an :class:`Event`; slicing or boolean/fancy
    indexing yields a new :class:`EventArray`.
    """

    __slots__ = ("t", "x", "y", "polarity")

    def __init__(self, t, x, y, polarity, *, validate: bool = True):
        self.t = _frozen(np.asarray(t, dtype=np.float64))
        self.x = _frozen(np.asarray(x, dtype=np.int32))
        self.y = _frozen(np.asarray(y, dtype=np.int32))
        self.polarity = _frozen(np.asarray(polarity, dtype=np.int8))
        if validate:
            n = len(self.t)
            if not (len(self.x) == len(self.y) == len(self.polarity) == n):
                raise ValueError("event field arrays differ in length")
            if n:
                if not np.all(np.isfinite(self.t)) or self.t.min() < 0.0:
                    raise ValueError("timestamps must be finite and >= 0")
                if np.any(np.diff(self.t) < 0):
                    raise NonMonotoneTimestampsError("events not sorted by t")
                if not np.all(np.abs(self.polarity) == 1):
                    raise ValueError("polarity must be -1 or +1")

    @classmethod
    def empty(cls) -> "EventArray":
        return cls([], [], [], [], validate=False)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return Event(float(self.t[i]), int(self.x[i]), int(self.y[i]),
                         int(self.polarity[i]))
        return EventArray(self.t[i], self.x[i], self.y[i], self.polarity[i],
                          validate=False)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventArray):
            return NotImplemented
        return (np.array_equal(self.t, other.t)
                and np.array_equal(self.x, other.x)
                and np.array_equal(self.y, other.y)
                and np.array_equal(self.polarity, other.polarity))

    def __repr__(self) -> str:
        return f"EventArray(n={len(self)})"


@dataclass(frozen=True)
class EventSlice:
    """Events of one half-open time window [t_start, t_end) on one sensor."""

    events: EventArray
    t_start: float
    t_end: float
    width: int
    height: int

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("slice duration must be positive")
        ev = self.events
        if len(ev):
            if ev.t[0] < self.t_start or ev.t[-1] >= self.t_end:
                raise ValueError("event timestamps outside [t_start, t_end)")
            if (ev.x.min() < 0 or ev.x.max() >= self.width
                    or ev.y.min() < 0 or ev.y.max() >= self.height):
                raise CoordinateOutOfBoundsError(
                    "event coordinates outside sensor geometry")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class SliceMap:
    """3-channel projection of a slice: count images and a timestamp aggregate.

    ``pos_count``/``neg_count`` are per-pixel event counts by polarity;
    ``time_agg`` is the per-pixel mean of normalized timestamps
    (t - t_start)/(t_end - t_start), zero where the pixel saw no events.
    """

    pos_count: np.ndarray
    neg_count: np.ndarray
    time_agg: np.ndarray

    def __post_init__(self):
        if not (self.pos_count.shape == self.neg_count.shape
                == self.time_agg.shape):
            raise GeometryMismatchError("slice map channels differ in shape")

    @property
    def height(self) -> int:
        return self.pos_count.shape[0]

    @property
    def width(self) -> int:
        return self.pos_count.shape[1]

    def channels(self):
        """The three channels as float64, in a fixed (pos, neg, time) order."""
        return (self.pos_count.astype(np.float64),
                self.neg_count.astype(np.float64),
                self.time_agg)


def load_events(path, sensor_geometry=(346, 260), *, on_unsorted="sort"):
    """Read an event text file: one ``t x y p`` line per event, p in {0, 1}.

    Lines starting with ``#`` and blank lines are skipped. On-disk polarity
    {0, 1} maps to {-1, +1} in memory. ``on_unsorted`` selects the policy for
    non-monotone timestamps: "sort" (stable sort plus a warning) or "raise".

    Returns an :class:`EventArray` sorted by timestamp.
    """
    width, height = sensor_geometry
    if on_unsorted not in ("sort", "raise"):
        raise ValueError("on_unsorted must be 'sort' or 'raise'")
    ts, xs, ys, ps = [], [], [], []
    with open(path, "r") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise EventParseError(path, line_no,
                                      f"expected 4 fields, got {len(parts)}")
            try:
                t = float(parts[0])
                x = int(parts[1])
                y = int(parts[2])
                p = int(parts[3])
            except ValueError as exc:
                raise EventParseError(path, line_no, str(exc)) from None
            if not math.isfinite(t) or t < 0.0:
                raise EventParseError(path, line_no,
                                      f"timestamp must be finite and >= 0, got {parts[0]}")
            if not (0 <= x < width and 0 <= y < height):
                raise CoordinateOutOfBoundsError(
                    f"{path}:{line_no}: coordinate ({x}, {y}) outside "
                    f"{width}x{height} sensor")
            if p not in (0, 1):
                raise EventParseError(path, line_no,
                                      f"polarity must be 0 or 1, got {p}")
            ts.append(t)
            xs.append(x)
            ys.append(y)
            ps.append(-1 if p == 0 else 1)
    t_arr = np.asarray(ts, dtype=np.float64)
    order_violations = int(np.sum(np.diff(t_arr) < 0)) if len(t_arr) else 0
    if order_violations:
        if on_unsorted == "raise":
            raise NonMonotoneTimestampsError(
                f"{path}: {order_violations} timestamp regressions")
        warnings.warn(
            f"{path}: {order_violations} timestamp regressions, stable-sorted",
            stacklevel=2)
        order = np.argsort(t_arr, kind="stable")
        return EventArray(t_arr[order], np.asarray(xs)[order],
                          np.asarray(ys)[order], np.asarray(ps)[order])
    return EventArray(t_arr, xs, ys, ps)


def save_events(events: EventArray, path) -> None:
    """Write events as ``t x y p`` text, p in {0, 1}; inverse of load_events.

    Timestamps are written with shortest round-trip float formatting so that
    load_events(save_events(ev)) reproduces ev exactly.
    """
    with open(path, "w") as fh:
        for i in range(len(events)):
            t = np.format_float_positional(events.t[i], unique=True, trim="0")
            p = 0 if events.polarity[i] < 0 else 1
            fh.write(f"{t} {events.x[i]} {events.y[i]} {p}\n")


def _window_index(t: np.ndarray, t0: float, dt: float) -> np.ndarray:
    # Half-open windows [t0 + k*dt, t0 + (k+1)*dt); an event exactly on an
    # edge goes to the later window by construction of floor().
    return np.floor((t - t0) / dt).astype(np.int64)


def slice_stream(events: EventArray, delta_t: float, width: int, height: int,
                 *, t_origin: float | None = None) -> list[EventSlice]:
    """Group a sorted stream into consecutive fixed-duration slices.

    Windows are [t0 + k*delta_t, t0 + (k+1)*delta_t) with t0 the first event
    timestamp (or ``t_origin`` when given); every event lands in exactly one
    slice, and interior windows without events still produce (empty) slices.
    """
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    if len(events) == 0:
        return []
    t0 = float(events.t[0]) if t_origin is None else float(t_origin)
    if t_origin is not None and events.t[0] < t0:
        raise ValueError("t_origin must not exceed the first event timestamp")
    idx = _window_index(events.t, t0, delta_t)
    n_slices = int(idx[-1]) + 1
    slices = []
    # events sorted by t => idx is non-decreasing, so windows are contiguous runs
    bounds = np.searchsorted(idx, np.arange(n_slices + 1))
    for k in range(n_slices):
        sel = events[bounds[k]:bounds[k + 1]]
        slices.append(EventSlice(sel, t0 + k * delta_t, t0 + (k + 1) * delta_t,
                                 width, height))
    return slices


def subdivide(slice_: EventSlice, fine_dt: float) -> list[EventSlice]:
    """Split one slice into fine sub-slices tiling [t_start, t_end).

    Same boundary convention as slice_stream; the last sub-slice is clipped
    to the parent window when the duration is not an exact multiple. The
    union of sub-slice events equals the parent's events.
    """
    if fine_dt <= 0 or fine_dt > slice_.duration + 1e-12:
        raise ValueError("fine_dt must be in (0, slice duration]")
    n_sub = max(1, math.ceil(round(slice_.duration / fine_dt, 9)))
    idx = _window_index(slice_.events.t, slice_.t_start, fine_dt)
    # guard: float division may push a last-window event to index n_sub
    idx = np.minimum(idx, n_sub - 1)
    bounds = np.searchsorted(idx, np.arange(n_sub + 1))
    subs = []
    for k in range(n_sub):
        t0 = slice_.t_start + k * fine_dt
        t1 = min(slice_.t_start + (k + 1) * fine_dt, slice_.t_end)
        subs.append(EventSlice(slice_.events[bounds[k]:bounds[k + 1]],
                               t0, t1, slice_.width, slice_.height))
    return subs


def project_slice(slice_: EventSlice) -> SliceMap:
    """Project a slice into its 3-channel map (counts + mean normalized time)."""
    h, w = slice_.height, slice_.width
    ev = slice_.events
    n_pix = h * w
    if len(ev) == 0:
        zero = np.zeros((h, w))
        return SliceMap(zero.astype(np.int64), zero.astype(np.int64), zero)
    flat = ev.y.astype(np.int64) * w + ev.x.astype(np.int64)
    pos = np.bincount(flat[ev.polarity > 0], minlength=n_pix)
    neg = np.bincount(flat[ev.polarity < 0], minlength=n_pix)
    t_norm = (ev.t - slice_.t_start) / slice_.duration
    t_sum = np.bincount(flat, weights=t_norm, minlength=n_pix)
    count = pos + neg
    time_agg = np.divide(t_sum, count, out=np.zeros(n_pix), where=count > 0)
    return SliceMap(pos.reshape(h, w), neg.reshape(h, w),
                    time_agg.reshape(h, w))
