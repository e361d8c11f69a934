"""Motion-compensating inverse warping of events and alignment losses.

Warping displaces each event along the flow sampled at its source pixel,
back to a reference time: an event at (x, y, t) moves to
(x - u*(t - t_ref), y - v*(t - t_ref)). With the correct motion, warped
events stack into a sharp profile; the losses below score that alignment.

All losses are pure folds over immutable inputs with a fixed summation
order, so repeated evaluations are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryMismatchError, NoValidDepthError
from .events import EventArray, EventSlice, SliceMap, project_slice
from .geometry import DepthMap, FlowField, MixturePoseField

__all__ = [
    "WarpDiagnostics",
    "LossWeights",
    "warp_slice",
    "warp_and_project",
    "coarse_loss",
    "fine_loss",
    "mask_loss",
    "depth_loss",
]

M0_CLAMP = 1e-8  # keeps the background cross-entropy finite


@dataclass(frozen=True)
class WarpDiagnostics:
    """Bookkeeping for one warp: input size, dropped events, mean shift."""

    events_in: int
    events_out_of_bounds: int
    mean_displacement: float

    def __post_init__(self):
        if self.events_out_of_bounds > self.events_in:
            raise ValueError("more dropped events than inputs")

    def merge(self, other: "WarpDiagnostics") -> "WarpDiagnostics":
        n = self.events_in + other.events_in
        mean = 0.0
        if n:
            mean = (self.mean_displacement * self.events_in
                    + other.mean_displacement * other.events_in) / n
        return WarpDiagnostics(n, self.events_out_of_bounds
                               + other.events_out_of_bounds, mean)


@dataclass(frozen=True)
class LossWeights:
    """Relative weights of the loss terms and the sharpness exponent p."""

    w_depth: float = 1.0
    w_mask: float = 1.0
    w_smooth_mask: float = 1.0
    w_smooth_depth: float = 1.0
    p: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must be in (0, 1)")
        if min(self.w_depth, self.w_mask, self.w_smooth_mask,
               self.w_smooth_depth) < 0:
            raise ValueError("loss weights must be non-negative")


def _sample_flow(slice_: EventSlice, flow: FlowField):
    if (flow.height, flow.width) != (slice_.height, slice_.width):
        raise GeometryMismatchError("flow geometry does not match slice")
    ev = slice_.events
    return flow.u[ev.y, ev.x], flow.v[ev.y, ev.x], flow.valid[ev.y, ev.x]


def warp_slice(slice_: EventSlice, flow: FlowField,
               t_ref: float) -> tuple[EventSlice, WarpDiagnostics]:
    """Inversely warp a slice's events to the reference time.

    Events are displaced by -(flow at their source pixel) * (t - t_ref) and
    accumulated at the nearest pixel; timestamps are preserved. Events that
    land outside the sensor, or whose source pixel has no valid flow, are
    dropped and counted in the diagnostics.
    """
    ev = slice_.events
    if len(ev) == 0:
        return slice_, WarpDiagnostics(0, 0, 0.0)
    u, v, ok = _sample_flow(slice_, flow)
    dt = ev.t - t_ref
    dx = u * dt
    dy = v * dt
    disp = float(np.hypot(dx[ok], dy[ok]).mean()) if ok.any() else 0.0
    wx = np.rint(ev.x - dx).astype(np.int64)
    wy = np.rint(ev.y - dy).astype(np.int64)
    keep = ok & (wx >= 0) & (wx < slice_.width) & (wy >= 0) & (wy < slice_.height)
    warped = EventArray(ev.t[keep], wx[keep], wy[keep], ev.polarity[keep],
                        validate=False)
    diag = WarpDiagnostics(len(ev), int(len(ev) - keep.sum()), disp)
    out = EventSlice(warped, slice_.t_start, slice_.t_end,
                     slice_.width, slice_.height)
    return out, diag


def warp_and_project(slice_: EventSlice, flow: FlowField, t_ref: float, *,
                     splat: str = "nearest") -> tuple[SliceMap, WarpDiagnostics]:
    """Warp a slice and accumulate it into a 3-channel map.

    ``splat="nearest"`` (default) keeps count channels integral and equals
    project_slice(warp_slice(...)). ``splat="bilinear"`` spreads each event
    over its four neighboring pixels with bilinear weights, producing
    fractional count channels and a weighted-mean timestamp aggregate.
    """
    if splat == "nearest":
        warped, diag = warp_slice(slice_, flow, t_ref)
        return project_slice(warped), diag
    if splat != "bilinear":
        raise ValueError("splat must be 'nearest' or 'bilinear'")
    h, w = slice_.height, slice_.width
    ev = slice_.events
    n_pix = h * w
    pos = np.zeros(n_pix)
    neg = np.zeros(n_pix)
    t_sum = np.zeros(n_pix)
    wt_sum = np.zeros(n_pix)
    if len(ev) == 0:
        zero = np.zeros((h, w))
        return SliceMap(zero, zero.copy(), zero.copy()), WarpDiagnostics(0, 0, 0.0)
    u, v, ok = _sample_flow(slice_, flow)
    dt = ev.t - t_ref
    dx = u * dt
    dy = v * dt
    disp = float(np.hypot(dx[ok], dy[ok]).mean()) if ok.any() else 0.0
    fx = (ev.x - dx)[ok]
    fy = (ev.y - dy)[ok]
    pol = ev.polarity[ok]
    t_norm = ((ev.t - slice_.t_start) / slice_.duration)[ok]
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    ax = fx - x0
    ay = fy - y0
    landed = np.zeros(len(fx))
    for ox, oy, wgt in ((0, 0, (1 - ax) * (1 - ay)), (1, 0, ax * (1 - ay)),
                        (0, 1, (1 - ax) * ay), (1, 1, ax * ay)):
        cx = x0 + ox
        cy = y0 + oy
        inb = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        flat = (cy * w + cx)[inb]
        wgt_in = wgt[inb]
        np.add.at(pos, flat, np.where(pol[inb] > 0, wgt_in, 0.0))
        np.add.at(neg, flat, np.where(pol[inb] < 0, wgt_in, 0.0))
        np.add.at(t_sum, flat, wgt_in * t_norm[inb])
        np.add.at(wt_sum, flat, wgt_in)
        landed[inb] += wgt_in
    dropped = int((~ok).sum()) + int((landed <= 0).sum())
    time_agg = np.divide(t_sum, wt_sum, out=np.zeros(n_pix), where=wt_sum > 0)
    return (SliceMap(pos.reshape(h, w), neg.reshape(h, w), time_agg.reshape(h, w)),
            WarpDiagnostics(len(ev), dropped, disp))


def _check_same_geometry(maps):
    shape = maps[0].pos_count.shape
    for m in maps[1:]:
        if m.pos_count.shape != shape:
            raise GeometryMismatchError("slice maps differ in geometry")


def coarse_loss(warped_neighbors, middle: SliceMap) -> float:
    """Absolute difference in the three channels, summed over the neighbors.

    Takes the 2K warped neighbor maps (K = 1 or 2) and the middle map;
    returns sum over neighbors, channels and pixels of |warped - middle|.
    """
    neighbors = list(warped_neighbors)
    if len(neighbors) not in (2, 4):
        raise ValueError("expected 2 or 4 warped neighbor maps (K = 1 or 2)")
    _check_same_geometry(neighbors + [middle])
    mid = middle.channels()
    total = 0.0
    for nb in neighbors:
        for c_n, c_m in zip(nb.channels(), mid):
            total += float(np.abs(c_n - c_m).sum())
    return total


def fine_loss(warped_fine_slices, p: float) -> float:
    """Sharpness score of a stack of warped fine slices: sum of S**p.

    S is the per-pixel sum of absolute channel values over the stack. With
    0 < p < 1 the map x -> x**p is strictly concave, so concentrating event
    mass on few pixels (a sharp image) scores lower than spreading it.
    """
    maps = list(warped_fine_slices)
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    if not maps:
        raise ValueError("need at least one slice map")
    _check_same_geometry(maps)
    S = np.zeros(maps[0].pos_count.shape)
    for m in maps:
        for c in m.channels():
            S += np.abs(c)
    return float(np.sum(S ** p))


def mask_loss(weights, gt_background: np.ndarray,
              w_smooth_mask: float = 1.0) -> float:
    """Cross entropy of the ego weight on background, plus weight smoothness.

    ``weights`` is a (C+1, H, W) mixture-weight array (or a MixturePoseField);
    ``gt_background`` a boolean background mask. The ego weight is clamped to
    [1e-8, 1] inside the log. Smoothness is the L1 norm of the first-order
    spatial gradients of every weight channel.
    """
    if isinstance(weights, MixturePoseField):
        weights = weights.weights
    weights = np.asarray(weights, dtype=np.float64)
    bg = np.asarray(gt_background, dtype=bool)
    if weights.ndim != 3 or weights.shape[1:] != bg.shape:
        raise GeometryMismatchError("weights and background mask geometry mismatch")
    m0 = np.clip(weights[0], M0_CLAMP, 1.0)
    bce = -float(np.log(m0[bg]).sum())
    grad = 0.0
    for m in weights:
        grad += float(np.abs(np.diff(m, axis=1)).sum())
        grad += float(np.abs(np.diff(m, axis=0)).sum())
    return bce + w_smooth_mask * grad


def depth_loss(predict: DepthMap, truth: DepthMap,
               w_smooth_depth: float = 1.0) -> float:
    """Ratio-plus-residual deviation between scale-aligned depth maps.

    Mean over shared valid pixels of max(truth/predict, predict/truth)
    + |predict - truth|/truth, plus the weighted L1 norm of the prediction's
    second-order spatial differences. The ratio term floors at 1, so equal
    maps score exactly 1. Inputs are assumed already scale-aligned.
    """
    if predict.z.shape != truth.z.shape:
        raise GeometryMismatchError("depth maps differ in geometry")
    valid = predict.valid & truth.valid
    if not valid.any():
        raise NoValidDepthError("no shared valid pixels")
    p = predict.z[valid]
    t = truth.z[valid]
    dev = np.maximum(t / p, p / t) + np.abs(p - t) / t
    smooth = 0.0
    z = predict.z
    ok = predict.valid
    dxx = z[:, 2:] - 2.0 * z[:, 1:-1] + z[:, :-2]
    m = ok[:, 2:] & ok[:, 1:-1] & ok[:, :-2]
    smooth += float(np.abs(dxx[m]).sum())
    dyy = z[2:, :] - 2.0 * z[1:-1, :] + z[:-2, :]
    m = ok[2:, :] & ok[1:-1, :] & ok[:-2, :]
    smooth += float(np.abs(dyy[m]).sum())
    return float(dev.mean()) + w_smooth_depth * smooth
