"""Evaluation metrics: endpoint error, rotation error, IoU and depth errors.

Velocity endpoint error optionally absorbs a global least-squares scale from
the ground truth (monocular translations are only known up to scale).
Rotation error is the geodesic angle of the relative rotation, reported as
the axis-angle magnitude theta; the Frobenius norm of the log-matrix equals
sqrt(2) * theta for readers using that convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import GeometryMismatchError, NoValidDepthError
from .geometry import DepthMap

__all__ = [
    "DepthMetrics",
    "MotionMetrics",
    "aee",
    "rre",
    "iou",
    "depth_metrics",
]


@dataclass(frozen=True)
class DepthMetrics:
    """Depth error metrics (abs_rel, rmse_log, silog) and delta accuracies."""

    abs_rel: float
    rmse_log: float
    silog: float
    delta1: float
    delta2: float
    delta3: float

    def as_dict(self) -> dict:
        return {"abs_rel": self.abs_rel, "rmse_log": self.rmse_log,
                "silog": self.silog, "delta1": self.delta1,
                "delta2": self.delta2, "delta3": self.delta3}


@dataclass(frozen=True)
class MotionMetrics:
    """Average endpoint error (m/s) and relative rotation error (rad/s)."""

    aee: float
    rre: float

    def as_dict(self) -> dict:
        return {"aee": self.aee, "rre": self.rre}


def aee(pred, gt, scale_from_gt: bool = False) -> float:
    """Mean Euclidean error between velocity vectors.

    With ``scale_from_gt`` the predictions are first rescaled by the global
    least-squares factor s = sum(<pred, gt>) / sum(<pred, pred>), absorbing
    the monocular scale ambiguity.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if len(pred) != len(gt):
        raise ValueError("pred and gt must have equal length")
    if len(pred) == 0:
        raise ValueError("empty input")
    s = 1.0
    if scale_from_gt:
        denom = float(np.sum(pred * pred))
        if denom == 0.0:
            raise ValueError("cannot scale zero-norm predictions")
        s = float(np.sum(pred * gt)) / denom
    return float(np.linalg.norm(s * pred - gt, axis=1).mean())


def _as_rotation(r) -> Rotation:
    arr = np.asarray(r, dtype=np.float64)
    if arr.shape == (4,):
        return Rotation.from_quat(arr)
    if arr.shape == (3, 3):
        if np.max(np.abs(arr @ arr.T - np.eye(3))) > 1e-6 or \
                np.linalg.det(arr) < 0:
            raise ValueError("matrix is not a rotation (orthonormal, det +1)")
        return Rotation.from_matrix(arr)
    raise ValueError("rotation must be a quaternion (4,) or matrix (3, 3)")


def rre(r_pred, r_gt) -> float:
    """Geodesic angle between two rotations (axis-angle magnitude, rad)."""
    rel = _as_rotation(r_pred).inv() * _as_rotation(r_gt)
    return float(rel.magnitude())


def iou(pred_weights: np.ndarray, gt_mask: np.ndarray,
        threshold: float = 0.5) -> float:
    """Intersection over union of {pred >= threshold} against a binary mask.

    Defined as 1 when both sets are empty.
    """
    pred = np.asarray(pred_weights, dtype=np.float64)
    gt = np.asarray(gt_mask, dtype=bool)
    if pred.shape != gt.shape:
        raise GeometryMismatchError("prediction and mask geometry mismatch")
    sel = pred >= threshold
    union = int(np.sum(sel | gt))
    if union == 0:
        return 1.0
    return float(np.sum(sel & gt)) / union


def align_depth_scale(pred: DepthMap, gt: DepthMap,
                      alignment: str = "median") -> float:
    """Global scale factor applied to predictions before depth metrics."""
    valid = pred.valid & gt.valid
    if not valid.any():
        raise NoValidDepthError("no shared valid pixels")
    p = pred.z[valid]
    g = gt.z[valid]
    if alignment == "median":
        return float(np.median(g) / np.median(p))
    if alignment == "mean":
        return float(g.mean() / p.mean())
    if alignment == "none":
        return 1.0
    raise ValueError("alignment must be 'median', 'mean' or 'none'")


def depth_metrics(pred: DepthMap, gt: DepthMap,
                  alignment: str = "median") -> DepthMetrics:
    """Standard depth error/accuracy metrics over shared valid pixels.

    abs_rel = mean |p-g|/g; rmse_log = sqrt(mean (log p - log g)^2);
    silog = var(log p - log g); deltaK = fraction with
    max(p/g, g/p) < 1.25^K (strict inequality).
    """
    if pred.z.shape != gt.z.shape:
        raise GeometryMismatchError("depth maps differ in geometry")
    s = align_depth_scale(pred, gt, alignment)
    valid = pred.valid & gt.valid
    p = s * pred.z[valid]
    g = gt.z[valid]
    d = np.log(p) - np.log(g)
    ratio = np.maximum(p / g, g / p)
    deltas = [float(np.mean(ratio < 1.25 ** k)) for k in (1, 2, 3)]
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(p - g) / g)),
        rmse_log=float(np.sqrt(np.mean(d * d))),
        silog=float(np.mean(d * d) - np.mean(d) ** 2),
        delta1=deltas[0], delta2=deltas[1], delta3=deltas[2])


def mean_depth_metrics(per_frame) -> DepthMetrics:
    """Average per-frame metrics, each frame weighted equally."""
    frames = list(per_frame)
    if not frames:
        raise ValueError("no frames")
    arr = np.array([[m.abs_rel, m.rmse_log, m.silog,
                     m.delta1, m.delta2, m.delta3] for m in frames])
    mean = arr.mean(axis=0)
    return DepthMetrics(*[float(v) for v in mean])
