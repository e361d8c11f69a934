"""Camera model, rigid-motion flow fields and per-pixel pose mixtures.

Flow is evaluated in normalized (calibrated) image coordinates, where the
image velocity of a point at depth Z under camera motion (v, omega) is linear
in the motion parameters:

    u = (-vx + x*vz)/Z + x*y*wx - (1 + x^2)*wy + y*wz
    v = (-vy + y*vz)/Z + (1 + y^2)*wx - x*y*wy - x*wz

Conversion to pixels/second multiplies the components by (fx, fy).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryMismatchError

__all__ = [
    "CameraIntrinsics",
    "Pose6",
    "DepthMap",
    "MixturePoseField",
    "FlowField",
    "load_intrinsics",
    "normalize_coords",
    "denormalize_coords",
    "flow_at",
    "flow_operator",
    "pixel_pose",
    "flow_field",
    "normalize_depth",
]


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics (rectified, no distortion model)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")


def load_intrinsics(path) -> CameraIntrinsics:
    """Read a plain-text intrinsics file: one `fx fy cx cy width height` line.

    Lines starting with ``#`` are ignored.
    """
    with open(path, "r") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"{path}: expected 6 fields, got {len(parts)}")
            fx, fy, cx, cy = (float(p) for p in parts[:4])
            width, height = int(parts[4]), int(parts[5])
            return CameraIntrinsics(fx, fy, cx, cy, width, height)
    raise ValueError(f"{path}: no intrinsics line found")


def save_intrinsics(K: CameraIntrinsics, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{K.fx} {K.fy} {K.cx} {K.cy} {K.width} {K.height}\n")


@dataclass(frozen=True)
class Pose6:
    """Rigid motion: translational velocity v (m/s), rotational omega (rad/s)."""

    v: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64).reshape(3))
        object.__setattr__(self, "omega",
                           np.asarray(self.omega, dtype=np.float64).reshape(3))
        if not (np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.omega))):
            raise ValueError("pose components must be finite")

    @classmethod
    def zero(cls) -> "Pose6":
        return cls(np.zeros(3), np.zeros(3))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.v, self.omega])

    @classmethod
    def from_array(cls, p) -> "Pose6":
        p = np.asarray(p, dtype=np.float64).reshape(6)
        return cls(p[:3], p[3:])


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel metric depth with an explicit validity mask.

    Depth must be positive wherever ``valid`` is True; invalid pixels are
    flagged, never encoded as zeros.
    """

    z: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=np.float64))
        object.__setattr__(self, "valid", np.asarray(self.valid, dtype=bool))
        if self.z.shape != self.valid.shape:
            raise GeometryMismatchError("depth and validity shapes differ")
        zv = self.z[self.valid]
        if zv.size and (not np.all(np.isfinite(zv)) or zv.min() <= 0):
            raise ValueError("depth must be finite and > 0 on valid pixels")

    @classmethod
    def constant_plane(cls, width: int, height: int, z: float = 1.0) -> "DepthMap":
        return cls(np.full((height, width), float(z)),
                   np.ones((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.z.shape[0]

    @property
    def width(self) -> int:
        return self.z.shape[1]


def normalize_depth(depth: DepthMap) -> tuple[DepthMap, float]:
    """Divide depth by the mean of its valid pixels; returns (normalized, mean).

    Used where depth is only known up to scale; the translation recovered
    against a normalized map is in units of the mean depth.
    """
    zv = depth.z[depth.valid]
    if zv.size == 0:
        raise ValueError("cannot normalize a depth map with no valid pixels")
    mean = float(zv.mean())
    z = depth.z.copy()
    z[depth.valid] = z[depth.valid] / mean
    z[~depth.valid] = 1.0  # placeholder; still flagged invalid
    return DepthMap(z, depth.valid), mean


@dataclass(frozen=True)
class MixturePoseField:
    """Per-pixel motion as egomotion plus weighted object translations.

    ``weights`` has shape (C+1, H, W): channel 0 is the egomotion weight,
    channels 1..C pair with ``object_translations`` (camera-frame m/s,
    translation-only). Weights are non-negative and sum to 1 per pixel.
    The pixel pose adds the weighted residual translations to the ego pose;
    its rotational part is always the ego rotation.
    """

    ego: Pose6
    object_translations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        tr = np.asarray(self.object_translations, dtype=np.float64).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "object_translations", tr)
        object.__setattr__(self, "weights", w)
        if w.ndim != 3 or w.shape[0] != tr.shape[0] + 1:
            raise ValueError("weights must have shape (C+1, H, W)")
        if w.min() < 0:
            raise ValueError("mixture weights must be non-negative")
        if np.max(np.abs(w.sum(axis=0) - 1.0)) > 1e-6:
            raise ValueError("mixture weights must sum to 1 per pixel")

    @classmethod
    def rigid(cls, ego: Pose6, width: int, height: int) -> "MixturePoseField":
        """Background-only field (C = 0): every pixel moves with the ego pose."""
        return cls(ego, np.zeros((0, 3)), np.ones((1, height, width)))

    @property
    def n_objects(self) -> int:
        return self.object_translations.shape[0]

    @property
    def height(self) -> int:
        return self.weights.shape[1]

    @property
    def width(self) -> int:
        return self.weights.shape[2]


@dataclass(frozen=True)
class FlowField:
    """Per-pixel image velocity (u, v) in pixels/second with validity mask."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if not (self.u.shape == self.v.shape == self.valid.shape):
            raise GeometryMismatchError("flow channels differ in shape")

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]


def normalize_coords(px, py, K: CameraIntrinsics):
    """Pixel -> normalized image coordinates: ((px-cx)/fx, (py-cy)/fy)."""
    return (np.asarray(px, dtype=np.float64) - K.cx) / K.fx, \
           (np.asarray(py, dtype=np.float64) - K.cy) / K.fy


def denormalize_coords(x, y, K: CameraIntrinsics):
    """Normalized -> pixel coordinates; inverse of normalize_coords."""
    return np.asarray(x) * K.fx + K.cx, np.asarray(y) * K.fy + K.cy


def flow_at(x, y, z, pose: Pose6):
    """Image velocity at normalized (x, y), depth z, for one rigid motion.

    Accepts scalars or broadcastable arrays; returns (u, v) in normalized
    units per second. Depth must be positive.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise ValueError("depth must be positive")
    vx, vy, vz = pose.v
    wx, wy, wz = pose.omega
    u = (-vx + x * vz) / z + x * y * wx - (1.0 + x * x) * wy + y * wz
    v = (-vy + y * vz) / z + (1.0 + y * y) * wx - x * y * wy - x * wz
    return u, v


def flow_operator(x, y, z) -> np.ndarray:
    """The (..., 2, 6) linear operator A with (u, v) = A @ (v, omega).

    Same model as :func:`flow_at`, exposed in matrix form so many candidate
    motions can be evaluated against fixed geometry with one matmul.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise ValueError("depth must be positive")
    shape = np.broadcast_shapes(x.shape, y.shape, z.shape)
    x, y, z = (np.broadcast_to(a, shape) for a in (x, y, z))
    A = np.zeros(shape + (2, 6))
    inv_z = 1.0 / z
    A[..., 0, 0] = -inv_z
    A[..., 0, 2] = x * inv_z
    A[..., 0, 3] = x * y
    A[..., 0, 4] = -(1.0 + x * x)
    A[..., 0, 5] = y
    A[..., 1, 1] = -inv_z
    A[..., 1, 2] = y * inv_z
    A[..., 1, 3] = 1.0 + y * y
    A[..., 1, 4] = -x * y
    A[..., 1, 5] = -x
    return A


def pixel_pose(field: MixturePoseField, px: int, py: int) -> Pose6:
    """The mixture pose at one pixel: ego plus weighted object translations."""
    w = field.weights[1:, py, px]
    v = field.ego.v + w @ field.object_translations if field.n_objects \
        else field.ego.v.copy()
    return Pose6(v, field.ego.omega)


def flow_field(depth: DepthMap, field: MixturePoseField,
               K: CameraIntrinsics) -> FlowField:
    """Dense flow from depth and a mixture pose field, in pixels/second.

    Pixels with invalid depth are marked invalid (flow set to 0 there).
    """
    if (depth.height, depth.width) != (K.height, K.width) or \
            (field.height, field.width) != (K.height, K.width):
        raise GeometryMismatchError("depth/weights/intrinsics geometry mismatch")
    xs = np.arange(K.width, dtype=np.float64)
    ys = np.arange(K.height, dtype=np.float64)
    xn, yn = normalize_coords(*np.meshgrid(xs, ys), K)
    z = np.where(depth.valid, depth.z, 1.0)
    u, v = flow_at(xn, yn, z, field.ego)
    # flow is linear in the pose, so object contributions (translation-only)
    # add as weighted translational flows
    for j in range(field.n_objects):
        tj = field.object_translations[j]
        m = field.weights[j + 1]
        u += m * (-tj[0] + xn * tj[2]) / z
        v += m * (-tj[1] + yn * tj[2]) / z
    valid = depth.valid.copy()
    u = np.where(valid, u * K.fx, 0.0)
    v = np.where(valid, v * K.fy, 0.0)
    return FlowField(u, v, valid)
