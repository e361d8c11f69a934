"""Synthetic event scenes with exact ground truth.

Edge points are placed on integer pixel positions at the window's reference
time and then carried along an exact constant-twist motion; events sample
each point's trajectory at random times. Warping the resulting stream with
the true motion therefore collapses every point back onto its source pixel,
so the sharpness loss attains its floor exactly at the ground-truth motion.
This makes the generator a precise, independent oracle for the warping
losses and the estimators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .events import EventArray
from .geometry import CameraIntrinsics, DepthMap, Pose6
from .groundtruth import PointCloud, RigidTransform, Scene, Trajectory

__all__ = [
    "SyntheticRig",
    "move_points",
    "twist_transform",
    "sample_grid_points",
    "paneled_depth",
    "event_times",
    "realize_events",
    "random_pose",
    "rigid_scene",
    "imo_scene",
    "tracked_scene",
]

DEFAULT_K = CameraIntrinsics(fx=110.0, fy=110.0, cx=80.0, cy=60.0,
                             width=160, height=120)


def _cross(a, b):
    return np.cross(a, b)


def move_points(points: np.ndarray, pose: Pose6, dts: np.ndarray) -> np.ndarray:
    """Positions of camera-frame points after time offsets under a twist.

    Points satisfy dX/dt = -v - omega x X (constant camera twist), whose
    exact solution is the rigid exponential applied per offset:
    X(t_ref + dt) = exp(dt * (-omega, -v)) . X(t_ref). Vectorized Rodrigues
    with series fallbacks near zero angle.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dts = np.asarray(dts, dtype=np.float64).reshape(-1)
    w = -pose.omega[None, :] * dts[:, None]
    u = -pose.v[None, :] * dts[:, None]
    theta2 = np.einsum("ij,ij->i", w, w)
    theta = np.sqrt(theta2)
    small = theta < 1e-6
    safe2 = np.where(small, 1.0, theta2)
    safe3 = np.where(small, 1.0, theta2 * theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(theta) / np.sqrt(safe2))
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(theta)) / safe2)
    c = np.where(small, 1.0 / 6.0 - theta2 / 120.0,
                 (theta - np.sin(theta)) / safe3)
    wx_p = _cross(w, points)
    wwx_p = _cross(w, wx_p)
    rotated = points + a[:, None] * wx_p + b[:, None] * wwx_p
    wu = _cross(w, u)
    wwu = _cross(w, wu)
    translated = u + b[:, None] * wu + c[:, None] * wwu
    return rotated + translated


def twist_transform(pose: Pose6, t: float) -> RigidTransform:
    """The rigid transform reached after time t under a constant twist.

    Integrates a body moving with constant (v, omega) in its own frame:
    the rotation is exp(t*omega) and the translation applies the SE(3)
    left Jacobian to t*v.
    """
    w = pose.omega * t
    theta = float(np.linalg.norm(w))
    quat = Rotation.from_rotvec(w).as_quat()
    quat = quat / np.linalg.norm(quat)
    if theta < 1e-12:
        trans = pose.v * t
    else:
        skew = np.array([[0.0, -w[2], w[1]],
                         [w[2], 0.0, -w[0]],
                         [-w[1], w[0], 0.0]])
        V = np.eye(3) + (1.0 - np.cos(theta)) / theta ** 2 * skew \
            + (theta - np.sin(theta)) / theta ** 3 * (skew @ skew)
        trans = V @ (pose.v * t)
    return RigidTransform(quat, trans)


def sample_grid_points(rng: np.random.Generator, K: CameraIntrinsics,
                       n_points: int, z, margin: int = 16,
                       exclude: np.ndarray | None = None) -> np.ndarray:
    """Back-project n unique interior pixels through a depth field.

    ``z`` is a scalar (constant plane) or an (H, W) per-pixel depth field;
    ``exclude`` optionally masks out pixels (e.g. an object region) from the
    candidate set.
    """
    xs = np.arange(margin, K.width - margin)
    ys = np.arange(margin, K.height - margin)
    gx, gy = np.meshgrid(xs, ys)
    gx = gx.ravel()
    gy = gy.ravel()
    if exclude is not None:
        keep = ~exclude[gy, gx]
        gx, gy = gx[keep], gy[keep]
    if len(gx) < n_points:
        raise ValueError("not enough candidate pixels for the requested points")
    pick = rng.choice(len(gx), size=n_points, replace=False)
    px, py = gx[pick], gy[pick]
    zs = np.broadcast_to(np.asarray(z, dtype=np.float64),
                         (K.height, K.width))[py, px] if np.ndim(z) else \
        np.full(n_points, float(z))
    xn = (px - K.cx) / K.fx
    yn = (py - K.cy) / K.fy
    return np.stack([xn * zs, yn * zs, zs], axis=1)


def paneled_depth(rng: np.random.Generator, K: CameraIntrinsics,
                  near: tuple[float, float] = (1.2, 1.8),
                  far: tuple[float, float] = (2.4, 3.2)) -> np.ndarray:
    """A 2x2 checkerboard of fronto-parallel panels at contrasting depths.

    Depth variation across the image separates translational from rotational
    flow (a single constant-depth plane leaves vx/wy and vy/wx nearly
    indistinguishable at narrow fields of view).
    """
    z = np.empty((K.height, K.width))
    h2, w2 = K.height // 2, K.width // 2
    quads = [(slice(None, h2), slice(None, w2)),
             (slice(None, h2), slice(w2, None)),
             (slice(h2, None), slice(None, w2)),
             (slice(h2, None), slice(w2, None))]
    near_first = bool(rng.integers(0, 2))
    for i, quad in enumerate(quads):
        lo, hi = near if (i % 2 == 0) == near_first else far
        z[quad] = rng.uniform(lo, hi)
    return z


def _panel_interior(K: CameraIntrinsics, margin: int, inset: int) -> np.ndarray:
    """Mask of pixels too close to the sensor border or a panel boundary."""
    bad = np.zeros((K.height, K.width), dtype=bool)
    h2, w2 = K.height // 2, K.width // 2
    bad[:, :margin] = bad[:, K.width - margin:] = True
    bad[:margin, :] = bad[K.height - margin:, :] = True
    bad[:, w2 - inset:w2 + inset] = True
    bad[h2 - inset:h2 + inset, :] = True
    return bad


def event_times(rng: np.random.Generator, n_points: int, events_per_point: int,
                t_start: float, t_end: float) -> np.ndarray:
    """Uniform random event times, (n_points, events_per_point)."""
    return rng.uniform(t_start, t_end, size=(n_points, events_per_point))


def realize_events(points: np.ndarray, polarities: np.ndarray,
                   times: np.ndarray, pose: Pose6, K: CameraIntrinsics,
                   t_ref: float) -> EventArray:
    """Emit pixel events of moving points at the given times.

    ``points`` are camera-frame positions at ``t_ref``; each point keeps a
    fixed polarity. Projections behind the camera or outside the sensor are
    skipped. Events are returned time-sorted.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    times = np.asarray(times, dtype=np.float64)
    n_points, per_point = times.shape
    rep = np.repeat(points, per_point, axis=0)
    pol = np.repeat(np.asarray(polarities, dtype=np.int8), per_point)
    t_flat = times.ravel()
    pos = move_points(rep, pose, t_flat - t_ref)
    front = pos[:, 2] > 1e-6
    px = np.full(len(pos), -1, dtype=np.int64)
    py = np.full(len(pos), -1, dtype=np.int64)
    px[front] = np.rint(K.fx * pos[front, 0] / pos[front, 2] + K.cx)
    py[front] = np.rint(K.fy * pos[front, 1] / pos[front, 2] + K.cy)
    keep = front & (px >= 0) & (px < K.width) & (py >= 0) & (py < K.height)
    order = np.argsort(t_flat[keep], kind="stable")
    return EventArray(t_flat[keep][order], px[keep][order], py[keep][order],
                      pol[keep][order])


def random_pose(rng: np.random.Generator, v_mag: tuple[float, float],
                omega_mag: tuple[float, float]) -> Pose6:
    """Random motion with magnitudes drawn uniformly from the given ranges."""

    def direction():
        d = rng.normal(size=3)
        return d / np.linalg.norm(d)

    return Pose6(direction() * rng.uniform(*v_mag),
                 direction() * rng.uniform(*omega_mag))


@dataclass(frozen=True)
class SyntheticRig:
    """A generated event stream with its exact ground truth."""

    events: EventArray
    K: CameraIntrinsics
    depth: DepthMap
    ego: Pose6
    t_start: float
    t_end: float
    t_ref: float
    n_slices: int
    delta_t: float
    object_translation: np.ndarray | None = None
    object_mask: np.ndarray | None = None


def rigid_scene(rng: np.random.Generator, *, K: CameraIntrinsics = DEFAULT_K,
                pose: Pose6 | None = None, plane_depth: float | None = None,
                n_points: int = 400, events_per_point: int = 15,
                n_slices: int = 3, delta_t: float = 0.025,
                margin: int = 14, panel_inset: int = 12) -> SyntheticRig:
    """A textured rigid scene seen under one camera motion.

    By default the scene is a 2x2 arrangement of fronto-parallel panels at
    contrasting random depths (well-conditioned for 6-dof estimation); with
    ``plane_depth`` it degenerates to a single constant-depth plane. Edge
    points avoid panel boundaries so every event keeps its panel's depth.
    The returned depth map is exact at the reference time (window center).
    """
    if pose is None:
        # brisk motion: the translation direction is only observable once
        # its flow clears the event-count noise floor
        pose = random_pose(rng, (0.3, 0.7), (0.25, 0.8))
    t_start = 0.0
    t_end = n_slices * delta_t
    t_ref = 0.5 * (t_start + t_end)
    if plane_depth is not None:
        z_field = np.full((K.height, K.width), float(plane_depth))
        exclude = None
    else:
        z_field = paneled_depth(rng, K)
        exclude = _panel_interior(K, margin, panel_inset)
    points = sample_grid_points(rng, K, n_points, z_field, margin,
                                exclude=exclude)
    polarities = rng.integers(0, 2, size=n_points) * 2 - 1
    times = event_times(rng, n_points, events_per_point, t_start, t_end)
    events = realize_events(points, polarities, times, pose, K, t_ref)
    depth = DepthMap(z_field, np.ones_like(z_field, dtype=bool))
    return SyntheticRig(events=events, K=K, depth=depth, ego=pose,
                        t_start=t_start, t_end=t_end, t_ref=t_ref,
                        n_slices=n_slices, delta_t=delta_t)


def imo_scene(rng: np.random.Generator, *, K: CameraIntrinsics = DEFAULT_K,
              ego: Pose6 | None = None,
              object_translation: np.ndarray | None = None,
              plane_depth: float | None = None, n_points: int = 350,
              n_object_points: int = 140, events_per_point: int = 15,
              n_slices: int = 3, delta_t: float = 0.025,
              margin: int = 16) -> SyntheticRig:
    """A rigid background plus one independently translating object.

    The object is a pixel blob sharing the background depth but moving with
    the ego twist plus a residual translation; ``object_mask`` marks the
    pixels the object sweeps over the window (dilated), with no background
    points generated inside a safety margin around it. Default object speeds
    displace the blob by several pixels over the window; much slower objects
    fall below the sensor's pixel quantization and are unobservable.
    """
    if ego is None:
        ego = random_pose(rng, (0.0, 0.25), (0.0, 0.3))
    if object_translation is None:
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        object_translation = d * rng.uniform(0.8, 1.6)
    object_translation = np.asarray(object_translation, dtype=np.float64)
    if plane_depth is None:
        plane_depth = float(rng.uniform(1.2, 1.8))
    t_start = 0.0
    t_end = n_slices * delta_t
    t_ref = 0.5 * (t_start + t_end)
    obj_pose = Pose6(ego.v + object_translation, ego.omega)

    # object: textured disk, points on a stride-2 lattice (sparse edge-like
    # texture; adjacent-pixel points would reward collapse under overwarping)
    r_obj = int(rng.integers(12, 18))
    cx = int(rng.integers(margin + r_obj + 10, K.width - margin - r_obj - 10))
    cy = int(rng.integers(margin + r_obj + 10, K.height - margin - r_obj - 10))
    gx, gy = np.meshgrid(np.arange(K.width), np.arange(K.height))
    blob = ((gx - cx) ** 2 + (gy - cy) ** 2 <= r_obj ** 2) \
        & (gx % 2 == 0) & (gy % 2 == 0)
    blob_x = gx[blob]
    blob_y = gy[blob]
    pick = rng.choice(len(blob_x), size=min(n_object_points, len(blob_x)),
                      replace=False)
    xn = (blob_x[pick] - K.cx) / K.fx
    yn = (blob_y[pick] - K.cy) / K.fy
    obj_points = np.stack([xn * plane_depth, yn * plane_depth,
                           np.full(len(pick), plane_depth)], axis=1)

    # swept footprint of the object over the window
    sweep = np.zeros((K.height, K.width), dtype=bool)
    for dt in np.linspace(t_start - t_ref, t_end - t_ref, 9):
        moved = move_points(obj_points, obj_pose, np.full(len(obj_points), dt))
        mx = np.rint(K.fx * moved[:, 0] / moved[:, 2] + K.cx).astype(np.int64)
        my = np.rint(K.fy * moved[:, 1] / moved[:, 2] + K.cy).astype(np.int64)
        inb = (mx >= 0) & (mx < K.width) & (my >= 0) & (my < K.height)
        sweep[my[inb], mx[inb]] = True
    object_mask = ndimage.binary_dilation(sweep, iterations=2)
    keepout = ndimage.binary_dilation(object_mask, iterations=10)

    bg_points = sample_grid_points(rng, K, n_points, plane_depth, margin,
                                   exclude=keepout)
    bg_pol = rng.integers(0, 2, size=n_points) * 2 - 1
    obj_pol = rng.integers(0, 2, size=len(obj_points)) * 2 - 1
    bg_times = event_times(rng, n_points, events_per_point, t_start, t_end)
    obj_times = event_times(rng, len(obj_points), events_per_point,
                            t_start, t_end)
    bg_events = realize_events(bg_points, bg_pol, bg_times, ego, K, t_ref)
    obj_events = realize_events(obj_points, obj_pol, obj_times, obj_pose,
                                K, t_ref)
    t = np.concatenate([bg_events.t, obj_events.t])
    x = np.concatenate([bg_events.x, obj_events.x])
    y = np.concatenate([bg_events.y, obj_events.y])
    p = np.concatenate([bg_events.polarity, obj_events.polarity])
    order = np.argsort(t, kind="stable")
    events = EventArray(t[order], x[order], y[order], p[order])
    depth = DepthMap.constant_plane(K.width, K.height, plane_depth)
    return SyntheticRig(events=events, K=K, depth=depth, ego=ego,
                        t_start=t_start, t_end=t_end, t_ref=t_ref,
                        n_slices=n_slices, delta_t=delta_t,
                        object_translation=object_translation,
                        object_mask=object_mask)


def tracked_scene(*, K: CameraIntrinsics = DEFAULT_K,
                  cam_twist: Pose6 | None = None,
                  duration: float = 1.0, pose_rate: float = 200.0,
                  wall_depth: float = 2.5, wall_step: float = 0.02,
                  with_object: bool = True) -> Scene:
    """A tracked scene: a dense wall scan, a camera on a constant twist
    and optionally a small object sliding through the view.

    Pose samples are emitted at ``pose_rate`` over exactly ``duration``
    seconds; the wall is sized to stay behind the full field of view for
    the whole trajectory. Useful as ground truth whose velocities are known
    in closed form.
    """
    if cam_twist is None:
        cam_twist = Pose6([0.15, -0.1, 0.08], [0.05, -0.04, 0.3])
    times = np.arange(int(round(duration * pose_rate)) + 1) / pose_rate
    cam_traj = Trajectory.from_samples(
        [(t, twist_transform(cam_twist, t)) for t in times])
    half_w = 0.5 * K.width / K.fx * wall_depth + 0.6
    half_h = 0.5 * K.height / K.fy * wall_depth + 0.6
    xs = np.arange(-half_w, half_w, wall_step)
    ys = np.arange(-half_h, half_h, wall_step)
    gx, gy = np.meshgrid(xs, ys)
    wall = np.stack([gx.ravel(), gy.ravel(),
                     np.full(gx.size, float(wall_depth))], axis=1)
    static = Trajectory.from_samples(
        [(times[0], RigidTransform.identity()),
         (times[-1], RigidTransform.identity())])
    clouds = [PointCloud(wall, 0)]
    trajectories = {0: static}
    if with_object:
        grid = np.arange(-0.06, 0.061, 0.02)
        ox, oy = np.meshgrid(grid, grid)
        obj = np.stack([ox.ravel(), oy.ravel(), np.zeros(ox.size)], axis=1)
        obj_traj = Trajectory.from_samples(
            [(t, RigidTransform(np.array([0.0, 0.0, 0.0, 1.0]),
                                np.array([0.3 + 0.4 * t, 0.1, 2.0])))
             for t in times])
        clouds.append(PointCloud(obj, 1))
        trajectories[1] = obj_traj
    return Scene(tuple(clouds), trajectories, cam_traj,
                 RigidTransform.identity(), K)
