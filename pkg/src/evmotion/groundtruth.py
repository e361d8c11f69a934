"""Ground-truth synthesis from tracked point clouds.

Pre-scanned per-object point clouds are carried through interpolated tracked
poses and projected into the camera to produce, at any timestamp: a z-buffered
depth map, a per-pixel object-id mask and instantaneous camera/object
velocities in the camera frame.

Conventions: quaternions are stored [qx, qy, qz, qw]; a trajectory sample is
the object-local -> world transform at that time; the extrinsic maps tracked
camera-rig markers to the camera center, so camera <- world at time t is
``extrinsic @ cam_traj(t)^-1``. Mask value 255 marks pixels no point reached.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from . import formats
from .errors import TrajectorySpanError
from .geometry import (CameraIntrinsics, DepthMap, Pose6, load_intrinsics,
                       save_intrinsics)

__all__ = [
    "EMPTY_ID",
    "RigidTransform",
    "Trajectory",
    "PointCloud",
    "Scene",
    "GtFrame",
    "interpolate_pose",
    "project_cloud",
    "generate_frames",
    "finite_velocity",
    "camera_velocity",
    "load_scene",
    "write_frames",
    "load_frames",
]

EMPTY_ID = 255  # mask value for pixels not covered by any projected point


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion [qx, qy, qz, qw]) plus translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("quaternion must be unit-norm (within 1e-9)")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        q = Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_quat()
        q = q / np.linalg.norm(q)
        return cls(q, np.asarray(translation, dtype=np.float64))

    def rotation_matrix(self) -> np.ndarray:
        return Rotation.from_quat(self.rotation).as_matrix()

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (..., 3) points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation_matrix().T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self @ other: apply ``other`` first, then ``self``."""
        r_self = Rotation.from_quat(self.rotation)
        q = (r_self * Rotation.from_quat(other.rotation)).as_quat()
        q = q / np.linalg.norm(q)
        return RigidTransform(q, r_self.apply(other.translation) + self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        r_inv = Rotation.from_quat(self.rotation).inv()
        q = r_inv.as_quat()
        q = q / np.linalg.norm(q)
        return RigidTransform(q, -r_inv.apply(self.translation))


class Trajectory:
    """Time-sorted pose samples with slerp/lerp interpolation.

    Quaternions are normalized on construction and sign-corrected so that
    consecutive samples live on the same quaternion hemisphere (interpolation
    then always takes the shorter arc).
    """

    def __init__(self, times, translations, quaternions):
        self.times = np.asarray(times, dtype=np.float64).reshape(-1)
        self.translations = np.asarray(translations, dtype=np.float64).reshape(-1, 3)
        q = np.asarray(quaternions, dtype=np.float64).reshape(-1, 4).copy()
        if len(self.times) < 2:
            raise ValueError("a trajectory needs at least 2 samples")
        if not (len(self.times) == len(self.translations) == len(q)):
            raise ValueError("sample arrays differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        norms = np.linalg.norm(q, axis=1)
        if norms.min() <= 0:
            raise ValueError("zero quaternion in trajectory")
        q /= norms[:, None]
        for i in range(1, len(q)):
            if np.dot(q[i], q[i - 1]) < 0:
                q[i] = -q[i]
        self.quaternions = q
        for a in (self.times, self.translations, self.quaternions):
            a.flags.writeable = False

    @classmethod
    def from_samples(cls, samples) -> "Trajectory":
        """Build from an iterable of (t, RigidTransform) pairs."""
        samples = list(samples)
        return cls([t for t, _ in samples],
                   [tf.translation for _, tf in samples],
                   [tf.rotation for _, tf in samples])

    @classmethod
    def load(cls, path) -> "Trajectory":
        return cls(*formats.read_trajectory(path))

    def save(self, path) -> None:
        formats.write_trajectory(path, self.times, self.translations,
                                 self.quaternions)

    @property
    def t_min(self) -> float:
        return float(self.times[0])

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    def covers(self, t: float) -> bool:
        return self.t_min <= t <= self.t_max

    def __len__(self) -> int:
        return len(self.times)

    def sample(self, i: int) -> RigidTransform:
        return RigidTransform(self.quaternions[i], self.translations[i])

    def interpolate(self, t: float) -> RigidTransform:
        return interpolate_pose(self, t)


def _slerp(q0: np.ndarray, q1: np.ndarray, alpha: float) -> np.ndarray:
    dot = float(np.dot(q0, q1))
    if dot < 0.0:  # shorter arc
        q1 = -q1
        dot = -dot
    if dot > 0.9995:  # nearly parallel: nlerp is stable and accurate
        q = q0 + alpha * (q1 - q0)
        return q / np.linalg.norm(q)
    theta = math.acos(min(dot, 1.0))
    s = math.sin(theta)
    q = (math.sin((1.0 - alpha) * theta) / s) * q0 \
        + (math.sin(alpha * theta) / s) * q1
    return q / np.linalg.norm(q)


def interpolate_pose(traj: Trajectory, t: float) -> RigidTransform:
    """Pose at time t: linear translation, shortest-arc spherical rotation.

    Exact (bit-for-bit) at sample times; raises TrajectorySpanError outside
    the sampled span.
    """
    if not traj.covers(t):
        raise TrajectorySpanError(
            f"t={t} outside trajectory span [{traj.t_min}, {traj.t_max}]")
    i = int(np.searchsorted(traj.times, t))
    if i < len(traj) and traj.times[i] == t:
        return traj.sample(i)
    lo, hi = i - 1, i
    alpha = (t - traj.times[lo]) / (traj.times[hi] - traj.times[lo])
    trans = (1.0 - alpha) * traj.translations[lo] + alpha * traj.translations[hi]
    quat = _slerp(traj.quaternions[lo], traj.quaternions[hi], alpha)
    return RigidTransform(quat, trans)


@dataclass(frozen=True)
class PointCloud:
    """Scanned points in the object-local frame; id 0 is the room/background."""

    points: np.ndarray
    object_id: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if len(pts) == 0:
            raise ValueError("point cloud must be non-empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        if not 0 <= self.object_id < EMPTY_ID:
            raise ValueError(f"object_id must be in [0, {EMPTY_ID})")


@dataclass(frozen=True)
class Scene:
    """Scanned clouds, tracked trajectories, camera extrinsic and intrinsics."""

    clouds: tuple
    trajectories: dict
    camera_trajectory: Trajectory
    extrinsic: RigidTransform
    K: CameraIntrinsics

    def __post_init__(self):
        object.__setattr__(self, "clouds", tuple(self.clouds))
        ids = [c.object_id for c in self.clouds]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate object ids among clouds")
        for c in self.clouds:
            if c.object_id not in self.trajectories:
                raise ValueError(f"no trajectory for object {c.object_id}")
        lo, hi = self.common_span()
        if hi <= lo:
            raise ValueError("trajectories do not overlap in time")

    def common_span(self) -> tuple[float, float]:
        trajs = [self.camera_trajectory] + list(self.trajectories.values())
        return (max(tr.t_min for tr in trajs), min(tr.t_max for tr in trajs))

    def camera_pose(self, t: float) -> RigidTransform:
        """camera <- world at time t (extrinsic composed after interpolation)."""
        return self.extrinsic @ interpolate_pose(self.camera_trajectory, t).inverse()


@dataclass(frozen=True)
class GtFrame:
    """One synthesized ground-truth frame."""

    t: float
    depth: DepthMap
    mask: np.ndarray
    cam_velocity: Pose6 | None = None
    object_velocities: dict | None = None


def project_cloud(scene: Scene, t: float, *, splat_radius: int = 1) -> GtFrame:
    """Project every cloud through its pose at time t; z-buffer per pixel.

    Points behind the camera are discarded; the nearest point wins each pixel
    (ties go to the lower object id). ``splat_radius`` widens each point to an
    r x r pixel footprint to close pinholes in sparse scans.
    """
    if splat_radius not in (1, 2, 3):
        raise ValueError("splat_radius must be 1, 2 or 3")
    K = scene.K
    w, h = K.width, K.height
    cam_from_world = scene.camera_pose(t)
    flat_all, z_all, id_all = [], [], []
    for cloud in scene.clouds:
        world_from_obj = interpolate_pose(scene.trajectories[cloud.object_id], t)
        pts = cam_from_world.apply(world_from_obj.apply(cloud.points))
        front = pts[:, 2] > 0.0
        pts = pts[front]
        if len(pts) == 0:
            continue
        px = np.rint(K.fx * pts[:, 0] / pts[:, 2] + K.cx).astype(np.int64)
        py = np.rint(K.fy * pts[:, 1] / pts[:, 2] + K.cy).astype(np.int64)
        base = -(splat_radius - 1) // 2
        for oy in range(base, base + splat_radius):
            for ox in range(base, base + splat_radius):
                qx = px + ox
                qy = py + oy
                inb = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
                flat_all.append(qy[inb] * w + qx[inb])
                z_all.append(pts[inb, 2])
                id_all.append(np.full(int(inb.sum()), cloud.object_id,
                                      dtype=np.int64))
    mask = np.full((h, w), EMPTY_ID, dtype=np.uint8)
    depth = np.full((h, w), 1.0)
    valid = np.zeros((h, w), dtype=bool)
    if flat_all:
        flat = np.concatenate(flat_all)
        z = np.concatenate(z_all)
        oid = np.concatenate(id_all)
        order = np.lexsort((oid, z, flat))
        flat, z, oid = flat[order], z[order], oid[order]
        winners_pix, first = np.unique(flat, return_index=True)
        mask.reshape(-1)[winners_pix] = oid[first]
        depth.reshape(-1)[winners_pix] = z[first]
        valid.reshape(-1)[winners_pix] = True
    return GtFrame(t=t, depth=DepthMap(depth, valid), mask=mask)


def _relative_rotvec(q_from: np.ndarray, q_to: np.ndarray) -> np.ndarray:
    rel = Rotation.from_quat(q_from).inv() * Rotation.from_quat(q_to)
    return rel.as_rotvec()


def finite_velocity(traj: Trajectory, cam_traj: Trajectory, t: float,
                    dt: float, *, cam_extrinsic: RigidTransform | None = None
                    ) -> Pose6:
    """Central-difference velocity of a tracked body in the camera frame.

    Differences the camera <- object transform at t - dt and t + dt: the
    translational part is the velocity of the object origin as seen from the
    camera; the rotational part is the apparent rotation rate (axis-angle of
    the relative rotation over 2*dt). Exact for constant-velocity motion.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    for tr in (traj, cam_traj):
        if not (tr.covers(t - dt) and tr.covers(t + dt)):
            raise TrajectorySpanError(
                f"[{t - dt}, {t + dt}] not covered by trajectory")
    ext = cam_extrinsic if cam_extrinsic is not None else RigidTransform.identity()

    def cam_from_obj(tq: float) -> RigidTransform:
        return (ext @ interpolate_pose(cam_traj, tq).inverse()
                @ interpolate_pose(traj, tq))

    before = cam_from_obj(t - dt)
    after = cam_from_obj(t + dt)
    v = (after.translation - before.translation) / (2.0 * dt)
    omega = _relative_rotvec(before.rotation, after.rotation) / (2.0 * dt)
    return Pose6(v, omega)


def camera_velocity(cam_traj: Trajectory, t: float, dt: float, *,
                    extrinsic: RigidTransform | None = None) -> Pose6:
    """Central-difference camera egomotion (v, omega) in the camera frame.

    Signs follow the rigid-flow model: a static point X in the camera frame
    moves with dX/dt = -v - omega x X.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not (cam_traj.covers(t - dt) and cam_traj.covers(t + dt)):
        raise TrajectorySpanError(f"[{t - dt}, {t + dt}] not covered")
    ext = extrinsic if extrinsic is not None else RigidTransform.identity()
    w_before = ext @ interpolate_pose(cam_traj, t - dt).inverse()
    w_after = ext @ interpolate_pose(cam_traj, t + dt).inverse()
    delta = w_after @ w_before.inverse()  # camera frame t-dt -> t+dt
    v = -delta.translation / (2.0 * dt)
    omega = -Rotation.from_quat(delta.rotation).as_rotvec() / (2.0 * dt)
    return Pose6(v, omega)


def generate_frames(scene: Scene, fps: float, *, splat_radius: int = 1,
                    velocity_dt: float = 0.0025) -> list[GtFrame]:
    """Uniformly sampled ground-truth frames over the common trajectory span.

    Produces floor(span * fps) frames starting at the common start. Each
    frame carries the camera velocity and per-object velocities; the
    differentiation time is clamped inside the span near its ends.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    lo, hi = scene.common_span()
    span = hi - lo
    n_frames = int(math.floor(span * fps + 1e-9))
    if n_frames < 1:
        raise ValueError("trajectories do not overlap for at least 1/fps")
    dt = min(velocity_dt, span / 4.0)
    frames = []
    for k in range(n_frames):
        t = lo + k / fps
        frame = project_cloud(scene, t, splat_radius=splat_radius)
        tv = min(max(t, lo + dt), hi - dt)
        cam_vel = camera_velocity(scene.camera_trajectory, tv, dt,
                                  extrinsic=scene.extrinsic)
        obj_vel = {
            oid: finite_velocity(tr, scene.camera_trajectory, tv, dt,
                                 cam_extrinsic=scene.extrinsic).v
            for oid, tr in sorted(scene.trajectories.items())
        }
        frames.append(GtFrame(t=frame.t, depth=frame.depth, mask=frame.mask,
                              cam_velocity=cam_vel, object_velocities=obj_vel))
    return frames


def save_scene(scene: Scene, out_dir) -> str:
    """Write a scene as PLY clouds, trajectory files and a JSON manifest.

    Inverse of :func:`load_scene`; returns the manifest path.
    """
    os.makedirs(out_dir, exist_ok=True)
    save_intrinsics(scene.K, os.path.join(out_dir, "intrinsics.txt"))
    scene.camera_trajectory.save(os.path.join(out_dir, "camera.traj"))
    objects = []
    for cloud in scene.clouds:
        oid = cloud.object_id
        cloud_name = f"object_{oid}.ply"
        traj_name = f"object_{oid}.traj"
        formats.write_ply(os.path.join(out_dir, cloud_name), cloud.points)
        scene.trajectories[oid].save(os.path.join(out_dir, traj_name))
        objects.append({"id": oid, "cloud": cloud_name, "trajectory": traj_name})
    manifest = {
        "schema": 1,
        "intrinsics": "intrinsics.txt",
        "camera_trajectory": "camera.traj",
        "extrinsic": {"quaternion": scene.extrinsic.rotation.tolist(),
                      "translation": scene.extrinsic.translation.tolist()},
        "objects": objects,
    }
    path = os.path.join(out_dir, "scene.json")
    formats.write_json(path, manifest)
    return path


def load_scene(manifest_path) -> Scene:
    """Load a scene manifest (JSON) referencing clouds/trajectories by path."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path, "r") as fh:
        spec = json.load(fh)

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    K = load_intrinsics(resolve(spec["intrinsics"]))
    ext = spec.get("extrinsic", {})
    extrinsic = RigidTransform(
        np.asarray(ext.get("quaternion", [0, 0, 0, 1]), dtype=np.float64),
        np.asarray(ext.get("translation", [0, 0, 0]), dtype=np.float64))
    cam_traj = Trajectory.load(resolve(spec["camera_trajectory"]))
    clouds = []
    trajectories = {}
    for obj in spec["objects"]:
        oid = int(obj["id"])
        clouds.append(PointCloud(formats.read_ply(resolve(obj["cloud"])), oid))
        trajectories[oid] = Trajectory.load(resolve(obj["trajectory"]))
    return Scene(tuple(clouds), trajectories, cam_traj, extrinsic, K)


def write_frames(frames, out_dir, *, fps: float | None = None) -> str:
    """Write frames as PFM depth + PGM mask pairs plus a JSON manifest.

    Depth PFMs store 0 at invalid pixels; the manifest lists per-frame
    timestamps, file names and velocities. Returns the manifest path.
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, frame in enumerate(frames):
        depth_name = f"frame_{i:04d}_depth.pfm"
        mask_name = f"frame_{i:04d}_mask.pgm"
        z = np.where(frame.depth.valid, frame.depth.z, 0.0)
        formats.write_pfm(os.path.join(out_dir, depth_name), z)
        formats.write_pgm(os.path.join(out_dir, mask_name), frame.mask)
        entry = {"t": frame.t, "depth": depth_name, "mask": mask_name}
        if frame.cam_velocity is not None:
            entry["cam_velocity"] = {"v": frame.cam_velocity.v.tolist(),
                                     "omega": frame.cam_velocity.omega.tolist()}
        if frame.object_velocities is not None:
            entry["object_velocities"] = {
                str(oid): np.asarray(vel).tolist()
                for oid, vel in sorted(frame.object_velocities.items())}
        entries.append(entry)
    manifest = {"schema": 1, "frames": entries}
    if fps is not None:
        manifest["fps"] = fps
    path = os.path.join(out_dir, "frames.json")
    formats.write_json(path, manifest)
    return path


def load_frames(manifest_path) -> list[GtFrame]:
    """Load frames written by :func:`write_frames`."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path, "r") as fh:
        manifest = json.load(fh)
    frames = []
    for entry in manifest["frames"]:
        z = formats.read_pfm(os.path.join(base, entry["depth"]))
        mask = formats.read_pgm(os.path.join(base, entry["mask"]))
        depth = DepthMap(np.where(z > 0, z, 1.0), z > 0)
        cam_vel = None
        if "cam_velocity" in entry:
            cam_vel = Pose6(np.asarray(entry["cam_velocity"]["v"]),
                            np.asarray(entry["cam_velocity"]["omega"]))
        obj_vel = None
        if "object_velocities" in entry:
            obj_vel = {int(k): np.asarray(v)
                       for k, v in entry["object_velocities"].items()}
        frames.append(GtFrame(t=float(entry["t"]), depth=depth, mask=mask,
                              cam_velocity=cam_vel, object_velocities=obj_vel))
    return frames
