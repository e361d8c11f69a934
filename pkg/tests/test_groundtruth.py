import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from evmotion.errors import TrajectorySpanError
from evmotion.geometry import CameraIntrinsics, Pose6
from evmotion.groundtruth import (EMPTY_ID, GtFrame, PointCloud,
                                  RigidTransform, Scene, Trajectory,
                                  camera_velocity, finite_velocity,
                                  generate_frames, interpolate_pose,
                                  load_frames, load_scene, project_cloud,
                                  save_scene, write_frames)
from evmotion.synth import DEFAULT_K, tracked_scene, twist_transform

IDENT = RigidTransform.identity()


def rt(rotvec=(0, 0, 0), trans=(0, 0, 0)):
    return RigidTransform.from_rotvec(rotvec, trans)


class TestRigidTransform:
    def test_rejects_non_unit_quaternion(self):
        with pytest.raises(ValueError):
            RigidTransform(np.array([0.0, 0.0, 0.0, 1.1]), np.zeros(3))

    def test_compose_inverse_identity(self):
        a = rt((0.1, -0.2, 0.3), (1.0, 2.0, -0.5))
        o = a @ a.inverse()
        assert np.allclose(o.translation, 0.0, atol=1e-12)
        assert np.allclose(Rotation.from_quat(o.rotation).magnitude(), 0.0,
                           atol=1e-12)

    def test_apply_matches_matrix(self):
        a = rt((0.3, 0.1, -0.2), (0.5, 0.0, 1.0))
        pts = np.random.default_rng(0).normal(size=(10, 3))
        expect = pts @ a.rotation_matrix().T + a.translation
        np.testing.assert_allclose(a.apply(pts), expect)


class TestTrajectory:
    def test_requires_two_samples(self):
        with pytest.raises(ValueError):
            Trajectory([0.0], [[0, 0, 0]], [[0, 0, 0, 1]])

    def test_requires_increasing_times(self):
        with pytest.raises(ValueError):
            Trajectory([0.0, 0.0], np.zeros((2, 3)),
                       [[0, 0, 0, 1], [0, 0, 0, 1]])

    def test_antipodal_quaternions_sign_corrected(self):
        q = Rotation.from_rotvec([0, 0, 0.2]).as_quat()
        traj = Trajectory([0.0, 1.0], np.zeros((2, 3)), [q, -q])
        assert np.dot(traj.quaternions[0], traj.quaternions[1]) > 0
        mid = interpolate_pose(traj, 0.5)
        assert Rotation.from_quat(mid.rotation).magnitude() == \
            pytest.approx(0.2, abs=1e-9)


class TestInterpolatePose:
    def traj(self):
        return Trajectory.from_samples([
            (0.0, rt((0, 0, 0), (0, 0, 0))),
            (1.0, rt((0, 0, np.pi / 2), (2, 0, 0))),
            (2.0, rt((0, 0, np.pi / 2), (2, 2, 0))),
        ])

    def test_exact_at_sample_bit_for_bit(self):
        traj = self.traj()
        p = interpolate_pose(traj, 1.0)
        assert np.array_equal(p.rotation, traj.quaternions[1])
        assert np.array_equal(p.translation, traj.translations[1])

    def test_translation_midpoint(self):
        p = interpolate_pose(self.traj(), 0.5)
        assert np.allclose(p.translation, [1.0, 0.0, 0.0])

    def test_rotation_midpoint_shortest_arc(self):
        p = interpolate_pose(self.traj(), 0.5)
        rv = Rotation.from_quat(p.rotation).as_rotvec()
        assert np.allclose(rv, [0.0, 0.0, np.pi / 4], atol=1e-12)

    def test_outside_span_raises(self):
        with pytest.raises(TrajectorySpanError):
            interpolate_pose(self.traj(), 2.5)
        with pytest.raises(TrajectorySpanError):
            interpolate_pose(self.traj(), -0.1)

    def test_continuity_at_sample_boundaries(self):
        traj = self.traj()
        for t0 in (1.0, 2.0):
            eps = 1e-9
            a = interpolate_pose(traj, t0 - eps)
            b = interpolate_pose(traj, min(t0 + eps, traj.t_max))
            assert np.allclose(a.translation, b.translation, atol=1e-6)
            rel = Rotation.from_quat(a.rotation).inv() \
                * Rotation.from_quat(b.rotation)
            assert rel.magnitude() < 1e-6


def single_point_scene(point, object_id=1, K=None):
    K = K or CameraIntrinsics(100.0, 100.0, 32.0, 24.0, 64, 48)
    static = Trajectory.from_samples([(0.0, IDENT), (1.0, IDENT)])
    clouds = (PointCloud(np.asarray(point, dtype=float).reshape(-1, 3),
                         object_id),)
    return Scene(clouds, {object_id: static}, static, IDENT, K)


class TestProjectCloud:
    def test_point_on_optical_axis(self):
        scene = single_point_scene([0.0, 0.0, 2.0])
        frame = project_cloud(scene, 0.5)
        cx, cy = int(scene.K.cx), int(scene.K.cy)
        assert frame.depth.z[cy, cx] == pytest.approx(2.0)
        assert frame.depth.valid[cy, cx]
        assert frame.mask[cy, cx] == 1
        assert (frame.mask != EMPTY_ID).sum() == 1

    def test_z_buffer_nearest_wins(self):
        K = CameraIntrinsics(100.0, 100.0, 32.0, 24.0, 64, 48)
        static = Trajectory.from_samples([(0.0, IDENT), (1.0, IDENT)])
        clouds = (PointCloud([[0.0, 0.0, 2.0]], 2),
                  PointCloud([[0.0, 0.0, 1.0]], 1))
        scene = Scene(clouds, {1: static, 2: static}, static, IDENT, K)
        frame = project_cloud(scene, 0.5)
        assert frame.depth.z[24, 32] == pytest.approx(1.0)
        assert frame.mask[24, 32] == 1

    def test_z_tie_lower_id_wins(self):
        K = CameraIntrinsics(100.0, 100.0, 32.0, 24.0, 64, 48)
        static = Trajectory.from_samples([(0.0, IDENT), (1.0, IDENT)])
        clouds = (PointCloud([[0.0, 0.0, 2.0]], 3),
                  PointCloud([[0.0, 0.0, 2.0]], 1))
        scene = Scene(clouds, {1: static, 3: static}, static, IDENT, K)
        frame = project_cloud(scene, 0.5)
        assert frame.mask[24, 32] == 1

    def test_point_behind_camera_discarded(self):
        scene = single_point_scene([0.0, 0.0, -2.0])
        frame = project_cloud(scene, 0.5)
        assert not frame.depth.valid.any()
        assert (frame.mask == EMPTY_ID).all()

    def test_splat_radius_footprint(self):
        scene = single_point_scene([0.0, 0.0, 2.0])
        frame = project_cloud(scene, 0.5, splat_radius=3)
        assert (frame.mask != EMPTY_ID).sum() == 9

    def test_mask_depth_coherence(self):
        scene = tracked_scene(duration=0.2, wall_step=0.05)
        frame = project_cloud(scene, 0.1, splat_radius=2)
        assert ((frame.mask != EMPTY_ID) == frame.depth.valid).all()

    def test_projection_consistency_half_pixel(self):
        rng = np.random.default_rng(4)
        pts = np.stack([rng.uniform(-0.5, 0.5, 200),
                        rng.uniform(-0.35, 0.35, 200),
                        rng.uniform(1.0, 3.0, 200)], axis=1)
        K = CameraIntrinsics(100.0, 100.0, 32.0, 24.0, 64, 48)
        static = Trajectory.from_samples([(0.0, IDENT), (1.0, IDENT)])
        scene = Scene((PointCloud(pts, 1),), {1: static}, static, IDENT, K)
        frame = project_cloud(scene, 0.5)
        ys, xs = np.nonzero(frame.depth.valid)
        for y, x in zip(ys, xs):
            z = frame.depth.z[y, x]
            # the winning point projects within half a pixel of its cell
            d = np.hypot(K.fx * pts[:, 0] / pts[:, 2] + K.cx - x,
                         K.fy * pts[:, 1] / pts[:, 2] + K.cy - y)
            near = np.abs(pts[np.argmin(d), 2] - z)
            assert d.min() <= 0.5 * np.sqrt(2.0) + 1e-9
            assert near <= 1e-9 or (np.abs(pts[:, 2] - z).min() <= 1e-9)


class TestSceneValidation:
    def test_missing_trajectory(self):
        static = Trajectory.from_samples([(0.0, IDENT), (1.0, IDENT)])
        with pytest.raises(ValueError):
            Scene((PointCloud([[0, 0, 1.0]], 1),), {}, static, IDENT,
                  DEFAULT_K)

    def test_disjoint_spans(self):
        a = Trajectory.from_samples([(0.0, IDENT), (1.0, IDENT)])
        b = Trajectory.from_samples([(2.0, IDENT), (3.0, IDENT)])
        with pytest.raises(ValueError):
            Scene((PointCloud([[0, 0, 1.0]], 1),), {1: b}, a, IDENT,
                  DEFAULT_K)


class TestGenerateFrames:
    def test_one_second_at_40fps(self):
        scene = tracked_scene(duration=1.0, wall_step=0.08, with_object=False)
        frames = generate_frames(scene, 40.0)
        assert len(frames) == 40

    def test_half_second_gives_20(self):
        scene = tracked_scene(duration=0.5, wall_step=0.08, with_object=False)
        frames = generate_frames(scene, 40.0)
        assert len(frames) == 20

    def test_zero_fps_rejected(self):
        scene = tracked_scene(duration=0.2, wall_step=0.08, with_object=False)
        with pytest.raises(ValueError):
            generate_frames(scene, 0.0)

    def test_too_short_overlap(self):
        scene = tracked_scene(duration=0.2, wall_step=0.08, with_object=False)
        with pytest.raises(ValueError):
            generate_frames(scene, 1.0)


class TestFiniteVelocity:
    def linear_traj(self, v, n=21, span=1.0):
        ts = np.linspace(0.0, span, n)
        return Trajectory.from_samples(
            [(t, RigidTransform(np.array([0, 0, 0, 1.0]),
                                np.asarray(v) * t)) for t in ts])

    def static_traj(self):
        return Trajectory.from_samples([(0.0, IDENT), (1.0, IDENT)])

    def test_static_object_moving_camera(self):
        cam = self.linear_traj([1.0, 0.0, 0.0])
        vel = finite_velocity(self.static_traj(), cam, 0.5, 0.005)
        assert np.allclose(vel.v, [-1.0, 0.0, 0.0], atol=1e-9)
        assert np.allclose(vel.omega, 0.0, atol=1e-9)

    def test_dt_independence_for_linear_motion(self):
        cam = self.linear_traj([0.4, -0.2, 0.1])
        ref = finite_velocity(self.static_traj(), cam, 0.5, 0.001)
        for dt in (0.001, 0.004, 0.01):
            vel = finite_velocity(self.static_traj(), cam, 0.5, dt)
            assert np.allclose(vel.v, ref.v, atol=1e-6)

    def test_identical_stationary_trajectories(self):
        vel = finite_velocity(self.static_traj(), self.static_traj(), 0.5,
                              0.01)
        assert np.allclose(vel.v, 0.0) and np.allclose(vel.omega, 0.0)

    def test_span_violation(self):
        cam = self.linear_traj([1.0, 0.0, 0.0])
        with pytest.raises(TrajectorySpanError):
            finite_velocity(self.static_traj(), cam, 0.0, 0.01)

    def test_camera_velocity_recovers_twist(self):
        twist = Pose6([0.2, -0.1, 0.15], [0.1, 0.3, -0.2])
        ts = np.linspace(0.0, 1.0, 201)
        cam = Trajectory.from_samples([(t, twist_transform(twist, t))
                                       for t in ts])
        vel = camera_velocity(cam, 0.5, 0.0025)
        assert np.allclose(vel.v, twist.v, atol=1e-5)
        assert np.allclose(vel.omega, twist.omega, atol=1e-5)

    def test_rotating_camera_apparent_object_rotation(self):
        ts = np.linspace(0.0, 1.0, 201)
        cam = Trajectory.from_samples(
            [(t, rt((0, 0, 0.5 * t), (0, 0, 0))) for t in ts])
        vel = finite_velocity(self.static_traj(), cam, 0.5, 0.0025)
        # camera spins +z at 0.5 rad/s; the world appears to spin -z
        assert np.allclose(vel.omega, [0.0, 0.0, -0.5], atol=1e-5)


class TestSceneIO:
    def test_save_load_scene_round_trip(self, tmp_path):
        scene = tracked_scene(duration=0.2, wall_step=0.1)
        manifest = save_scene(scene, tmp_path / "scene")
        back = load_scene(manifest)
        assert back.K == scene.K
        assert len(back.clouds) == len(scene.clouds)
        np.testing.assert_allclose(back.clouds[0].points,
                                   scene.clouds[0].points, atol=1e-12)
        f1 = project_cloud(scene, 0.1, splat_radius=2)
        f2 = project_cloud(back, 0.1, splat_radius=2)
        assert np.array_equal(f1.mask, f2.mask)
        np.testing.assert_allclose(f1.depth.z, f2.depth.z, atol=1e-9)

    def test_write_load_frames_round_trip(self, tmp_path):
        scene = tracked_scene(duration=0.2, wall_step=0.08)
        frames = generate_frames(scene, 20.0, splat_radius=2)
        manifest = write_frames(frames, tmp_path / "gt", fps=20.0)
        back = load_frames(manifest)
        assert len(back) == len(frames)
        for a, b in zip(frames, back):
            assert a.t == b.t
            assert np.array_equal(a.mask, b.mask)
            assert np.array_equal(a.depth.valid, b.depth.valid)
            np.testing.assert_allclose(
                a.depth.z[a.depth.valid], b.depth.z[b.depth.valid], rtol=1e-6)
            np.testing.assert_allclose(a.cam_velocity.v, b.cam_velocity.v)
            np.testing.assert_allclose(a.object_velocities[1],
                                       b.object_velocities[1])
