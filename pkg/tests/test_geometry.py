import numpy as np
import pytest

from evmotion.errors import GeometryMismatchError
from evmotion.geometry import (CameraIntrinsics, DepthMap, MixturePoseField,
                               Pose6, denormalize_coords, flow_at, flow_field,
                               flow_operator, load_intrinsics,
                               normalize_coords, normalize_depth, pixel_pose,
                               save_intrinsics)

K = CameraIntrinsics(fx=100.0, fy=120.0, cx=32.0, cy=24.0, width=64, height=48)


def fd_projection_flow(X, pose, dt=1e-6):
    """Finite-difference oracle: perspective-project the point before and
    after moving it by (-v - omega x X) * dt."""
    X = np.asarray(X, dtype=np.float64)
    x0 = X[:2] / X[2]
    X1 = X + dt * (-pose.v - np.cross(pose.omega, X))
    x1 = X1[:2] / X1[2]
    return (x1 - x0) / dt


class TestNormalizeCoords:
    def test_principal_point(self):
        assert normalize_coords(32.0, 24.0, K) == (0.0, 0.0)

    def test_unit_coordinate(self):
        x, _ = normalize_coords(32.0 + 100.0, 24.0, K)
        assert x == 1.0

    def test_round_trip(self):
        px, py = 11.25, 40.5
        x, y = normalize_coords(px, py, K)
        qx, qy = denormalize_coords(x, y, K)
        assert qx == pytest.approx(px) and qy == pytest.approx(py)


class TestFlowAt:
    def test_focus_of_expansion_at_center(self):
        u, v = flow_at(0.0, 0.0, 1.0, Pose6([0, 0, 1], [0, 0, 0]))
        assert u == 0.0 and v == 0.0

    def test_lateral_translation(self):
        u, v = flow_at(0.0, 0.0, 2.0, Pose6([1, 0, 0], [0, 0, 0]))
        assert u == -0.5 and v == 0.0

    def test_pure_z_rotation(self):
        u, v = flow_at(1.0, 0.0, 3.7, Pose6([0, 0, 0], [0, 0, 1]))
        assert u == 0.0 and v == -1.0

    def test_rejects_nonpositive_depth(self):
        with pytest.raises(ValueError):
            flow_at(0.0, 0.0, 0.0, Pose6.zero())

    def test_linearity_in_pose(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x, y = rng.uniform(-0.5, 0.5, 2)
            z = rng.uniform(0.5, 4.0)
            p1 = Pose6(rng.normal(size=3), rng.normal(size=3))
            p2 = Pose6(rng.normal(size=3), rng.normal(size=3))
            ps = Pose6(p1.v + p2.v, p1.omega + p2.omega)
            u1, v1 = flow_at(x, y, z, p1)
            u2, v2 = flow_at(x, y, z, p2)
            us, vs = flow_at(x, y, z, ps)
            assert us == pytest.approx(u1 + u2, rel=1e-12, abs=1e-12)
            assert vs == pytest.approx(v1 + v2, rel=1e-12, abs=1e-12)

    def test_scale_ambiguity(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            x, y = rng.uniform(-0.5, 0.5, 2)
            z = rng.uniform(0.5, 4.0)
            s = rng.uniform(0.1, 10.0)
            v = rng.normal(size=3)
            w = rng.normal(size=3)
            u1, v1 = flow_at(x, y, z, Pose6(v, w))
            u2, v2 = flow_at(x, y, s * z, Pose6(s * v, w))
            assert u2 == pytest.approx(u1, rel=1e-12, abs=1e-12)
            assert v2 == pytest.approx(v1, rel=1e-12, abs=1e-12)

    def test_against_finite_difference_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            X = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6),
                          rng.uniform(0.5, 5.0)])
            X[:2] *= X[2]
            pose = Pose6(rng.normal(scale=0.5, size=3),
                         rng.normal(scale=0.5, size=3))
            expected = fd_projection_flow(X, pose)
            u, v = flow_at(X[0] / X[2], X[1] / X[2], X[2], pose)
            scale = max(1e-3, np.linalg.norm(expected))
            assert abs(u - expected[0]) / scale < 1e-4
            assert abs(v - expected[1]) / scale < 1e-4

    def test_flow_operator_matches_flow_at(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-0.5, 0.5, 20)
        y = rng.uniform(-0.5, 0.5, 20)
        z = rng.uniform(0.5, 4.0, 20)
        pose = Pose6(rng.normal(size=3), rng.normal(size=3))
        A = flow_operator(x, y, z)
        uv = A @ pose.as_array()
        u, v = flow_at(x, y, z, pose)
        np.testing.assert_allclose(uv[:, 0], u, rtol=1e-12)
        np.testing.assert_allclose(uv[:, 1], v, rtol=1e-12)


class TestPixelPose:
    def field(self):
        w = np.zeros((3, 4, 4))
        w[0, :, :2] = 1.0
        w[1, :, 2] = 1.0
        w[0, :, 3] = 0.5
        w[2, :, 3] = 0.5
        return MixturePoseField(Pose6([0, 0, 0], [0.1, 0.2, 0.3]),
                                [[2.0, 0, 0], [0, 2.0, 0]], w)

    def test_background_pixel_is_ego(self):
        ego = Pose6([1, 2, 3], [4, 5, 6])
        field = MixturePoseField.rigid(ego, 4, 4)
        p = pixel_pose(field, 1, 1)
        assert np.array_equal(p.v, ego.v)
        assert np.array_equal(p.omega, ego.omega)

    def test_full_object_weight(self):
        p = pixel_pose(self.field(), 2, 1)
        assert np.allclose(p.v, [2.0, 0, 0])
        assert np.allclose(p.omega, [0.1, 0.2, 0.3])

    def test_soft_assignment(self):
        p = pixel_pose(self.field(), 3, 0)
        assert np.allclose(p.v, [0, 1.0, 0])


class TestMixturePoseField:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            MixturePoseField(Pose6.zero(), np.zeros((1, 3)),
                             np.full((2, 2, 2), 0.4))

    def test_weights_must_be_nonnegative(self):
        w = np.zeros((2, 2, 2))
        w[0] = 1.5
        w[1] = -0.5
        with pytest.raises(ValueError):
            MixturePoseField(Pose6.zero(), np.zeros((1, 3)), w)


class TestFlowField:
    def test_zero_pose_zero_flow(self):
        depth = DepthMap.constant_plane(K.width, K.height, 2.0)
        f = flow_field(depth, MixturePoseField.rigid(Pose6.zero(), K.width,
                                                     K.height), K)
        assert not f.u.any() and not f.v.any()
        assert f.valid.all()

    def test_invalid_depth_marks_flow_invalid(self):
        valid = np.ones((K.height, K.width), dtype=bool)
        valid[5, 7] = False
        depth = DepthMap(np.full((K.height, K.width), 2.0), valid)
        f = flow_field(depth, MixturePoseField.rigid(Pose6([1, 0, 0], [0, 0, 0]),
                                                     K.width, K.height), K)
        assert not f.valid[5, 7]
        assert f.u[5, 7] == 0.0

    def test_rotation_pattern_curl_sign(self):
        depth = DepthMap.constant_plane(K.width, K.height, 2.0)
        for wz in (1.0, -1.0):
            f = flow_field(depth, MixturePoseField.rigid(
                Pose6([0, 0, 0], [0, 0, wz]), K.width, K.height), K)
            curl = (np.gradient(f.v, axis=1)[1:-1, 1:-1]
                    - np.gradient(f.u, axis=0)[1:-1, 1:-1]).mean()
            # with x right / y down, positive wz turns the image clockwise,
            # so the numeric curl is opposite in sign to wz
            assert np.sign(curl) == -np.sign(wz)

    def test_object_translation_contribution(self):
        depth = DepthMap.constant_plane(K.width, K.height, 2.0)
        w = np.zeros((2, K.height, K.width))
        w[0] = 1.0
        w[0, 10, 10] = 0.25
        w[1, 10, 10] = 0.75
        field = MixturePoseField(Pose6.zero(), [[1.0, 0.0, 0.0]], w)
        f = flow_field(depth, field, K)
        expected = 0.75 * (-1.0 / 2.0) * K.fx
        assert f.u[10, 10] == pytest.approx(expected)
        assert f.u[0, 0] == 0.0

    def test_geometry_mismatch(self):
        depth = DepthMap.constant_plane(10, 10, 2.0)
        with pytest.raises(GeometryMismatchError):
            flow_field(depth, MixturePoseField.rigid(Pose6.zero(), 10, 10), K)


class TestDepthMap:
    def test_rejects_nonpositive_valid_depth(self):
        z = np.ones((4, 4))
        z[0, 0] = 0.0
        with pytest.raises(ValueError):
            DepthMap(z, np.ones((4, 4), dtype=bool))

    def test_invalid_pixels_may_hold_anything(self):
        z = np.ones((4, 4))
        z[0, 0] = -5.0
        valid = np.ones((4, 4), dtype=bool)
        valid[0, 0] = False
        DepthMap(z, valid)

    def test_normalize_depth(self):
        z = np.full((4, 4), 2.0)
        z[0, 0] = 4.0
        valid = np.ones((4, 4), dtype=bool)
        valid[3, 3] = False
        norm, mean = normalize_depth(DepthMap(z, valid))
        assert mean == pytest.approx(z[valid].mean())
        assert norm.z[valid].mean() == pytest.approx(1.0)


class TestIntrinsicsFile:
    def test_round_trip(self, tmp_path):
        f = tmp_path / "k.txt"
        save_intrinsics(K, f)
        back = load_intrinsics(f)
        assert back == K

    def test_comments_ignored(self, tmp_path):
        f = tmp_path / "k.txt"
        f.write_text("# fx fy cx cy w h\n100.0 120.0 32.0 24.0 64 48\n")
        assert load_intrinsics(f) == K

    def test_invalid_line(self, tmp_path):
        f = tmp_path / "k.txt"
        f.write_text("1 2 3\n")
        with pytest.raises(ValueError):
            load_intrinsics(f)

    def test_validation(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=-1.0, fy=1.0, cx=0, cy=0, width=4, height=4)
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=1.0, fy=1.0, cx=9, cy=0, width=4, height=4)
