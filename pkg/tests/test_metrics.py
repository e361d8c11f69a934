import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from evmotion.errors import GeometryMismatchError, NoValidDepthError
from evmotion.geometry import DepthMap
from evmotion.metrics import (aee, align_depth_scale, depth_metrics, iou,
                              mean_depth_metrics, rre)


def dm(z, valid=None):
    z = np.asarray(z, dtype=np.float64)
    if valid is None:
        valid = np.ones_like(z, dtype=bool)
    return DepthMap(z, valid)


class TestAee:
    def test_exact_match(self):
        v = np.array([[1.0, 2.0, 3.0], [0.5, 0.0, -1.0]])
        assert aee(v, v) == 0.0

    def test_scale_absorbed(self):
        gt = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
        assert aee(2.0 * gt, gt, scale_from_gt=True) == pytest.approx(0.0)

    def test_unit_distance(self):
        assert aee([[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]]) == \
            pytest.approx(np.sqrt(2.0))

    def test_scale_invariance_property(self):
        rng = np.random.default_rng(0)
        pred = rng.normal(size=(20, 3))
        gt = rng.normal(size=(20, 3))
        a = aee(pred, gt, scale_from_gt=True)
        b = aee(3.7 * pred, gt, scale_from_gt=True)
        assert a == pytest.approx(b, rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            aee([], [])
        with pytest.raises(ValueError):
            aee([[0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]], scale_from_gt=True)
        with pytest.raises(ValueError):
            aee([[1.0, 0.0, 0.0]], [[1.0, 0.0, 0.0], [0, 0, 1.0]])


class TestRre:
    def test_identical_rotations(self):
        r = Rotation.from_rotvec([0.1, 0.2, 0.3]).as_matrix()
        assert rre(r, r) == pytest.approx(0.0, abs=1e-12)

    def test_tenth_radian_about_z(self):
        r = Rotation.from_rotvec([0.0, 0.0, 0.1]).as_matrix()
        assert rre(np.eye(3), r) == pytest.approx(0.1, abs=1e-12)

    def test_conjugation_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = Rotation.random(random_state=rng)
            b = Rotation.random(random_state=rng)
            q = Rotation.random(random_state=rng)
            lhs = rre((q * a * q.inv()).as_matrix(),
                      (q * b * q.inv()).as_matrix())
            rhs = rre(a.as_matrix(), b.as_matrix())
            assert lhs == pytest.approx(rhs, abs=1e-9)

    def test_symmetry_and_triangle_inequality(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            a = Rotation.random(random_state=rng).as_matrix()
            b = Rotation.random(random_state=rng).as_matrix()
            c = Rotation.random(random_state=rng).as_matrix()
            assert rre(a, b) == pytest.approx(rre(b, a), abs=1e-9)
            assert rre(a, c) <= rre(a, b) + rre(b, c) + 1e-9

    def test_accepts_quaternions(self):
        q = Rotation.from_rotvec([0.0, 0.0, 0.1]).as_quat()
        assert rre(np.array([0.0, 0, 0, 1.0]), q) == pytest.approx(0.1)

    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            rre(np.eye(3) * 2.0, np.eye(3))


class TestIou:
    def test_exact_match(self):
        m = np.zeros((8, 8))
        m[2:5, 2:5] = 1.0
        assert iou(m, m > 0) == 1.0

    def test_disjoint(self):
        a = np.zeros((8, 8))
        a[:2] = 1.0
        b = np.zeros((8, 8), dtype=bool)
        b[6:] = True
        assert iou(a, b) == 0.0

    def test_half_coverage(self):
        gt = np.zeros((8, 8), dtype=bool)
        gt[0, :4] = True
        pred = np.zeros((8, 8))
        pred[0, :2] = 1.0
        assert iou(pred, gt) == 0.5

    def test_both_empty_is_one(self):
        assert iou(np.zeros((4, 4)), np.zeros((4, 4), dtype=bool)) == 1.0

    def test_monotone_growth_toward_gt(self):
        gt = np.zeros((8, 8), dtype=bool)
        gt[2:6, 2:6] = True
        prev = 0.0
        pred = np.zeros((8, 8))
        for k in range(2, 6):
            pred[2:k + 1, 2:6] = 1.0
            cur = iou(pred, gt)
            assert cur >= prev
            prev = cur

    def test_threshold(self):
        pred = np.full((4, 4), 0.4)
        gt = np.ones((4, 4), dtype=bool)
        assert iou(pred, gt, threshold=0.5) == 0.0
        assert iou(pred, gt, threshold=0.3) == 1.0

    def test_geometry_mismatch(self):
        with pytest.raises(GeometryMismatchError):
            iou(np.zeros((4, 4)), np.zeros((5, 5), dtype=bool))


class TestDepthMetrics:
    def test_perfect_prediction(self):
        g = dm(np.random.default_rng(0).uniform(1.0, 3.0, (8, 8)))
        m = depth_metrics(g, g, alignment="none")
        assert m.abs_rel == 0.0 and m.rmse_log == 0.0
        assert m.silog == pytest.approx(0.0, abs=1e-15)
        assert m.delta1 == m.delta2 == m.delta3 == 1.0

    def test_global_scale_removed_by_alignment(self):
        g = dm(np.random.default_rng(1).uniform(1.0, 3.0, (8, 8)))
        p = dm(2.0 * g.z)
        m = depth_metrics(p, g, alignment="median")
        assert m.abs_rel == pytest.approx(0.0, abs=1e-12)
        assert m.delta1 == 1.0

    def test_factor_1p3_without_alignment(self):
        g = dm(np.full((6, 6), 2.0))
        p = dm(1.3 * g.z)
        m = depth_metrics(p, g, alignment="none")
        assert m.abs_rel == pytest.approx(0.3)
        assert m.delta1 == 0.0  # 1.3 > 1.25, strict inequality
        assert m.delta2 == 1.0
        assert m.delta3 == 1.0

    def test_silog_scale_invariant(self):
        rng = np.random.default_rng(3)
        g = dm(rng.uniform(1.0, 3.0, (10, 10)))
        p = dm(g.z * rng.uniform(0.8, 1.2, (10, 10)))
        m1 = depth_metrics(p, g, alignment="none")
        m2 = depth_metrics(dm(5.0 * p.z), g, alignment="none")
        assert m1.silog == pytest.approx(m2.silog, abs=1e-12)

    def test_delta_ordering(self):
        rng = np.random.default_rng(4)
        g = dm(rng.uniform(1.0, 3.0, (10, 10)))
        p = dm(g.z * rng.uniform(0.6, 1.7, (10, 10)))
        m = depth_metrics(p, g, alignment="none")
        assert m.delta1 <= m.delta2 <= m.delta3

    def test_only_shared_valid_pixels(self):
        z = np.full((4, 4), 2.0)
        pv = np.ones((4, 4), dtype=bool)
        pv[0] = False
        gv = np.ones((4, 4), dtype=bool)
        gv[:, 0] = False
        p = dm(z, pv)
        g = dm(z * 1.1, gv)
        m = depth_metrics(p, g, alignment="none")
        assert m.abs_rel == pytest.approx(1.0 - 1.0 / 1.1, rel=1e-9)

    def test_no_overlap_raises(self):
        z = np.ones((4, 4))
        a = DepthMap(z, np.zeros((4, 4), dtype=bool))
        with pytest.raises(NoValidDepthError):
            depth_metrics(a, a)

    def test_alignment_modes(self):
        g = dm(np.full((4, 4), 3.0))
        p = dm(np.full((4, 4), 1.5))
        assert align_depth_scale(p, g, "median") == pytest.approx(2.0)
        assert align_depth_scale(p, g, "mean") == pytest.approx(2.0)
        assert align_depth_scale(p, g, "none") == 1.0
        with pytest.raises(ValueError):
            align_depth_scale(p, g, "mode")

    def test_mean_over_frames(self):
        g = dm(np.full((4, 4), 2.0))
        frames = [depth_metrics(dm(np.full((4, 4), s)), g, alignment="none")
                  for s in (2.0, 2.2)]
        m = mean_depth_metrics(frames)
        assert m.abs_rel == pytest.approx(0.5 * (0.0 + 0.1))
