import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sembox.geometry import (BevGridSpec, Box3D, PointCloud, Pose, bev_iou,
                             grid_index, iou_3d, point_in_box, points_in_box,
                             transform_points)

from conftest import monte_carlo_bev_iou, random_box


def make_cloud(xyz, cls=None):
    xyz = np.asarray(xyz, dtype=float)
    if cls is None:
        cls = np.ones(len(xyz), dtype=np.int32)
    return PointCloud(xyz, cls)


angles = st.floats(-math.pi, math.pi)


def pose_strategy():
    return st.builds(
        Pose.from_xyz_yaw,
        st.floats(-50, 50), st.floats(-50, 50), st.floats(-5, 5), angles)


class TestTransform:
    def test_identity(self):
        cloud = make_cloud([[1, 2, 3], [4, 5, 6]])
        out = transform_points(cloud, Pose.identity())
        np.testing.assert_array_equal(out.xyz, cloud.xyz)
        np.testing.assert_array_equal(out.class_id, cloud.class_id)

    def test_quarter_turn(self):
        pose = Pose.from_xyz_yaw(0, 0, 0, math.pi / 2)
        out = transform_points(make_cloud([[1, 0, 0]]), pose)
        np.testing.assert_allclose(out.xyz[0], [0, 1, 0], atol=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(pose=pose_strategy())
    def test_inverse_composition(self, pose):
        rng = np.random.default_rng(0)
        cloud = make_cloud(rng.uniform(-30, 30, (40, 3)))
        back = transform_points(transform_points(cloud, pose), pose.inverse())
        np.testing.assert_allclose(back.xyz, cloud.xyz, atol=1e-6)

    def test_tags_preserved(self):
        cloud = PointCloud(np.ones((3, 3)), np.array([0, 1, 2]),
                           np.array([-1, 0, 1]))
        out = transform_points(cloud, Pose.from_xyz_yaw(1, 2, 3, 0.5))
        np.testing.assert_array_equal(out.class_id, [0, 1, 2])
        np.testing.assert_array_equal(out.frame_index, [-1, 0, 1])
        assert len(out) == 3

    def test_bad_rotation_rejected(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 2.0, np.zeros(3))
        with pytest.raises(ValueError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # det -1


class TestPointInBox:
    def test_center_inside(self):
        b = Box3D(1, 2, 3, 4, 2, 1.5, 0.3)
        assert point_in_box(1, 2, 3, b)

    def test_boundary_inclusive(self):
        b = Box3D(0, 0, 0, 4, 2, 2, 0.0)
        assert point_in_box(2.0, 0, 0, b)
        assert not point_in_box(2.0 + 1e-9, 0, 0, b)

    @settings(max_examples=100, deadline=None)
    @given(l=st.floats(0.5, 5), w=st.floats(0.5, 5), yaw=angles,
           seed=st.integers(0, 2**32 - 1))
    def test_canonicalization_preserves_containment(self, l, w, yaw, seed):
        # Same physical box entered with swapped extents and rotated yaw.
        a = Box3D(1, -2, 0.5, l, w, 2.0, yaw)
        b = Box3D(1, -2, 0.5, w, l, 2.0, yaw + math.pi / 2)
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-6, 6, (100, 3))
        np.testing.assert_array_equal(points_in_box(pts, a), points_in_box(pts, b))

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            Box3D(0, 0, 0, 1e-9, 1, 1, 0)

    def test_canonical_invariants(self):
        b = Box3D(0, 0, 0, 1.0, 3.0, 1.0, 0.0)  # w > l at input
        assert b.l >= b.w
        assert -math.pi <= b.yaw < math.pi
        assert b.l == 3.0 and b.w == 1.0


class TestBevIou:
    def test_identical(self):
        b = Box3D(3, -1, 0, 4.2, 1.7, 1.5, 0.7)
        assert bev_iou(b, b) == pytest.approx(1.0, abs=1e-12)

    def test_offset_unit_squares(self):
        a = Box3D(0, 0, 0, 1, 1, 1, 0)
        b = Box3D(0.5, 0, 0, 1, 1, 1, 0)
        assert bev_iou(a, b) == pytest.approx(1 / 3, abs=1e-12)

    def test_disjoint(self):
        a = Box3D(0, 0, 0, 1, 1, 1, 0)
        b = Box3D(10, 0, 0, 1, 1, 1, 0.3)
        assert bev_iou(a, b) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_exact_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_box(rng, span=3), random_box(rng, span=3)
        assert bev_iou(a, b) == bev_iou(b, a)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_self_iou_is_one(self, seed):
        b = random_box(np.random.default_rng(seed))
        assert bev_iou(b, b) == pytest.approx(1.0, abs=1e-9)

    def test_monte_carlo_oracle_large_samples(self, rng):
        # A handful of pairs against a 10^6-sample plain uniform estimate.
        for _ in range(5):
            a, b = random_box(rng, span=2.5), random_box(rng, span=2.5)
            est = monte_carlo_bev_iou(a, b, n_side=1000, rng=rng)
            assert bev_iou(a, b) == pytest.approx(est, abs=0.01)


class TestIou3d:
    def test_identical(self):
        b = Box3D(1, 1, 1, 3, 2, 1.4, -0.4)
        assert iou_3d(b, b) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_z(self):
        a = Box3D(0, 0, 0, 2, 2, 1, 0)
        b = Box3D(0, 0, 5, 2, 2, 1, 0)
        assert iou_3d(a, b) == 0.0

    def test_half_z_overlap(self):
        a = Box3D(0, 0, 0.0, 2, 2, 1, 0)
        b = Box3D(0, 0, 0.5, 2, 2, 1, 0)
        assert iou_3d(a, b) == pytest.approx(1 / 3, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_symmetry_and_range(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_box(rng, span=3), random_box(rng, span=3)
        v = iou_3d(a, b)
        assert v == iou_3d(b, a)
        assert 0.0 <= v <= 1.0


class TestGrid:
    SPEC = BevGridSpec(0.0, 0.0, 0.5, 10, 10)

    def test_floor_arithmetic(self):
        assert grid_index(0.7, 1.2, self.SPEC) == (1, 2)

    def test_origin(self):
        assert grid_index(0.0, 0.0, self.SPEC) == (0, 0)

    def test_out_of_range(self):
        assert grid_index(-0.1, 0.0, self.SPEC) is None
        assert grid_index(5.0, 0.0, self.SPEC) is None  # right edge exclusive

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            BevGridSpec(0, 0, 0.0, 10, 10)
        with pytest.raises(ValueError):
            BevGridSpec(0, 0, 1.0, 0, 10)
