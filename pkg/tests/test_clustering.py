import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sembox.clustering import ClusterParams, dbscan, fit_box, multi_scale_cluster
from sembox.geometry import PointCloud, points_in_box


def brute_force_dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Independent O(n^2) reference: full distance matrix, seed-order core
    expansion, then nearest-core border adoption (ties to smaller id)."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    neighbors = [np.flatnonzero(d2[i] <= eps * eps) for i in range(n)]
    is_core = np.array([len(nb) >= min_pts for nb in neighbors])
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for seed in range(n):
        if labels[seed] != -1 or not is_core[seed]:
            continue
        labels[seed] = cluster
        stack = [seed]
        while stack:
            j = stack.pop(0)
            for k in neighbors[j]:
                if is_core[k] and labels[k] == -1:
                    labels[k] = cluster
                    stack.append(int(k))
        cluster += 1
    for j in range(n):
        if is_core[j] or labels[j] != -1:
            continue
        best = None
        for k in neighbors[j]:
            if is_core[k]:
                key = (d2[j, k], labels[k])
                if best is None or key < best:
                    best = key
        if best is not None:
            labels[j] = best[1]
    return labels


def canonical_partition(labels: np.ndarray):
    """(cluster frozensets ordered by smallest member, noise set)."""
    clusters = {}
    for i, lab in enumerate(labels):
        if lab >= 0:
            clusters.setdefault(int(lab), set()).add(i)
    ordered = sorted(clusters.values(), key=min)
    noise = frozenset(np.flatnonzero(labels < 0).tolist())
    return [frozenset(c) for c in ordered], noise


class TestDbscan:
    def test_two_groups(self, rng):
        g1 = rng.normal(0, 0.05, (10, 2))
        g2 = rng.normal(0, 0.05, (10, 2)) + [10, 0]
        labels = dbscan(np.concatenate([g1, g2]), eps=0.5, min_pts=3)
        assert set(labels[:10]) == {0}
        assert set(labels[10:]) == {1}

    def test_isolated_point_is_noise(self):
        assert dbscan(np.array([[0.0, 0.0]]), eps=1.0, min_pts=2).tolist() == [-1]

    def test_empty_input(self):
        assert dbscan(np.zeros((0, 2)), eps=1.0, min_pts=3).size == 0

    def test_eps_inclusive_self_counting(self):
        # Two points exactly eps apart; min_pts=2 counts self + the other.
        pts = np.array([[0.0, 0.0], [0.5, 0.0]])
        labels = dbscan(pts, eps=0.5, min_pts=2)
        assert labels.tolist() == [0, 0]

    def test_matches_brute_force_2d(self, rng):
        for _ in range(20):
            n = int(rng.integers(5, 120))
            pts = rng.uniform(-5, 5, (n, 2))
            eps = float(rng.uniform(0.2, 2.0))
            min_pts = int(rng.integers(1, 8))
            got = canonical_partition(dbscan(pts, eps, min_pts))
            want = canonical_partition(brute_force_dbscan(pts, eps, min_pts))
            assert got == want

    def test_matches_brute_force_3d(self, rng):
        for _ in range(10):
            pts = rng.uniform(-4, 4, (int(rng.integers(5, 80)), 3))
            eps = float(rng.uniform(0.3, 2.0))
            got = canonical_partition(dbscan(pts, eps, 4))
            want = canonical_partition(brute_force_dbscan(pts, eps, 4))
            assert got == want

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_permutation_invariant_partition(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-4, 4, (60, 2))
        perm = rng.permutation(60)
        base = canonical_partition(dbscan(pts, 0.8, 4))
        shuffled = dbscan(pts[perm], 0.8, 4)
        # Map shuffled labels back to original indexing before comparing.
        unshuffled = np.full(60, -1, dtype=np.int64)
        unshuffled[perm] = shuffled
        got = canonical_partition(unshuffled)
        assert got == base

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            dbscan(np.zeros((3, 2)), eps=0.0, min_pts=3)
        with pytest.raises(ValueError):
            dbscan(np.zeros((3, 2)), eps=1.0, min_pts=0)


def rectangle_outline(l, w, yaw, n_per_side=50, z=(0.0, 1.5)):
    t = np.linspace(-0.5, 0.5, n_per_side)
    side = np.concatenate([
        np.column_stack([t * l, np.full(n_per_side, -w / 2)]),
        np.column_stack([t * l, np.full(n_per_side, w / 2)]),
        np.column_stack([np.full(n_per_side, -l / 2), t * w]),
        np.column_stack([np.full(n_per_side, l / 2), t * w]),
    ])
    c, s = math.cos(yaw), math.sin(yaw)
    xy = side @ np.array([[c, s], [-s, c]])
    zs = np.tile(np.linspace(z[0], z[1], 4), len(xy) // 4 + 1)[:len(xy)]
    return np.column_stack([xy, zs])


class TestFitBox:
    def test_axis_aligned_rectangle(self):
        box = fit_box(rectangle_outline(4, 2, 0.0), class_id=1)
        assert box.l == pytest.approx(4.0, abs=0.01)
        assert box.w == pytest.approx(2.0, abs=0.01)
        assert box.yaw % (math.pi / 2) == pytest.approx(0.0, abs=math.radians(1.01)) \
            or (math.pi / 2 - box.yaw % (math.pi / 2)) <= math.radians(1.01)

    def test_rotated_rectangle(self):
        yaw = math.radians(30)
        box = fit_box(rectangle_outline(4, 2, yaw), class_id=1)
        dev = abs((box.yaw - yaw + math.pi / 2) % math.pi - math.pi / 2)
        assert dev <= math.radians(1.01)
        assert box.l == pytest.approx(4.0, abs=0.02)
        assert box.w == pytest.approx(2.0, abs=0.02)

    def test_l_shape_contains_all_and_beats_axis_aligned(self, rng):
        # Two visible faces only.
        a = np.column_stack([rng.uniform(-2.3, 2.3, 80), np.full(80, -0.9),
                             rng.uniform(0, 1.5, 80)])
        b = np.column_stack([np.full(40, 2.3), rng.uniform(-0.9, 0.9, 40),
                             rng.uniform(0, 1.5, 40)])
        yaw = 0.6
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        pts = np.concatenate([a, b]) @ rot.T + [5, 3, 0]
        box = fit_box(pts, class_id=1)
        assert points_in_box(pts, box).all()
        aligned_area = np.ptp(pts[:, 0]) * np.ptp(pts[:, 1])
        assert box.bev_area <= aligned_area + 1e-9

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_area_never_exceeds_axis_aligned(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-3, 3, (int(rng.integers(2, 60)), 3))
        box = fit_box(pts, class_id=1)
        assert points_in_box(pts, box).all()
        aligned = max(np.ptp(pts[:, 0]), 1e-3) * max(np.ptp(pts[:, 1]), 1e-3)
        assert box.bev_area <= aligned * (1 + 1e-9) + 1e-6

    def test_closeness_criterion_on_sparse_uneven_l(self, rng):
        # Short arm dense, long arm sparse: the area landscape is nearly
        # flat and minimum area drifts; closeness locks onto the faces.
        yaw = math.radians(20)
        long_arm = np.column_stack([rng.uniform(-2.3, 2.3, 18),
                                    np.full(18, 0.9), rng.uniform(0, 1.5, 18)])
        short_arm = np.column_stack([np.full(45, -2.3),
                                     rng.uniform(-0.9, 0.9, 45),
                                     rng.uniform(0, 1.5, 45)])
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        pts = np.concatenate([long_arm, short_arm]) @ rot.T + [45, 3, 0]
        box = fit_box(pts, class_id=1, criterion="closeness")
        dev = abs((box.yaw - yaw + math.pi / 2) % math.pi - math.pi / 2)
        assert dev <= math.radians(1.01)

    def test_empty_cluster_rejected(self):
        with pytest.raises(ValueError):
            fit_box(np.zeros((0, 3)), class_id=1)

    def test_unknown_criterion(self):
        with pytest.raises(ValueError):
            fit_box(np.zeros((3, 3)), 1, criterion="entropy")


def two_blob_cloud(gap, n=40, rng=None, z=0.5):
    rng = rng or np.random.default_rng(0)
    a = np.column_stack([rng.uniform(0, 2.0, n), rng.uniform(0, 1.0, n),
                         np.full(n, z)])
    b = a + [2.0 + gap, 0, 0]
    xyz = np.concatenate([a, b])
    return PointCloud(xyz, np.ones(len(xyz), dtype=np.int32))


class TestMultiScale:
    def test_adjacent_blobs_small_and_merged_candidates(self, rng):
        cloud = two_blob_cloud(0.4, rng=rng)
        params = {1: ClusterParams((0.3, 1.0), min_pts=3, min_cluster_size=5)}
        cands = multi_scale_cluster(cloud, params)
        by_radius = {}
        for c in cands:
            by_radius.setdefault(c.radius_used, []).append(c)
        assert len(by_radius[0.3]) == 2
        assert len(by_radius[1.0]) == 1
        merged = by_radius[1.0][0]
        assert merged.box.l >= 4.0  # spans both blobs

    def test_truncated_parts_bridged_by_large_radius(self, rng):
        cloud = two_blob_cloud(0.8, rng=rng)
        params = {1: ClusterParams((0.3, 1.0), min_pts=3, min_cluster_size=5)}
        cands = multi_scale_cluster(cloud, params)
        large = [c for c in cands if c.radius_used == 1.0]
        assert len(large) == 1
        assert large[0].box.l >= 4.0

    def test_empty_foreground(self):
        cloud = PointCloud(np.zeros((0, 3)), np.zeros(0, dtype=np.int32))
        assert multi_scale_cluster(cloud, {1: ClusterParams((0.5,))}) == []

    def test_candidates_contain_their_points(self, rng):
        cloud = two_blob_cloud(0.6, rng=rng)
        params = {1: ClusterParams((0.3, 0.7, 1.2), min_pts=3, min_cluster_size=4)}
        for cand in multi_scale_cluster(cloud, params):
            member_xyz = cloud.xyz[cand.cluster_point_indices]
            assert points_in_box(member_xyz, cand.box).all()

    def test_adding_radius_keeps_existing_candidates(self, rng):
        cloud = two_blob_cloud(0.5, rng=rng)
        small = multi_scale_cluster(
            cloud, {1: ClusterParams((0.35,), min_pts=3, min_cluster_size=4)})
        both = multi_scale_cluster(
            cloud, {1: ClusterParams((0.35, 1.1), min_pts=3, min_cluster_size=4)})
        small_boxes = {(c.box.cx, c.box.cy, c.box.l, c.box.w, c.box.yaw)
                       for c in small}
        both_boxes = {(c.box.cx, c.box.cy, c.box.l, c.box.w, c.box.yaw)
                      for c in both}
        assert small_boxes <= both_boxes

    def test_params_validation(self):
        with pytest.raises(ValueError):
            ClusterParams(())
        with pytest.raises(ValueError):
            ClusterParams((0.5, 0.5))
        with pytest.raises(ValueError):
            ClusterParams((1.0, 0.5))
        with pytest.raises(ValueError):
            ClusterParams((0.5,), min_pts=0)
