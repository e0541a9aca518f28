import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sembox.clustering import BoxCandidate
from sembox.geometry import Box3D, Pose, bev_iou
from sembox.scoring import (MetaShape, alignment_from_angles, alignment_score,
                            combine_scores, label_weight, meta_shape_score,
                            msf_score, nms_select, occupancy_score)

from conftest import random_box

VEH_META = MetaShape(4.6, 1.8, 1.6)


def grid_cell_points(box: Box3D, cells, r=7, jitter=0.0, rng=None):
    """One point at the center of each requested (i, j) footprint cell."""
    pts = []
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    for i, j in cells:
        u = -box.l / 2 + (i + 0.5) * box.l / r
        v = -box.w / 2 + (j + 0.5) * box.w / r
        if rng is not None and jitter > 0:
            u += rng.uniform(-jitter, jitter)
            v += rng.uniform(-jitter, jitter)
        pts.append([box.cx + c * u - s * v, box.cy + s * u + c * v, box.cz])
    return np.array(pts)


class TestOccupancy:
    def test_full_coverage(self):
        box = Box3D(2, -3, 0.5, 4.2, 1.9, 1.5, 0.4)
        cells = [(i, j) for i in range(7) for j in range(7)]
        assert occupancy_score(box, grid_cell_points(box, cells)) == 1.0

    def test_partial_coverage(self):
        box = Box3D(0, 0, 0, 4.6, 1.8, 1.6, 0.0)
        cells = [(i, j) for i in range(7) for j in range(7)][:24]
        got = occupancy_score(box, grid_cell_points(box, cells))
        assert got == pytest.approx(24 / 49, abs=1e-12)

    def test_empty_box(self):
        box = Box3D(0, 0, 0, 4, 2, 1.5, 0.0)
        assert occupancy_score(box, np.zeros((0, 3))) == 0.0
        far = np.array([[50.0, 50.0, 0.0]])
        assert occupancy_score(box, far) == 0.0

    def test_rigid_invariance(self, rng):
        box = Box3D(1, 2, 0.2, 4.0, 1.6, 1.4, 0.3)
        cells = [(i, j) for i in range(7) for j in range(7)][::3]
        pts = grid_cell_points(box, cells, jitter=0.05, rng=rng)
        base = occupancy_score(box, pts)
        for _ in range(10):
            pose = Pose.from_xyz_yaw(*rng.uniform(-20, 20, 2), rng.uniform(-2, 2),
                                     rng.uniform(-math.pi, math.pi))
            moved_box = Box3D(*pose.apply(box.center.reshape(1, 3))[0],
                              box.l, box.w, box.h, box.yaw + pose.yaw)
            moved = occupancy_score(moved_box, pose.apply(pts))
            assert moved == pytest.approx(base, abs=1e-9)


def line_points(angle, n=60, length=3.0, z=0.5, center=(0.0, 0.0)):
    t = np.linspace(-length / 2, length / 2, n)
    return np.column_stack([
        center[0] + t * math.cos(angle),
        center[1] + t * math.sin(angle),
        np.full(n, z),
    ])


class TestAlignment:
    def test_parallel_line_scores_one(self):
        box = Box3D(0, 0, 0.5, 4, 2, 1.5, 0.3)
        assert alignment_score(box, line_points(0.3)) == pytest.approx(1.0, abs=1e-6)

    def test_perpendicular_line_scores_one(self):
        box = Box3D(0, 0, 0.5, 4, 2, 1.5, 0.3)
        pts = line_points(0.3 + math.pi / 2, length=1.5)
        assert alignment_score(box, pts) == pytest.approx(1.0, abs=1e-6)

    def test_quarter_pi_off(self):
        assert alignment_from_angles(0.2, 0.2 + math.pi / 4) == pytest.approx(
            1 - math.sin(math.pi / 4), abs=1e-12)

    def test_too_few_points(self):
        box = Box3D(0, 0, 0, 4, 2, 1.5, 0)
        assert alignment_score(box, np.array([[0.0, 0.0, 0.0]])) == 0.0

    def test_zero_variance(self):
        box = Box3D(0, 0, 0, 4, 2, 1.5, 0)
        pts = np.tile([[0.1, 0.2, 0.0]], (5, 1))
        assert alignment_score(box, pts) == 0.0

    def test_heading_relabel_invariance(self):
        # The same physical box entered with swapped extents; the canonical
        # form differs only in the heading convention.
        pts = line_points(1.0, center=(1, 2))
        a = Box3D(1, 2, 0.5, 4, 2, 1.5, 1.0)
        b = Box3D(1, 2, 0.5, 2, 4, 1.5, 1.0 - math.pi / 2)
        assert alignment_score(a, pts) == pytest.approx(
            alignment_score(b, pts), abs=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(alpha=st.floats(-10, 10), theta=st.floats(-10, 10))
    def test_range(self, alpha, theta):
        assert 0.0 <= alignment_from_angles(alpha, theta) <= 1.0


class TestMetaShape:
    def test_exact_match(self):
        box = Box3D(0, 0, 0, 4.6, 1.8, 1.6, 0)
        assert meta_shape_score(box, VEH_META) == 1.0

    def test_oversize_gate(self):
        box = Box3D(0, 0, 0, 4.6 * 2.1, 1.8, 1.6, 0)
        assert meta_shape_score(box, VEH_META) == 0.0

    def test_gate_boundaries(self):
        assert meta_shape_score(Box3D(0, 0, 0, 4.6, 1.8, 0.8, 0), VEH_META) == 0.0
        assert meta_shape_score(Box3D(0, 0, 0, 4.6, 1.8, 3.2, 0), VEH_META) == 0.0

    def test_divergence_value_against_high_precision_oracle(self):
        # D for prior (4.6, 1.8, 1.6) vs box (4.0, 2.0, 1.6), computed with
        # 30-digit arithmetic: D = 0.0053637064551548.
        box = Box3D(0, 0, 0, 4.0, 2.0, 1.6, 0)
        expect = 0.892725870896904
        assert meta_shape_score(box, VEH_META) == pytest.approx(expect, abs=1e-12)
        assert meta_shape_score(box, VEH_META, literal=True) == pytest.approx(
            1 - expect, abs=1e-12)

    def test_pure_scaling_inside_gate(self):
        for s in (0.51, 0.7, 1.0, 1.5, 1.99):
            box = Box3D(0, 0, 0, 4.6 * s, 1.8 * s, 1.6 * s, 0)
            assert meta_shape_score(box, VEH_META) == pytest.approx(1.0, abs=1e-12)
        for s in (0.5, 0.25, 2.0, 3.0):
            box = Box3D(0, 0, 0, 4.6 * s, 1.8 * s, 1.6 * s, 0)
            assert meta_shape_score(box, VEH_META) == 0.0

    def test_invalid_meta(self):
        with pytest.raises(ValueError):
            MetaShape(0.0, 1.0, 1.0)


class TestCombination:
    def test_all_ones(self):
        assert combine_scores(1, 1, 1, (1 / 3, 1 / 3, 1 / 3)).msf == pytest.approx(
            1.0, abs=1e-12)

    def test_arithmetic_mean(self):
        got = combine_scores(0.9, 0.6, 0.3, (1 / 3, 1 / 3, 1 / 3)).msf
        assert got == pytest.approx(0.6, abs=1e-12)

    def test_projection(self):
        assert combine_scores(0.7, 0.1, 0.2, (1.0, 0.0, 0.0)).msf == 0.7

    def test_invalid_lambdas(self):
        with pytest.raises(ValueError):
            combine_scores(1, 1, 1, (0.5, 0.5, 0.5))
        with pytest.raises(ValueError):
            combine_scores(1, 1, 1, (-0.2, 0.6, 0.6))

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_msf_in_unit_interval_fuzz(self, seed):
        rng = np.random.default_rng(seed)
        box = random_box(rng, span=5)
        pts = rng.uniform(-8, 8, (int(rng.integers(0, 80)), 3))
        sb = msf_score(box, pts, VEH_META)
        for v in (sb.occ, sb.alg, sb.ms, sb.msf):
            assert 0.0 <= v <= 1.0


class TestLabelWeight:
    def test_midpoint(self):
        assert label_weight(0.6, 0.4, 0.8) == pytest.approx(0.5, abs=1e-12)

    def test_low_boundary(self):
        assert label_weight(0.4, 0.4, 0.8) == 0.0

    def test_saturation(self):
        assert label_weight(0.95, 0.4, 0.8) == 1.0

    def test_invalid_thresholds(self):
        with pytest.raises(ValueError):
            label_weight(0.5, 0.8, 0.4)
        with pytest.raises(ValueError):
            label_weight(0.5, 0.4, 1.2)

    @settings(max_examples=100, deadline=None)
    @given(s=st.floats(0, 1), t=st.floats(0, 1))
    def test_monotone(self, s, t):
        lo, hi = min(s, t), max(s, t)
        assert label_weight(lo) <= label_weight(hi)


def candidate(box, cluster=(0,)):
    return BoxCandidate(box, 0.5, np.array(cluster), box.class_id)


class TestNms:
    def test_identical_boxes_keep_best(self):
        box = Box3D(0, 0, 0, 4, 2, 1.5, 0, class_id=1)
        cands = [candidate(box), candidate(box)]
        scores = [combine_scores(0.9, 0.9, 0.9, (1 / 3,) * 3),
                  combine_scores(0.7, 0.7, 0.7, (1 / 3,) * 3)]
        kept = nms_select(cands, scores, 0.2, 0.4, 0.8, frame_id=3)
        assert len(kept) == 1
        assert kept[0].scores.msf == pytest.approx(0.9)
        assert kept[0].frame_id == 3
        assert kept[0].source == "init"

    def test_disjoint_boxes_both_kept(self):
        a = Box3D(0, 0, 0, 4, 2, 1.5, 0, class_id=1)
        b = Box3D(20, 0, 0, 4, 2, 1.5, 0, class_id=1)
        scores = [combine_scores(0.8, 0.8, 0.8, (1 / 3,) * 3)] * 2
        kept = nms_select([candidate(a), candidate(b)], scores, 0.2, 0.4, 0.8, 0)
        assert len(kept) == 2

    def test_adjacency_scenario(self):
        # Two tight boxes and one merged box overlapping both: the merged
        # candidate scores lower (shape gate) and is suppressed.
        a = Box3D(0, 1.15, 0, 4.6, 1.8, 1.6, 0, class_id=1)
        b = Box3D(0, -1.15, 0, 4.6, 1.8, 1.6, 0, class_id=1)
        merged = Box3D(0, 0, 0, 4.6, 4.1, 1.6, 0, class_id=1)
        lam = (1 / 3, 1 / 3, 1 / 3)
        cands = [candidate(a), candidate(b), candidate(merged)]
        scores = [combine_scores(0.5, 0.9, 1.0, lam),
                  combine_scores(0.5, 0.9, 1.0, lam),
                  combine_scores(0.5, 0.9, 0.0, lam)]
        kept = nms_select(cands, scores, 0.2, 0.4, 0.8, 0)
        assert len(kept) == 2
        assert {k.box.cy for k in kept} == {1.15, -1.15}

    def test_classes_do_not_suppress_each_other(self):
        a = Box3D(0, 0, 0, 1.8, 0.6, 1.7, 0, class_id=3)
        b = Box3D(0, 0, 0, 1.8, 0.8, 1.7, 0, class_id=2)
        scores = [combine_scores(0.9, 0.9, 0.9, (1 / 3,) * 3),
                  combine_scores(0.5, 0.5, 0.5, (1 / 3,) * 3)]
        kept = nms_select([candidate(a), candidate(b)], scores, 0.2, 0.4, 0.8, 0)
        assert len(kept) == 2

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_postconditions(self, seed):
        rng = np.random.default_rng(seed)
        lam = (1 / 3, 1 / 3, 1 / 3)
        cands, scores = [], []
        for _ in range(12):
            b = random_box(rng, span=6)
            cands.append(candidate(b))
            scores.append(combine_scores(*rng.uniform(0, 1, 3), lam))
        kept = nms_select(cands, scores, 0.3, 0.4, 0.8, 0)
        boxes = [k.box for k in kept]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                assert bev_iou(boxes[i], boxes[j]) < 0.3
        kept_msf = {k.scores.msf for k in kept}
        for cand, sb in zip(cands, scores):
            if sb.msf in kept_msf:
                continue
            # Every suppressed candidate overlaps a kept box with >= msf.
            assert any(bev_iou(cand.box, k.box) >= 0.3
                       and k.scores.msf >= sb.msf for k in kept)
        for k in kept:
            assert k.weight == label_weight(k.scores.msf, 0.4, 0.8)
