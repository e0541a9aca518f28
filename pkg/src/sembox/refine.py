"""One self-training refinement round over detector predictions.

The round trusts the per-point semantics more than the detector: boxes
whose interior semantics contradict their class are dropped; boxes of
static objects are pooled across frames in global coordinates and replaced
everywhere by the single best-scoring one (far, sparse frames inherit the
near-range geometry); foreground points that end up outside every label
are removed from the training cloud so they are not learned as background.
Moving objects are passed through untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .aggregation import (CELL_EMPTY, CELL_MOVING, CELL_STATIC, Frame,
                          MotionGrid, build_motion_grid)
from .config import PipelineConfig
from .geometry import (BevGridSpec, Box3D, PointCloud, bev_iou, grid_indices,
                       points_in_box, transform_box)
from .scoring import (SOURCE_INIT, SOURCE_REFINED, PseudoLabel, label_weight,
                      msf_score, selection_order)


@dataclass(frozen=True)
class Prediction:
    """One detector output box."""

    box: Box3D
    class_id: int
    confidence: float
    frame_id: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence!r} outside [0, 1]")


@dataclass
class RefinedLabelSet:
    """Output of a refinement round: labels and surviving point indices."""

    labels: dict[int, list[PseudoLabel]]
    retained_indices: dict[int, np.ndarray] = field(default_factory=dict)


def semantic_consistency_filter(preds: list[Prediction], frame: Frame,
                                min_fraction: float = 0.05,
                                min_points: int = 3) -> list[Prediction]:
    """Drop predictions whose interior semantics contradict their class.

    For each box the interior points are gathered; a class counts as
    present when it has at least min_points points and at least
    min_fraction of the box's foreground points. A prediction is dropped
    when its box holds no foreground points, when the majority foreground
    class disagrees with the predicted one, or when two or more foreground
    classes are present at once.
    """
    kept: list[Prediction] = []
    xyz = frame.points.xyz
    cls = frame.points.class_id
    for pred in preds:
        inside = points_in_box(xyz, pred.box)
        in_cls = cls[inside]
        fg = in_cls[in_cls > 0]
        if len(fg) == 0:
            continue
        ids, counts = np.unique(fg, return_counts=True)
        majority = int(ids[np.argmax(counts)])  # ties: smallest class id
        if majority != pred.class_id:
            continue
        present = (counts >= min_points) & (counts >= min_fraction * len(fg))
        if int(present.sum()) >= 2:
            continue
        kept.append(pred)
    return kept


def sequence_motion_grid(frames: list[Frame], cell_size: float,
                         detection_range: float, epsilon: int) -> MotionGrid:
    """Motion grid over a whole sequence in global coordinates."""
    if not frames:
        raise ValueError("empty sequence")
    registered = []
    centers = []
    for k, fr in enumerate(frames):
        if fr.pose is None:
            raise ValueError(f"missing pose for frame {fr.frame_id}")
        moved = fr.points.transformed(fr.pose)
        registered.append(PointCloud(
            moved.xyz, moved.class_id, np.full(len(moved), k, dtype=np.int32)))
        centers.append(fr.pose.translation[:2])
    centers = np.array(centers)
    spec = BevGridSpec.covering(
        centers[:, 0].min() - detection_range, centers[:, 1].min() - detection_range,
        centers[:, 0].max() + detection_range, centers[:, 1].max() + detection_range,
        cell_size)
    return build_motion_grid(registered, spec, epsilon)


def _static_class_points(frames: list[Frame], grid: MotionGrid) -> dict[int, np.ndarray]:
    """Foreground points in static cells, pooled per class, global coords."""
    per_class: dict[int, list[np.ndarray]] = {}
    for fr in frames:
        moved = fr.points.transformed(fr.pose)
        fg = moved.foreground
        xyz = moved.xyz[fg]
        cls = moved.class_id[fg]
        if len(xyz) == 0:
            continue
        ij = grid_indices(xyz[:, :2], grid.spec)
        static = np.zeros(len(xyz), dtype=bool)
        on = ij[:, 0] >= 0
        static[on] = grid.label[ij[on, 0], ij[on, 1]] == CELL_STATIC
        for cid in np.unique(cls[static]):
            per_class.setdefault(int(cid), []).append(xyz[static & (cls == cid)])
    return {cid: np.concatenate(chunks) for cid, chunks in per_class.items()}


def _connected_groups(boxes: list[Box3D]) -> list[list[int]]:
    """Connected components under 'any BEV overlap' between boxes."""
    n = len(boxes)
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if bev_iou(boxes[i], boxes[j]) > 0.0:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [groups[r] for r in sorted(groups)]


@dataclass(frozen=True)
class RefinedBox:
    box: Box3D
    class_id: int
    source: str


def _prediction_motion_state(pred: Prediction, frame: Frame,
                             grid: MotionGrid) -> int:
    """Motion classification of a prediction, in global-grid cell labels.

    The box's BEV center cell decides when it is occupied. Box interiors
    are hollow for surface returns, so an empty center falls back to a
    vote over the cells of the box's own interior foreground points:
    static wins ties, no points at all means no motion evidence (empty).
    """
    center = frame.pose.apply(pred.box.center.reshape(1, 3))[0]
    label = grid.cell_label(center[0], center[1])
    if label != CELL_EMPTY:
        return label
    fg = frame.points.class_id > 0
    if not fg.any():
        return CELL_EMPTY
    inside = points_in_box(frame.points.xyz[fg], pred.box)
    if not inside.any():
        return CELL_EMPTY
    pts = frame.pose.apply(frame.points.xyz[fg][inside])
    ij = grid_indices(pts[:, :2], grid.spec)
    on = ij[:, 0] >= 0
    if not on.any():
        return CELL_EMPTY
    cell_labels = grid.label[ij[on, 0], ij[on, 1]]
    n_static = int((cell_labels == CELL_STATIC).sum())
    n_moving = int((cell_labels == CELL_MOVING).sum())
    if n_static == 0 and n_moving == 0:
        return CELL_EMPTY
    return CELL_STATIC if n_static >= n_moving else CELL_MOVING


def spatial_temporal_fine_tune(preds_per_frame: dict[int, list[Prediction]],
                               frames: list[Frame], grid: MotionGrid,
                               config: PipelineConfig) -> dict[int, list[RefinedBox]]:
    """Broadcast the best static-object box of each cross-frame group.

    Predictions centered in static cells are pooled in global coordinates,
    grouped by any-overlap connected components per class (one group per
    physical object), scored against the aggregated static foreground
    points of their class, and the winner is written back into every frame
    holding at least one foreground point of the class inside it. All
    other predictions pass through unrefined.
    """
    poses = {fr.frame_id: fr.pose for fr in frames}
    for fr in frames:
        if fr.pose is None:
            raise ValueError(f"missing pose for frame {fr.frame_id}")

    frame_by_id = {fr.frame_id: fr for fr in frames}
    out: dict[int, list[RefinedBox]] = {fr.frame_id: [] for fr in frames}
    static_entries: list[tuple[int, Prediction, Box3D]] = []
    for fid in sorted(preds_per_frame):
        if fid not in poses:
            raise ValueError(f"predictions reference unknown frame {fid}")
        for pred in preds_per_frame[fid]:
            state = _prediction_motion_state(pred, frame_by_id[fid], grid)
            if state == CELL_STATIC:
                static_entries.append(
                    (fid, pred, transform_box(pred.box, poses[fid])))
            else:
                out[fid].append(RefinedBox(pred.box, pred.class_id, SOURCE_INIT))

    if static_entries:
        class_points = _static_class_points(frames, grid)
        by_class: dict[int, list[int]] = {}
        for idx, (_, pred, _) in enumerate(static_entries):
            by_class.setdefault(pred.class_id, []).append(idx)

        for cid in sorted(by_class):
            members = by_class[cid]
            global_boxes = [static_entries[i][2] for i in members]
            pts = class_points.get(cid, np.zeros((0, 3)))
            meta = config.meta_shape(cid)
            scores = [
                msf_score(b, pts, meta, config.lambdas, config.occ_grid_r,
                          config.shape_score_literal)
                for b in global_boxes
            ]
            for group in _connected_groups(global_boxes):
                best_local = selection_order([scores[g] for g in group])[0]
                winner = global_boxes[group[best_local]]
                for fr in frames:
                    local = transform_box(winner, fr.pose.inverse())
                    fg = fr.points.class_id == cid
                    if fg.any() and points_in_box(fr.points.xyz[fg], local).any():
                        # The broadcast replaces whatever same-class
                        # predictions it overlaps in this frame.
                        out[fr.frame_id] = [
                            rb for rb in out[fr.frame_id]
                            if rb.class_id != cid
                            or bev_iou(rb.box, local) == 0.0
                        ]
                        out[fr.frame_id].append(
                            RefinedBox(local, cid, SOURCE_REFINED))
    return out


def box_absent_foreground_filter(frame: Frame,
                                 labels: list[PseudoLabel]) -> np.ndarray:
    """Indices of points to keep: background always, foreground only when
    covered by at least one label box. Sorted ascending."""
    keep = ~frame.points.foreground
    fg_idx = np.flatnonzero(frame.points.foreground)
    if len(fg_idx) and labels:
        covered = np.zeros(len(fg_idx), dtype=bool)
        fg_xyz = frame.points.xyz[fg_idx]
        for lab in labels:
            covered |= points_in_box(fg_xyz, lab.box)
        keep[fg_idx[covered]] = True
    return np.flatnonzero(keep)


def refine_round(frames: list[Frame],
                 preds_per_frame: dict[int, list[Prediction]],
                 config: PipelineConfig) -> RefinedLabelSet:
    """Run one refinement round: confidence floor, semantic filtering,
    static-object broadcast, rescoring and weighting, foreground filtering."""
    frame_by_id = {fr.frame_id: fr for fr in frames}
    filtered: dict[int, list[Prediction]] = {}
    for fid in sorted(preds_per_frame):
        if fid not in frame_by_id:
            raise ValueError(f"predictions reference unknown frame {fid}")
        preds = [p for p in preds_per_frame[fid]
                 if p.confidence >= config.confidence_floor]
        filtered[fid] = semantic_consistency_filter(
            preds, frame_by_id[fid], config.scf_min_fraction,
            config.scf_min_points)

    epsilon = config.effective_epsilon(len(frames))
    grid = sequence_motion_grid(frames, config.cell_size,
                                config.detection_range, epsilon)
    refined = spatial_temporal_fine_tune(filtered, frames, grid, config)

    labels: dict[int, list[PseudoLabel]] = {}
    retained: dict[int, np.ndarray] = {}
    for fr in frames:
        frame_labels: list[PseudoLabel] = []
        for rb in refined.get(fr.frame_id, []):
            cls_xyz = fr.points.xyz[fr.points.class_id == rb.class_id]
            scores = msf_score(rb.box, cls_xyz, config.meta_shape(rb.class_id),
                               config.lambdas, config.occ_grid_r,
                               config.shape_score_literal)
            frame_labels.append(PseudoLabel(
                box=rb.box, class_id=rb.class_id, scores=scores,
                weight=label_weight(scores.msf, config.theta_low, config.theta_high),
                source=rb.source, frame_id=fr.frame_id))
        frame_labels.sort(key=_label_sort_key)
        labels[fr.frame_id] = frame_labels
        retained[fr.frame_id] = box_absent_foreground_filter(fr, frame_labels)
    return RefinedLabelSet(labels, retained)


def _label_sort_key(lab: PseudoLabel):
    return (lab.class_id, -lab.scores.msf, lab.box.cx, lab.box.cy,
            lab.box.cz, lab.box.yaw)


# Mock detector -------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Synthetic detector error model; all noise grows linearly with range."""

    pos_sigma: float = 0.3
    size_sigma: float = 0.1
    yaw_sigma_deg: float = 3.0
    range_growth: float = 30.0  # sigma multiplier = 1 + range / range_growth
    drop_prob: float = 0.1
    class_flip_prob: float = 0.1
    false_positives_per_frame: float = 0.0
    confidence_base: float = 0.9
    confidence_range_slope: float = 0.004
    confidence_sigma: float = 0.0


NOISE_PROFILES = {
    "none": NoiseModel(0.0, 0.0, 0.0, 30.0, 0.0, 0.0, 0.0),
    "mild": NoiseModel(0.1, 0.05, 1.0, 30.0, 0.05, 0.02, 0.0),
    "default": NoiseModel(0.3, 0.1, 3.0, 30.0, 0.1, 0.1, 0.0),
    "harsh": NoiseModel(0.5, 0.2, 6.0, 20.0, 0.2, 0.15, 1.0),
}


def mock_detector(boxes_per_frame: dict[int, list[Box3D]], noise: NoiseModel,
                  seed: int, num_classes: int = 3) -> dict[int, list[Prediction]]:
    """Stand-in for a trained detector: input boxes plus seeded noise.

    Deterministic for a fixed seed; with a zero noise model the output
    boxes equal the input boxes.
    """
    rng = np.random.default_rng(seed)
    out: dict[int, list[Prediction]] = {}
    for fid in sorted(boxes_per_frame):
        preds: list[Prediction] = []
        for box in boxes_per_frame[fid]:
            if rng.uniform() < noise.drop_prob:
                continue
            r = math.hypot(box.cx, box.cy)
            g = 1.0 + r / noise.range_growth
            dx, dy = rng.normal(0.0, noise.pos_sigma * g, 2)
            dz = rng.normal(0.0, noise.pos_sigma * g * 0.3)
            dsize = rng.normal(0.0, noise.size_sigma * g, 3)
            dyaw = rng.normal(0.0, math.radians(noise.yaw_sigma_deg) * g)
            class_id = box.class_id
            if rng.uniform() < noise.class_flip_prob and num_classes > 1:
                others = [c for c in range(1, num_classes + 1) if c != class_id]
                class_id = int(others[rng.integers(len(others))])
            conf = noise.confidence_base - noise.confidence_range_slope * r
            if noise.confidence_sigma > 0:
                conf += rng.normal(0.0, noise.confidence_sigma)
            jittered = Box3D(
                box.cx + dx, box.cy + dy, box.cz + dz,
                max(box.l + dsize[0], 0.1), max(box.w + dsize[1], 0.1),
                max(box.h + dsize[2], 0.1), box.yaw + dyaw, class_id)
            preds.append(Prediction(jittered, class_id,
                                    float(np.clip(conf, 0.01, 1.0)), fid))
        n_fp = int(rng.poisson(noise.false_positives_per_frame)) \
            if noise.false_positives_per_frame > 0 else 0
        for _ in range(n_fp):
            r = math.sqrt(rng.uniform(5.0 ** 2, 60.0 ** 2))
            az = rng.uniform(0.0, 2.0 * math.pi)
            cls = int(rng.integers(1, num_classes + 1))
            preds.append(Prediction(
                Box3D(r * math.cos(az), r * math.sin(az), 0.8,
                      4.0 + rng.uniform(-1, 1), 1.8 + rng.uniform(-0.5, 0.5),
                      1.6, rng.uniform(-math.pi, math.pi), cls),
                cls, float(rng.uniform(0.3, 0.6)), fid))
        out[fid] = preds
    return out
