"""Label quality scoring and score-driven NMS selection.

A candidate box is scored by three complementary signals, each in [0, 1]:

* occupancy: fraction of an r x r BEV grid over the box footprint that
  contains foreground points of the box's class. Complete objects fill
  more cells.
* alignment: agreement between the box heading and the principal direction
  of the densest point region. LiDAR points concentrate on surfaces, so a
  well-fit box has its densest region running parallel (or perpendicular)
  to the heading.
* shape prior: closeness of the box proportions to a per-class prior
  shape, gated to zero when any dimension is off by 2x or more.

The combined score is a convex combination of the three. Selection keeps,
per class, greedily by combined score, every candidate that overlaps no
already-kept box above the IoU threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .clustering import BoxCandidate
from .geometry import Box3D, bev_iou, points_in_box

SOURCE_INIT = "init"
SOURCE_REFINED = "stcf-refined"

# The divergence at which the shape-prior score bottoms out.
_SHAPE_DIVERGENCE_CAP = 0.05


@dataclass(frozen=True)
class MetaShape:
    """Per-class prior box dimensions (length, width, height), meters."""

    l: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.l <= 0 or self.w <= 0 or self.h <= 0:
            raise ValueError("meta shape components must be > 0")


@dataclass(frozen=True)
class ScoreBreakdown:
    occ: float
    alg: float
    ms: float
    msf: float
    lambdas: tuple[float, float, float] | None = None  # None for loaded labels


@dataclass(frozen=True)
class PseudoLabel:
    box: Box3D
    class_id: int
    scores: ScoreBreakdown
    weight: float
    source: str
    frame_id: int


def _box_grid_counts(box: Box3D, xyz: np.ndarray, r: int):
    """Bin in-box points into an r x r BEV grid in the box frame.

    Returns (counts, cell_i, cell_j, frame_coords) for the in-box subset.
    Boundary points land in the outermost cells.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    inside = points_in_box(xyz, box)
    p = box.to_frame(xyz[inside])
    ci = np.floor((p[:, 0] + box.l / 2.0) / (box.l / r)).astype(np.int64)
    cj = np.floor((p[:, 1] + box.w / 2.0) / (box.w / r)).astype(np.int64)
    np.clip(ci, 0, r - 1, out=ci)
    np.clip(cj, 0, r - 1, out=cj)
    counts = np.zeros((r, r), dtype=np.int64)
    np.add.at(counts, (ci, cj), 1)
    return counts, ci, cj, p


def occupancy_score(box: Box3D, xyz: np.ndarray, r: int = 7) -> float:
    """Fraction of the r x r footprint grid occupied by in-box points."""
    if r < 1:
        raise ValueError("grid resolution must be >= 1")
    counts, _, _, _ = _box_grid_counts(box, xyz, r)
    return float(np.count_nonzero(counts)) / float(r * r)


def alignment_from_angles(alpha: float, theta: float) -> float:
    """Alignment value for a box heading alpha and a fitted line angle theta.

    The deviation is the orientation distance from theta to the nearest of
    the heading and its perpendicular (both modulo pi), which lies in
    [0, pi/4]; the score decays as 1 - sin(deviation). This fold is total
    in both angles and reproduces the published two-branch form exactly
    wherever that form expresses a deviation of at most pi/4 from either
    axis (elsewhere the printed branches leave the valid score range or
    contradict the nearest-axis reading; see the angle-handling note in
    the project docs).
    """
    m = (theta - alpha) % (math.pi / 2.0)
    dev = min(m, math.pi / 2.0 - m)
    return 1.0 - math.sin(dev)


def alignment_score(box: Box3D, xyz: np.ndarray, r: int = 7) -> float:
    """Alignment of the densest in-box region with the box heading.

    The densest cell of the r x r footprint grid plus its 8-neighborhood is
    selected; the principal direction of those points (leading eigenvector
    of their xy covariance) is compared with the heading. Fewer than two
    points, or zero spatial variance, is uninformative and scores 0.
    """
    counts, ci, cj, p = _box_grid_counts(box, xyz, r)
    if len(p) < 2 or counts.max() == 0:
        return 0.0
    flat = int(np.argmax(counts))  # ties: first cell in row-major order
    bi, bj = flat // r, flat % r
    region = (np.abs(ci - bi) <= 1) & (np.abs(cj - bj) <= 1)
    pts = p[region, :2]
    if len(pts) < 2:
        return 0.0
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    if float(np.trace(cov)) < 1e-18:
        return 0.0
    _, vecs = np.linalg.eigh(cov)
    v = vecs[:, -1]  # leading eigenvector
    theta = math.atan2(v[1], v[0])
    # p is already in the box frame, so the heading is at angle 0.
    return alignment_from_angles(0.0, theta)


def meta_shape_score(box: Box3D, meta: MetaShape, literal: bool = False) -> float:
    """Shape-prior score from the proportion divergence to the class prior.

    Any dimension at half or double the prior (or beyond) gates the score
    to 0. Inside the gate, both shapes are normalized to proportion vectors
    and their KL divergence D is mapped to 1 - min(cap, D) / cap, so a
    perfect proportion match scores 1. `literal` flips the mapping to
    min(cap, D) / cap (the uncorrected orientation) for comparison runs.
    """
    b = np.array([box.l, box.w, box.h])
    m = np.array([meta.l, meta.w, meta.h])
    if np.any(b <= 0.5 * m) or np.any(b >= 2.0 * m):
        return 0.0
    bp = b / b.sum()
    mp = m / m.sum()
    d = float(np.sum(mp * np.log(mp / bp)))
    capped = min(_SHAPE_DIVERGENCE_CAP, d) / _SHAPE_DIVERGENCE_CAP
    return capped if literal else 1.0 - capped


def validate_lambdas(lambdas: tuple[float, float, float]) -> None:
    if len(lambdas) != 3 or any(v < 0 for v in lambdas):
        raise ValueError("score weights must be three non-negative values")
    if abs(sum(lambdas) - 1.0) > 1e-9:
        raise ValueError(f"score weights must sum to 1, got {sum(lambdas)!r}")


def combine_scores(occ: float, alg: float, ms: float,
                   lambdas: tuple[float, float, float]) -> ScoreBreakdown:
    """Convex combination of the three sub-scores."""
    validate_lambdas(lambdas)
    msf = lambdas[0] * occ + lambdas[1] * alg + lambdas[2] * ms
    return ScoreBreakdown(occ, alg, ms, msf, tuple(lambdas))


def msf_score(box: Box3D, class_xyz: np.ndarray, meta: MetaShape,
              lambdas: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3),
              occ_r: int = 7, literal_shape: bool = False) -> ScoreBreakdown:
    """Full score breakdown of a box against its class's points."""
    occ = occupancy_score(box, class_xyz, occ_r)
    alg = alignment_score(box, class_xyz, occ_r)
    ms = meta_shape_score(box, meta, literal_shape)
    return combine_scores(occ, alg, ms, lambdas)


def label_weight(s_msf: float, theta_low: float = 0.4,
                 theta_high: float = 0.8) -> float:
    """Training weight from the combined score: 0 below theta_low, 1 above
    theta_high, linear in between."""
    if not (0.0 <= theta_low < theta_high <= 1.0):
        raise ValueError("thresholds must satisfy 0 <= theta_low < theta_high <= 1")
    if s_msf <= theta_low:
        return 0.0
    if s_msf >= theta_high:
        return 1.0
    return (s_msf - theta_low) / (theta_high - theta_low)


def selection_order(scores: list[ScoreBreakdown]) -> list[int]:
    """Candidate indices by descending msf, ties by descending occ then index."""
    return sorted(range(len(scores)),
                  key=lambda i: (-scores[i].msf, -scores[i].occ, i))


def nms_select(candidates: list[BoxCandidate], scores: list[ScoreBreakdown],
               iou_threshold: float, theta_low: float, theta_high: float,
               frame_id: int) -> list[PseudoLabel]:
    """Greedy per-class NMS keeping the best-scored non-overlapping boxes.

    A candidate is kept iff its BEV IoU with every already-kept box of the
    same class is below the threshold. Kept candidates become labels with
    their Eq-style training weight attached.
    """
    if len(candidates) != len(scores):
        raise ValueError("candidates and scores must align")
    kept: list[PseudoLabel] = []
    kept_boxes: dict[int, list[Box3D]] = {}
    for i in selection_order(scores):
        cand = candidates[i]
        boxes = kept_boxes.setdefault(cand.class_id, [])
        if any(bev_iou(cand.box, kb) >= iou_threshold for kb in boxes):
            continue
        boxes.append(cand.box)
        kept.append(PseudoLabel(
            box=cand.box, class_id=cand.class_id, scores=scores[i],
            weight=label_weight(scores[i].msf, theta_low, theta_high),
            source=SOURCE_INIT, frame_id=frame_id))
    return kept
