"""Label quality metrics against ground truth.

Recall/precision are computed at several 3D IoU thresholds with
independent greedy score-ordered one-to-one matching per threshold. Error
analysis (IoU histogram, size/position/yaw MAE by ego distance) uses a
separate any-overlap matching so that poorly fitting boxes contribute
their errors instead of silently dropping out.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Box3D, iou_3d, orientation_distance

# Matching floor for the error-analysis pass: any positive overlap pairs.
_ANALYSIS_IOU = 1e-9

_HIST_BINS = 20


@dataclass
class MatchResult:
    """One-to-one label->gt assignment at a given IoU threshold."""

    pairs: list[tuple[int, int, float]]  # (label index, gt index, iou)
    unmatched_labels: list[int]
    unmatched_gts: list[int]


def match_labels(boxes: list[Box3D], scores: list[float], gts: list[Box3D],
                 iou_threshold: float, class_agnostic: bool = False) -> MatchResult:
    """Greedy matching: labels by descending score claim their best gt.

    Each label takes the unclaimed ground-truth box of the same class (or
    any class in agnostic mode) with the highest 3D IoU at or above the
    threshold. Ties are deterministic: score ties by label index, IoU ties
    by ground-truth index.
    """
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    claimed = set()
    pairs: list[tuple[int, int, float]] = []
    unmatched_labels: list[int] = []
    for i in order:
        best_j, best_iou = -1, -1.0
        for j, gt in enumerate(gts):
            if j in claimed:
                continue
            if not class_agnostic and gt.class_id != boxes[i].class_id:
                continue
            v = iou_3d(boxes[i], gt)
            if v >= iou_threshold and v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0:
            claimed.add(best_j)
            pairs.append((i, best_j, best_iou))
        else:
            unmatched_labels.append(i)
    unmatched_gts = [j for j in range(len(gts)) if j not in claimed]
    pairs.sort()
    return MatchResult(pairs, sorted(unmatched_labels), unmatched_gts)


@dataclass
class PRCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def recall(self) -> float | None:
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def precision(self) -> float | None:
        d = self.tp + self.fp
        return self.tp / d if d else None

    def add(self, other: "PRCounts") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn


@dataclass
class RangeBinErrors:
    lo: float
    hi: float  # math.inf for the open last bin
    count: int = 0
    position_abs: float = 0.0
    size_abs: float = 0.0
    yaw_abs: float = 0.0

    def mae(self) -> tuple[float | None, float | None, float | None]:
        if self.count == 0:
            return (None, None, None)
        return (self.position_abs / self.count, self.size_abs / self.count,
                self.yaw_abs / self.count)


@dataclass
class EvalReport:
    thresholds: tuple[float, ...]
    # per threshold: {"overall": PRCounts, class_id: PRCounts}
    counts: dict[float, dict] = field(default_factory=dict)
    iou_histogram: np.ndarray = field(
        default_factory=lambda: np.zeros(_HIST_BINS, dtype=np.int64))
    range_bins: list[RangeBinErrors] = field(default_factory=list)
    n_frames: int = 0
    n_labels: int = 0
    n_gts: int = 0

    def to_dict(self) -> dict:
        per_threshold = {}
        for thr in self.thresholds:
            entry = {}
            for key, pc in self.counts[thr].items():
                entry[str(key)] = {
                    "tp": pc.tp, "fp": pc.fp, "fn": pc.fn,
                    "recall": pc.recall, "precision": pc.precision,
                }
            per_threshold[f"{thr:g}"] = entry
        edges = np.linspace(0.0, 1.0, _HIST_BINS + 1)
        bins = []
        for rb in self.range_bins:
            pos, size, yaw = rb.mae()
            bins.append({
                "range_lo": rb.lo,
                "range_hi": None if math.isinf(rb.hi) else rb.hi,
                "count": rb.count,
                "position_mae": pos, "size_mae": size, "yaw_mae": yaw,
            })
        return {
            "counts": {"frames": self.n_frames, "labels": self.n_labels,
                       "gts": self.n_gts},
            "per_threshold": per_threshold,
            "iou_histogram": {
                "bin_edges": [float(e) for e in edges],
                "counts": [int(c) for c in self.iou_histogram],
            },
            "mae_by_range": bins,
        }


def _folded_yaw_error(a: float, b: float) -> float:
    return orientation_distance(a, b)


def compute_report(per_frame: list[tuple[list[Box3D], list[float], list[Box3D]]],
                   thresholds: tuple[float, ...] = (0.3, 0.5, 0.7),
                   range_bin_edges: tuple[float, ...] = (0.0, 30.0, 50.0),
                   class_agnostic: bool = False) -> EvalReport:
    """Aggregate metrics over (labels, scores, gts) triples, one per frame.

    Position error is the BEV center distance, size error the mean of the
    absolute extent differences, yaw error the orientation distance (folded
    modulo pi). Errors are binned by the ground-truth center's distance
    from the sensor origin.
    """
    report = EvalReport(thresholds=tuple(thresholds))
    for thr in thresholds:
        report.counts[thr] = {"overall": PRCounts()}
    edges = list(range_bin_edges) + [math.inf]
    report.range_bins = [RangeBinErrors(edges[i], edges[i + 1])
                         for i in range(len(range_bin_edges))]

    for boxes, scores, gts in per_frame:
        report.n_frames += 1
        report.n_labels += len(boxes)
        report.n_gts += len(gts)
        class_ids = sorted({b.class_id for b in boxes} | {g.class_id for g in gts})
        for thr in thresholds:
            m = match_labels(boxes, scores, gts, thr, class_agnostic)
            matched_labels = {i for i, _, _ in m.pairs}
            matched_gts = {j for _, j, _ in m.pairs}
            bucket = report.counts[thr]
            bucket["overall"].add(PRCounts(
                tp=len(m.pairs),
                fp=len(boxes) - len(matched_labels),
                fn=len(gts) - len(matched_gts)))
            for cid in class_ids:
                pc = bucket.setdefault(cid, PRCounts())
                tp = sum(1 for i, j, _ in m.pairs if gts[j].class_id == cid)
                fp = sum(1 for i in range(len(boxes))
                         if i not in matched_labels and boxes[i].class_id == cid)
                fn = sum(1 for j in range(len(gts))
                         if j not in matched_gts and gts[j].class_id == cid)
                pc.add(PRCounts(tp, fp, fn))

        analysis = match_labels(boxes, scores, gts, _ANALYSIS_IOU, class_agnostic)
        for i, j, iou in analysis.pairs:
            b, g = boxes[i], gts[j]
            k = min(int(iou * _HIST_BINS), _HIST_BINS - 1)
            report.iou_histogram[k] += 1
            dist = math.hypot(g.cx, g.cy)
            rb = report.range_bins[-1]
            for cand in report.range_bins:
                if cand.lo <= dist < cand.hi:
                    rb = cand
                    break
            rb.count += 1
            rb.position_abs += math.hypot(b.cx - g.cx, b.cy - g.cy)
            rb.size_abs += (abs(b.l - g.l) + abs(b.w - g.w) + abs(b.h - g.h)) / 3.0
            rb.yaw_abs += _folded_yaw_error(b.yaw, g.yaw)
    return report


def write_report(report: EvalReport, json_path: str | Path) -> None:
    """Write the JSON report plus flat CSV side files for plotting."""
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")

    stem = json_path.with_suffix("")
    with open(f"{stem}_metrics.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["class", "iou_threshold", "tp", "fp", "fn",
                     "recall", "precision"])
        for thr in report.thresholds:
            for key in sorted(report.counts[thr], key=str):
                pc = report.counts[thr][key]
                wr.writerow([key, f"{thr:g}", pc.tp, pc.fp, pc.fn,
                             _csv_num(pc.recall), _csv_num(pc.precision)])
    edges = np.linspace(0.0, 1.0, _HIST_BINS + 1)
    with open(f"{stem}_iou_histogram.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["bin_lo", "bin_hi", "count"])
        for k in range(_HIST_BINS):
            wr.writerow([f"{edges[k]:g}", f"{edges[k + 1]:g}",
                         int(report.iou_histogram[k])])
    with open(f"{stem}_mae_by_range.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["range_lo", "range_hi", "count",
                     "position_mae", "size_mae", "yaw_mae"])
        for rb in report.range_bins:
            pos, size, yaw = rb.mae()
            wr.writerow([f"{rb.lo:g}",
                         "" if math.isinf(rb.hi) else f"{rb.hi:g}",
                         rb.count, _csv_num(pos), _csv_num(size), _csv_num(yaw)])


def _csv_num(v: float | None) -> str:
    return "nan" if v is None else f"{v:.6f}"
