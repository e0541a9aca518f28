"""On-disk data model: points, poses, manifests, labels, predictions.

All formats are line-oriented text with LF endings, except the optional
binary points fast path. Numbers are written with enough digits for exact
or near-exact round-trips.

points (text)    one point per line: ``x y z class_id``
points (binary)  8-byte magic ``S2BPTS01`` then little-endian records of
                 3 float64 + 1 uint16
pose             three lines, each ``r_i0 r_i1 r_i2 t_i`` (rotation row
                 plus translation component)
labels           one box per line:
                 ``frame_id class_id cx cy cz l w h yaw occ alg ms msf
                 weight source``
predictions      one box per line:
                 ``frame_id class_id cx cy cz l w h yaw confidence``
manifest.json    frame order, timestamps, file names, class-name table

A dataset directory holds one sequence: ``manifest.json``, ``points/``,
``poses/`` and (for synthetic data) ``gt_labels/``.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np

from .aggregation import Frame
from .geometry import Box3D, PointCloud, Pose
from .refine import Prediction
from .scoring import PseudoLabel, ScoreBreakdown, label_weight

logger = logging.getLogger("sembox")

POINTS_MAGIC = b"S2BPTS01"
_POINT_RECORD = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("c", "<u2")])

LABEL_FIELDS = ("frame_id", "class_id", "cx", "cy", "cz", "l", "w", "h",
                "yaw", "occ", "alg", "ms", "msf", "weight", "source")
PREDICTION_FIELDS = ("frame_id", "class_id", "cx", "cy", "cz", "l", "w", "h",
                     "yaw", "confidence")


class FormatError(ValueError):
    """Malformed on-disk data."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# Points -----------------------------------------------------------------


def write_points_text(path: str | Path, cloud: PointCloud) -> None:
    lines = [
        f"{format(x, '.10g')} {format(y, '.10g')} {format(z, '.10g')} {c}"
        for (x, y, z), c in zip(cloud.xyz, cloud.class_id)
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def write_points_binary(path: str | Path, cloud: PointCloud) -> None:
    rec = np.empty(len(cloud), dtype=_POINT_RECORD)
    rec["x"], rec["y"], rec["z"] = cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]
    rec["c"] = cloud.class_id.astype(np.uint16)
    Path(path).write_bytes(POINTS_MAGIC + rec.tobytes())


def read_points(path: str | Path) -> PointCloud:
    """Read a points file, auto-detecting the binary magic."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:len(POINTS_MAGIC)] == POINTS_MAGIC:
        body = raw[len(POINTS_MAGIC):]
        if len(body) % _POINT_RECORD.itemsize != 0:
            raise FormatError(
                f"{path}: truncated binary points file at record "
                f"{len(body) // _POINT_RECORD.itemsize}")
        rec = np.frombuffer(body, dtype=_POINT_RECORD)
        xyz = np.column_stack([rec["x"], rec["y"], rec["z"]])
        return PointCloud(xyz, rec["c"].astype(np.int32))
    if bool(raw) and (raw[:1].isdigit() is False and raw[:1] not in b"-+. \n"):
        raise FormatError(f"{path}: unrecognized points file magic")
    rows = []
    cls = []
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        try:
            rows.append((float(parts[0]), float(parts[1]), float(parts[2])))
            cls.append(int(parts[3]))
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: {e}") from e
    xyz = np.array(rows, dtype=np.float64) if rows else np.zeros((0, 3))
    return PointCloud(xyz, np.array(cls, dtype=np.int32))


# Poses ------------------------------------------------------------------


def write_pose(path: str | Path, pose: Pose) -> None:
    lines = []
    for i in range(3):
        r = pose.rotation[i]
        lines.append(f"{_fmt(r[0])} {_fmt(r[1])} {_fmt(r[2])} {_fmt(pose.translation[i])}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose(path: str | Path) -> Pose:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if len(lines) != 3:
        raise FormatError(f"{path}: pose file must have 3 rows, got {len(lines)}")
    rot = np.zeros((3, 3))
    t = np.zeros(3)
    for i, line in enumerate(lines):
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}: pose row {i} must have 4 numbers")
        try:
            rot[i] = [float(v) for v in parts[:3]]
            t[i] = float(parts[3])
        except ValueError as e:
            raise FormatError(f"{path}: pose row {i}: {e}") from e
    try:
        return Pose(rot, t)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


# Labels and predictions --------------------------------------------------


def write_labels(path: str | Path, labels: list[PseudoLabel]) -> None:
    lines = []
    for lab in labels:
        b = lab.box
        s = lab.scores
        lines.append(" ".join([
            str(lab.frame_id), str(lab.class_id),
            _fmt(b.cx), _fmt(b.cy), _fmt(b.cz),
            _fmt(b.l), _fmt(b.w), _fmt(b.h), _fmt(b.yaw),
            _fmt(s.occ), _fmt(s.alg), _fmt(s.ms), _fmt(s.msf),
            _fmt(lab.weight), lab.source,
        ]))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_labels(path: str | Path,
                weight_thresholds: tuple[float, float] | None = None
                ) -> list[PseudoLabel]:
    """Read a labels file; optionally cross-check weights against scores.

    When thresholds are given, a stored weight inconsistent with the
    stored combined score raises a warning in the log but loads anyway.
    """
    path = Path(path)
    out: list[PseudoLabel] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != len(LABEL_FIELDS):
            missing = LABEL_FIELDS[min(len(parts), len(LABEL_FIELDS) - 1)]
            raise FormatError(
                f"{path}:{lineno}: expected {len(LABEL_FIELDS)} fields, got "
                f"{len(parts)} (first missing/broken field: {missing})")
        try:
            frame_id = int(parts[0])
            class_id = int(parts[1])
            nums = [float(v) for v in parts[2:14]]
            source = parts[14]
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: {e}") from e
        box = Box3D(*nums[0:7], class_id=class_id)
        scores = ScoreBreakdown(occ=nums[7], alg=nums[8], ms=nums[9], msf=nums[10])
        weight = nums[11]
        if weight_thresholds is not None:
            expect = label_weight(scores.msf, *weight_thresholds)
            if not math.isclose(weight, expect, abs_tol=1e-9):
                logger.warning(
                    "%s:%d: stored weight %.9g inconsistent with msf %.9g "
                    "(expected %.9g)", path, lineno, weight, scores.msf, expect)
        out.append(PseudoLabel(box, class_id, scores, weight, source, frame_id))
    return out


def write_predictions(path: str | Path, preds: list[Prediction]) -> None:
    lines = []
    for p in preds:
        b = p.box
        lines.append(" ".join([
            str(p.frame_id), str(p.class_id),
            _fmt(b.cx), _fmt(b.cy), _fmt(b.cz),
            _fmt(b.l), _fmt(b.w), _fmt(b.h), _fmt(b.yaw),
            _fmt(p.confidence),
        ]))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_predictions(path: str | Path) -> list[Prediction]:
    path = Path(path)
    out: list[Prediction] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != len(PREDICTION_FIELDS):
            missing = PREDICTION_FIELDS[min(len(parts), len(PREDICTION_FIELDS) - 1)]
            raise FormatError(
                f"{path}:{lineno}: expected {len(PREDICTION_FIELDS)} fields, got "
                f"{len(parts)} (first missing/broken field: {missing})")
        try:
            frame_id = int(parts[0])
            class_id = int(parts[1])
            nums = [float(v) for v in parts[2:10]]
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: {e}") from e
        box = Box3D(*nums[0:7], class_id=class_id)
        out.append(Prediction(box, class_id, nums[7], frame_id))
    return out


# Per-frame directories ----------------------------------------------------


def frame_file(frame_id: int, suffix: str) -> str:
    return f"frame_{frame_id:06d}{suffix}"


def write_box_dir(out_dir: str | Path, per_frame: dict,
                  kind: str = "labels") -> None:
    """Write one labels/predictions file per frame id."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    writer = write_labels if kind == "labels" else write_predictions
    for frame_id in sorted(per_frame):
        writer(out_dir / frame_file(frame_id, ".txt"), per_frame[frame_id])


def read_box_dir(dir_path: str | Path, kind: str = "labels",
                 weight_thresholds: tuple[float, float] | None = None) -> dict:
    dir_path = Path(dir_path)
    if not dir_path.is_dir():
        raise FormatError(f"{dir_path}: not a directory")
    out = {}
    for f in sorted(dir_path.glob("frame_*.txt")):
        frame_id = int(f.stem.split("_")[1])
        if kind == "labels":
            out[frame_id] = read_labels(f, weight_thresholds)
        else:
            out[frame_id] = read_predictions(f)
    return out


def write_retained_indices(out_dir: str | Path,
                           per_frame: dict[int, np.ndarray]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for frame_id in sorted(per_frame):
        idx = per_frame[frame_id]
        text = "\n".join(str(int(i)) for i in idx)
        (out_dir / frame_file(frame_id, ".txt")).write_text(
            text + ("\n" if len(idx) else ""))


# Dataset ------------------------------------------------------------------


def write_dataset(root: str | Path, frames: list[Frame],
                  class_names: dict[int, str],
                  gt: dict[int, list[Box3D]] | None = None,
                  points_format: str = "text") -> None:
    root = Path(root)
    (root / "points").mkdir(parents=True, exist_ok=True)
    (root / "poses").mkdir(parents=True, exist_ok=True)
    suffix = ".bin" if points_format == "binary" else ".txt"
    writer = write_points_binary if points_format == "binary" else write_points_text
    manifest = {
        "sequence": root.name,
        "classes": {"0": "background", **{str(k): v for k, v in sorted(class_names.items())}},
        "frames": [],
    }
    for fr in frames:
        pts_rel = f"points/{frame_file(fr.frame_id, suffix)}"
        pose_rel = f"poses/{frame_file(fr.frame_id, '.txt')}"
        writer(root / pts_rel, fr.points)
        write_pose(root / pose_rel, fr.pose)
        manifest["frames"].append({
            "frame_id": fr.frame_id,
            "timestamp": fr.timestamp,
            "points": pts_rel,
            "pose": pose_rel,
        })
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if gt is not None:
        gt_labels = {
            fid: [
                PseudoLabel(box, box.class_id,
                            ScoreBreakdown(1.0, 1.0, 1.0, 1.0), 1.0, "init", fid)
                for box in boxes
            ]
            for fid, boxes in gt.items()
        }
        write_box_dir(root / "gt_labels", gt_labels, kind="labels")


def load_dataset(root: str | Path) -> tuple[list[Frame], dict[int, str]]:
    """Load a sequence directory; returns frames (sorted) and class table."""
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise FormatError(f"{root}: not a sequence directory (manifest.json missing)")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{manifest_path}: invalid JSON: {e}") from e
    for key in ("frames", "classes"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: missing {key!r}")
    classes = {int(k): str(v) for k, v in manifest["classes"].items()}
    num_classes = max(classes) if classes else 0

    frames: list[Frame] = []
    seen = set()
    for entry in manifest["frames"]:
        fid = int(entry["frame_id"])
        if fid in seen:
            raise FormatError(f"{manifest_path}: duplicate frame_id {fid}")
        seen.add(fid)
        pts_path = root / entry["points"]
        pose_path = root / entry["pose"]
        if not pts_path.is_file():
            raise FormatError(f"{manifest_path}: frame {fid}: missing {pts_path}")
        cloud = read_points(pts_path)
        try:
            cloud.validate(num_classes)
        except ValueError as e:
            raise FormatError(f"{pts_path}: {e}") from e
        pose = read_pose(pose_path) if pose_path.is_file() else None
        frames.append(Frame(fid, float(entry.get("timestamp", 0.0)), pose, cloud))
    frames.sort(key=lambda f: f.frame_id)
    ids = [f.frame_id for f in frames]
    if any(b <= a for a, b in zip(ids, ids[1:])):
        raise FormatError(f"{manifest_path}: frame ids must be strictly increasing")
    return frames, classes
