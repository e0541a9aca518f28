"""Multi-frame aggregation with motion-artifact removal.

A window of consecutive frames is registered into the target frame's
coordinates and BEV space is classified by how long each cell stays
continuously occupied by foreground points: short maximal runs mean a
moving object passed through, long runs mean static structure. Foreground
points from non-target frames are dropped wherever motion was detected,
so the aggregated cloud densifies static objects without smearing moving
ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BevGridSpec, PointCloud, Pose, grid_indices

CELL_EMPTY = 0
CELL_STATIC = 1
CELL_MOVING = 2


@dataclass
class Frame:
    """One LiDAR sweep: sensor-coordinate points plus the pose to global."""

    frame_id: int
    timestamp: float
    pose: Pose | None
    points: PointCloud


@dataclass
class MotionGrid:
    """BEV occupancy-run classification into static/moving/empty cells."""

    spec: BevGridSpec
    max_run: np.ndarray  # (nx, ny) int16: longest consecutive occupied run
    label: np.ndarray  # (nx, ny) uint8: CELL_* constants
    epsilon: int

    def cell_label(self, x: float, y: float) -> int:
        """Label of the cell containing (x, y); EMPTY when off-grid."""
        i = math.floor((x - self.spec.x0) / self.spec.cell_size)
        j = math.floor((y - self.spec.y0) / self.spec.cell_size)
        if 0 <= i < self.spec.nx and 0 <= j < self.spec.ny:
            return int(self.label[i, j])
        return CELL_EMPTY


@dataclass
class DenseCloud:
    """Aggregated multi-frame cloud in the target frame's coordinates."""

    target_frame_id: int
    points: PointCloud  # frame_index tags the source frame offset


def default_epsilon(window_len: int) -> int:
    """Run-length threshold scaled to the window: ceil(0.6 * window_len)."""
    return int(math.ceil(0.6 * window_len))


def register_window(frames: list[Frame], target_index: int) -> list[PointCloud]:
    """Transform each frame's points into the target frame's coordinates.

    The returned clouds carry frame_index = own index - target index.
    Raises when any frame in the window has no pose.
    """
    if not frames:
        raise ValueError("empty aggregation window")
    if not (0 <= target_index < len(frames)):
        raise ValueError("target_index outside the window")
    for f in frames:
        if f.pose is None:
            raise ValueError(f"missing pose for frame {f.frame_id}")
    to_target = frames[target_index].pose.inverse()
    out = []
    for k, f in enumerate(frames):
        moved = f.points.transformed(to_target.compose(f.pose))
        moved = PointCloud(
            moved.xyz, moved.class_id,
            np.full(len(moved), k - target_index, dtype=np.int32))
        out.append(moved)
    return out


def build_motion_grid(registered: list[PointCloud], spec: BevGridSpec,
                      epsilon: int) -> MotionGrid:
    """Classify BEV cells by their maximal consecutive foreground run.

    For each cell the longest run of consecutive frames with at least one
    foreground point inside is counted; cells with a run >= epsilon are
    static, ever-occupied cells below it are moving, the rest empty.
    """
    if not registered:
        raise ValueError("empty aggregation window")
    if epsilon < 1:
        raise ValueError("epsilon must be >= 1")

    max_run = np.zeros((spec.nx, spec.ny), dtype=np.int16)
    run = np.zeros((spec.nx, spec.ny), dtype=np.int16)
    ever = np.zeros((spec.nx, spec.ny), dtype=bool)
    for cloud in registered:
        occ = np.zeros((spec.nx, spec.ny), dtype=bool)
        fg = cloud.foreground
        if fg.any():
            ij = grid_indices(cloud.xyz[fg, :2], spec)
            ij = ij[ij[:, 0] >= 0]
            occ[ij[:, 0], ij[:, 1]] = True
        run = np.where(occ, run + 1, 0).astype(np.int16)
        np.maximum(max_run, run, out=max_run)
        ever |= occ

    label = np.zeros((spec.nx, spec.ny), dtype=np.uint8)
    label[ever] = CELL_MOVING
    label[max_run >= epsilon] = CELL_STATIC
    return MotionGrid(spec, max_run, label, epsilon)


def build_dense_cloud(registered: list[PointCloud], grid: MotionGrid,
                      target_frame_id: int) -> DenseCloud:
    """Aggregate the registered window, dropping motion artifacts.

    Every point of the target frame is kept. For other frames, foreground
    points falling in moving cells are removed; background points (and
    points outside the grid, which carry no motion evidence) are kept with
    their class so semantic checks downstream can see them.
    """
    if not registered:
        raise ValueError("empty aggregation window")
    kept = []
    for cloud in registered:
        if len(cloud) == 0:
            continue
        if cloud.frame_index[0] == 0:
            kept.append(cloud)
            continue
        fg = cloud.foreground
        drop = np.zeros(len(cloud), dtype=bool)
        if fg.any():
            ij = grid_indices(cloud.xyz[fg, :2], grid.spec)
            on_grid = ij[:, 0] >= 0
            moving = np.zeros(int(fg.sum()), dtype=bool)
            moving[on_grid] = grid.label[ij[on_grid, 0], ij[on_grid, 1]] == CELL_MOVING
            drop[np.flatnonzero(fg)[moving]] = True
        kept.append(cloud.select(~drop))
    return DenseCloud(target_frame_id, PointCloud.concatenate(kept))
