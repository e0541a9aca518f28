"""End-to-end pseudo-label generation over a sequence.

Each frame is processed from its own aggregation window, so frames are
independent work units. Parallel runs use forked worker processes that
inherit the loaded sequence, keeping per-task overhead at a frame index in
and a small label list out; results are ordered by frame id, so output is
identical to a sequential run.
"""

from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .aggregation import (Frame, build_dense_cloud, build_motion_grid,
                          register_window)
from .clustering import multi_scale_cluster
from .config import PipelineConfig
from .geometry import BevGridSpec
from .scoring import PseudoLabel, msf_score, nms_select

THREADS_ENV_VAR = "SEMBOX_THREADS"


def resolve_threads(cli_value: int | None) -> int:
    """Thread count precedence: explicit CLI value, env override, all cores."""
    if cli_value is not None:
        return max(1, cli_value)
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {env!r}")
    return os.cpu_count() or 1


def label_sort_key(lab: PseudoLabel):
    return (lab.class_id, -lab.scores.msf, lab.box.cx, lab.box.cy,
            lab.box.cz, lab.box.yaw)


def process_frame(frames: list[Frame], index: int,
                  config: PipelineConfig) -> list[PseudoLabel]:
    """Generate pseudo-labels for frames[index] from its aggregation window."""
    n = config.window_half_size
    lo = max(0, index - n)
    hi = min(len(frames), index + n + 1)
    window = frames[lo:hi]
    registered = register_window(window, index - lo)

    spec = BevGridSpec.centered(config.detection_range, config.cell_size)
    epsilon = config.effective_epsilon(len(window))
    grid = build_motion_grid(registered, spec, epsilon)
    dense = build_dense_cloud(registered, grid, frames[index].frame_id)

    candidates = multi_scale_cluster(dense.points, config.cluster_params(),
                                     config.yaw_step_deg, config.fit_criterion)
    class_xyz = {
        cid: dense.points.xyz[dense.points.class_id == cid]
        for cid in sorted({c.class_id for c in candidates})
    }
    scores = [
        msf_score(c.box, class_xyz[c.class_id], config.meta_shape(c.class_id),
                  config.lambdas, config.occ_grid_r, config.shape_score_literal)
        for c in candidates
    ]
    labels = nms_select(candidates, scores, config.nms_iou_threshold,
                        config.theta_low, config.theta_high,
                        frames[index].frame_id)
    labels.sort(key=label_sort_key)
    return labels


# Forked workers read the active job from module state inherited from the
# parent; only the frame index crosses the process boundary per task.
_ACTIVE: tuple[list[Frame], PipelineConfig] | None = None


def _worker(index: int) -> tuple[int, list[PseudoLabel]]:
    frames, config = _ACTIVE
    return index, process_frame(frames, index, config)


def _init_active(frames: list[Frame], config: PipelineConfig) -> None:
    global _ACTIVE
    _ACTIVE = (frames, config)


def generate_labels(frames: list[Frame], config: PipelineConfig,
                    threads: int = 1) -> dict[int, list[PseudoLabel]]:
    """Pseudo-labels for every frame of the sequence, keyed by frame id."""
    if not frames:
        raise ValueError("empty sequence")
    indices = list(range(len(frames)))
    if threads <= 1 or len(frames) == 1:
        return {frames[i].frame_id: process_frame(frames, i, config)
                for i in indices}

    global _ACTIVE
    _ACTIVE = (frames, config)
    try:
        if "fork" in multiprocessing.get_all_start_methods():
            ctx = multiprocessing.get_context("fork")
            pool = ProcessPoolExecutor(max_workers=threads, mp_context=ctx)
        else:
            pool = ProcessPoolExecutor(
                max_workers=threads, initializer=_init_active,
                initargs=(frames, config))
        with pool:
            results = dict(pool.map(_worker, indices))
    finally:
        _ACTIVE = None
    return {frames[i].frame_id: results[i] for i in indices}


def summarize_labels(labels: dict[int, list[PseudoLabel]]) -> dict:
    """Run summary: counts and a decile histogram of combined scores."""
    all_scores = [lab.scores.msf for labs in labels.values() for lab in labs]
    hist, _ = np.histogram(all_scores, bins=10, range=(0.0, 1.0))
    return {
        "frames": len(labels),
        "labels_total": int(sum(len(v) for v in labels.values())),
        "labels_per_frame": {str(fid): len(labels[fid]) for fid in sorted(labels)},
        "msf_histogram": {
            "bin_edges": [round(0.1 * k, 1) for k in range(11)],
            "counts": [int(c) for c in hist],
        },
    }
