"""Density clustering of foreground points and oriented-box fitting.

Proposals are generated per class at several clustering radii: a small
radius separates adjacent objects, a large one bridges gaps in truncated
or sparse objects. All resulting candidates are pooled; score-based
selection downstream keeps the best per instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Box3D, PointCloud

# Absolute safety margin added to fitted spans so that cluster points stay
# inside the box under floating-point round-trip, not a geometric padding.
_SPAN_GUARD = 1e-9

# Spans below this are inflated to keep fitted boxes non-degenerate.
_SPAN_FLOOR = 1e-3


@dataclass(frozen=True)
class ClusterParams:
    """Per-class clustering configuration.

    radii must be positive, strictly ascending and free of duplicates;
    min_pts is the DBSCAN core threshold (neighborhood size including the
    point itself); clusters smaller than min_cluster_size are discarded.
    """

    radii: tuple[float, ...]
    min_pts: int = 5
    min_cluster_size: int = 5

    def __post_init__(self) -> None:
        if not self.radii:
            raise ValueError("radii must be non-empty")
        if any(r <= 0 for r in self.radii):
            raise ValueError("radii must be > 0")
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise ValueError("radii must be strictly ascending without duplicates")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        if self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be >= 1")


@dataclass(frozen=True)
class BoxCandidate:
    """A fitted proposal plus its provenance in the dense cloud."""

    box: Box3D
    radius_used: float
    cluster_point_indices: np.ndarray  # indices into the dense cloud
    class_id: int


class _CellGrid:
    """Points bucketed into square cells of side eps / sqrt(d).

    The side is chosen so that any two points sharing a cell are within eps
    of each other (the cell diagonal is exactly eps), and any two points
    within eps sit in cells no more than 2 apart per axis.
    """

    def __init__(self, pts: np.ndarray, eps: float):
        n, d = pts.shape
        self.pts = pts
        self.eps = eps
        side = eps / math.sqrt(d)
        ij = np.floor(pts / side).astype(np.int64)
        ij -= ij.min(axis=0)
        strides = np.cumprod([1, *(ij.max(axis=0) + 1)][:d])
        keys = ij @ strides
        order = np.argsort(keys, kind="stable")
        sorted_keys = keys[order]
        first = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
        self.order = order  # point indices grouped by cell
        self.starts = np.r_[first, n]  # group k is order[starts[k]:starts[k+1]]
        self.cell_of = np.empty(n, dtype=np.int64)
        self.cell_of[order] = np.repeat(np.arange(len(first)), np.diff(self.starts))
        self.coords = ij[order[first]]  # (ncells, d) integer cell coordinates
        self.lookup = {tuple(c): k for k, c in enumerate(self.coords)}
        self.pop = np.diff(self.starts)
        self.reach = math.ceil(math.sqrt(d))  # cells per axis covering eps

    def members(self, cell: int) -> np.ndarray:
        return self.order[self.starts[cell]:self.starts[cell + 1]]

    def neighbor_cells(self, cell: int, include_self: bool = True) -> list[int]:
        """Existing cells within Chebyshev distance `reach` of this cell."""
        base = self.coords[cell]
        out = []
        for off in np.ndindex(*(2 * self.reach + 1,) * base.shape[0]):
            delta = np.array(off) - self.reach
            if not include_self and not delta.any():
                continue
            hit = self.lookup.get(tuple(base + delta))
            if hit is not None:
                out.append(hit)
        return out


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN cluster labels per point; -1 marks noise.

    Semantics: a point is core when its eps-neighborhood (inclusive,
    counting itself) holds at least min_pts points; clusters are maximal
    density-connected sets of cores; a border point joins the cluster of
    its nearest core within eps (exact ties to the smaller cluster id), a
    distance-based rule that keeps the partition invariant under input
    permutation. Cluster ids follow each component's smallest point index.

    Grid-accelerated exact implementation: cells whose population reaches
    min_pts are wholly core (their diagonal is eps); sparse cells are
    checked against their 5x5 neighborhood; clusters are connected
    components of core cells, with cell pairs linked when their closest
    core points are within eps.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be a 2D array of positions")
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels

    grid = _CellGrid(pts, eps)
    eps2 = eps * eps

    core = np.zeros(n, dtype=bool)
    dense_cells = np.flatnonzero(grid.pop >= min_pts)
    for cell in dense_cells:
        core[grid.members(cell)] = True
    for cell in np.flatnonzero(grid.pop < min_pts):
        cand = np.concatenate([grid.members(c)
                               for c in grid.neighbor_cells(cell)])
        mine = grid.members(cell)
        d2 = ((pts[mine, None, :] - pts[cand][None, :, :]) ** 2).sum(-1)
        core[mine] = (d2 <= eps2).sum(axis=1) >= min_pts

    if not core.any():
        return labels

    # Union-find over cells that contain core points.
    has_core = np.bincount(grid.cell_of, weights=core,
                           minlength=len(grid.pop)) > 0
    core_cells = np.flatnonzero(has_core)
    parent = {int(c): int(c) for c in core_cells}

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    core_members = {int(c): grid.members(c)[core[grid.members(c)]]
                    for c in core_cells}
    for c in core_cells:
        c = int(c)
        for m in grid.neighbor_cells(c, include_self=False):
            if m <= c or m not in parent:
                continue
            ra, rb = find(c), find(m)
            if ra == rb:
                continue  # already hooked together through other cells
            if _sets_within(pts, core_members[c], core_members[m], eps2):
                parent[max(ra, rb)] = min(ra, rb)

    # Components numbered by their smallest core point index: the order in
    # which ascending-seed expansion would discover them.
    comp_points: dict[int, list[np.ndarray]] = {}
    for c in core_cells:
        comp_points.setdefault(find(int(c)), []).append(core_members[int(c)])
    comp_min = {root: min(m.min() for m in members)
                for root, members in comp_points.items()}
    cluster_of_root = {root: k for k, root in
                       enumerate(sorted(comp_min, key=comp_min.get))}
    for root, members in comp_points.items():
        labels[np.concatenate(members)] = cluster_of_root[root]

    # Border points: non-core, adopted by the cluster of their nearest
    # core within eps (exact ties to the smaller cluster id); else noise.
    border = ~core
    for cell in np.unique(grid.cell_of[border]):
        mine = grid.members(cell)
        mine = mine[border[mine]]
        cand = [core_members[c] for c in grid.neighbor_cells(int(cell))
                if c in core_members]
        if not cand:
            continue
        cand = np.concatenate(cand)
        d2 = ((pts[mine, None, :] - pts[cand][None, :, :]) ** 2).sum(-1)
        cand_labels = labels[cand]
        for row, j in enumerate(mine):
            valid = d2[row] <= eps2
            if valid.any():
                pick = np.lexsort((cand_labels[valid], d2[row][valid]))[0]
                labels[j] = cand_labels[valid][pick]
    return labels


_FAST_PAIR_K = 48


def _sets_within(pts: np.ndarray, a: np.ndarray, b: np.ndarray,
                 eps2: float) -> bool:
    """True iff some point of `a` is within sqrt(eps2) of some point of `b`.

    Fast path checks only the points of each set that are extreme along the
    direction joining the set means; a hit there is conclusive, a miss
    falls back to the exact full product.
    """
    pa, pb = pts[a], pts[b]
    if len(a) * len(b) > _FAST_PAIR_K * _FAST_PAIR_K:
        u = pb.mean(axis=0) - pa.mean(axis=0)
        sa = pa @ u
        sb = pb @ u
        ka = np.argpartition(sa, -min(_FAST_PAIR_K, len(sa)))[-_FAST_PAIR_K:] \
            if len(sa) > _FAST_PAIR_K else np.arange(len(sa))
        kb = np.argpartition(sb, min(_FAST_PAIR_K, len(sb)) - 1)[:_FAST_PAIR_K] \
            if len(sb) > _FAST_PAIR_K else np.arange(len(sb))
        d2 = ((pa[ka, None, :] - pb[kb][None, :, :]) ** 2).sum(-1)
        if (d2 <= eps2).any():
            return True
    d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1)
    return bool((d2 <= eps2).any())


# Distance floor for the closeness criterion: points closer to an edge
# than this count as on it, capping their vote.
_CLOSENESS_FLOOR = 0.01


def fit_box(xyz: np.ndarray, class_id: int, yaw_step_deg: float = 1.0,
            criterion: str = "area") -> Box3D:
    """Fit an oriented box to a cluster by exhaustive yaw search.

    The yaw is searched over [0, 90) degrees at the given step: for each
    angle the points are rotated into the candidate frame and the
    axis-aligned BEV rectangle measured. With criterion "area" the
    smallest-area rotation wins; with "closeness" the rotation whose
    points hug the rectangle edges most tightly wins (sum of inverse
    point-to-nearest-edge distances), which is markedly more stable for
    sparse surface returns where the area landscape is nearly flat. Ties
    go to the smaller yaw. Extents are the min/max spans (no padding),
    height and vertical center come from the z range, and the result is
    canonical (l >= w). All input points are inside the returned box.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    if len(xyz) == 0:
        raise ValueError("cannot fit a box to an empty cluster")
    if yaw_step_deg <= 0:
        raise ValueError("yaw_step_deg must be > 0")
    if criterion not in ("area", "closeness"):
        raise ValueError(f"unknown fit criterion {criterion!r}")

    angles = np.deg2rad(np.arange(0.0, 90.0, yaw_step_deg))
    c, s = np.cos(angles), np.sin(angles)
    x, y = xyz[:, 0:1], xyz[:, 1:2]
    # Coordinates of every point in every candidate frame, shape (N, A).
    u = x * c + y * s
    v = -x * s + y * c
    u_min, u_max = u.min(axis=0), u.max(axis=0)
    v_min, v_max = v.min(axis=0), v.max(axis=0)
    if criterion == "area":
        areas = (u_max - u_min) * (v_max - v_min)
        best = int(np.argmin(areas))
    else:
        edge = np.minimum(np.minimum(u - u_min, u_max - u),
                          np.minimum(v - v_min, v_max - v))
        score = (1.0 / np.maximum(edge, _CLOSENESS_FLOOR)).sum(axis=0)
        best = int(np.argmax(score))

    span_u = max(float(u_max[best] - u_min[best]), _SPAN_FLOOR) + 2 * _SPAN_GUARD
    span_v = max(float(v_max[best] - v_min[best]), _SPAN_FLOOR) + 2 * _SPAN_GUARD
    mid_u = (u_max[best] + u_min[best]) / 2.0
    mid_v = (v_max[best] + v_min[best]) / 2.0
    yaw = float(angles[best])
    cb, sb = math.cos(yaw), math.sin(yaw)
    cx = cb * mid_u - sb * mid_v
    cy = sb * mid_u + cb * mid_v

    z_min, z_max = float(xyz[:, 2].min()), float(xyz[:, 2].max())
    h = max(z_max - z_min, _SPAN_FLOOR) + 2 * _SPAN_GUARD
    cz = (z_min + z_max) / 2.0
    return Box3D(cx, cy, cz, span_u, span_v, h, yaw, class_id)


def multi_scale_cluster(dense: PointCloud, params: dict[int, ClusterParams],
                        yaw_step_deg: float = 1.0,
                        fit_criterion: str = "area") -> list[BoxCandidate]:
    """Cluster each class at every candidate radius and fit all proposals.

    Clustering distance is BEV (xy only). The union of per-radius fits is
    returned; every candidate records the radius that produced it and the
    dense-cloud indices of its cluster.
    """
    candidates: list[BoxCandidate] = []
    for class_id in sorted(params):
        p = params[class_id]
        sel = np.flatnonzero(dense.class_id == class_id)
        if len(sel) == 0:
            continue
        xy = dense.xyz[sel, :2]
        for radius in p.radii:
            labels = dbscan(xy, eps=radius, min_pts=p.min_pts)
            n_clusters = int(labels.max()) + 1 if len(labels) else 0
            for k in range(n_clusters):
                member = labels == k
                if int(member.sum()) < p.min_cluster_size:
                    continue
                idx = sel[member]
                box = fit_box(dense.xyz[idx], class_id, yaw_step_deg,
                              fit_criterion)
                candidates.append(BoxCandidate(box, radius, idx, class_id))
    return candidates
