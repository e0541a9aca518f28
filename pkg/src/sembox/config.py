"""Pipeline configuration: one validated document for ~20 coupled tunables.

Defaults reproduce the published operating point where one exists (score
grid resolution 7, equal score weights, weight thresholds 0.4/0.8); the
remaining values (clustering radii, cell size, window size, shape priors,
NMS threshold) are documented project defaults, not published ones.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .clustering import ClusterParams
from .scoring import MetaShape


class ConfigError(ValueError):
    """Invalid configuration; message names the offending field."""


@dataclass(frozen=True)
class ClassConfig:
    """Per-class knobs: clustering radii, cluster floor, shape prior."""

    name: str
    radii: tuple[float, ...]
    min_cluster_size: int
    meta_shape: tuple[float, float, float]


def _default_classes() -> dict[int, ClassConfig]:
    return {
        1: ClassConfig("vehicle", (0.4, 0.7, 1.0, 1.5), 10, (4.6, 1.8, 1.6)),
        2: ClassConfig("pedestrian", (0.2, 0.35, 0.5), 5, (0.8, 0.8, 1.7)),
        3: ClassConfig("cyclist", (0.3, 0.5, 0.8), 5, (1.8, 0.6, 1.7)),
    }


@dataclass(frozen=True)
class PipelineConfig:
    window_half_size: int = 5
    epsilon: int | None = None  # None: ceil(0.6 * actual window length)
    cell_size: float = 0.3
    detection_range: float = 80.0
    min_pts: int = 5
    yaw_step_deg: float = 1.0
    fit_criterion: str = "area"  # or "closeness"; see clustering.fit_box
    occ_grid_r: int = 7
    lambdas: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    nms_iou_threshold: float = 0.2
    theta_low: float = 0.4
    theta_high: float = 0.8
    scf_min_points: int = 3
    scf_min_fraction: float = 0.05
    confidence_floor: float = 0.3
    shape_score_literal: bool = False
    range_bin_edges: tuple[float, ...] = (0.0, 30.0, 50.0)
    eval_iou_thresholds: tuple[float, ...] = (0.3, 0.5, 0.7)
    class_agnostic_eval: bool = False
    seed: int = 0
    classes: dict[int, ClassConfig] = field(default_factory=_default_classes)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.window_half_size < 0:
            raise ConfigError("window_half_size: must be >= 0")
        if self.epsilon is not None and self.epsilon < 1:
            raise ConfigError("epsilon: must be >= 1 when set")
        if self.cell_size <= 0:
            raise ConfigError("cell_size: must be > 0")
        if self.detection_range <= 0:
            raise ConfigError("detection_range: must be > 0")
        if self.min_pts < 1:
            raise ConfigError("min_pts: must be >= 1")
        if self.yaw_step_deg <= 0 or self.yaw_step_deg > 90:
            raise ConfigError("yaw_step_deg: must be in (0, 90]")
        if self.fit_criterion not in ("area", "closeness"):
            raise ConfigError("fit_criterion: must be 'area' or 'closeness'")
        if self.occ_grid_r < 1:
            raise ConfigError("occ_grid_r: must be >= 1")
        if len(self.lambdas) != 3 or any(v < 0 for v in self.lambdas):
            raise ConfigError("lambdas: must be three non-negative values")
        if abs(sum(self.lambdas) - 1.0) > 1e-9:
            raise ConfigError(f"lambdas: must sum to 1, got {sum(self.lambdas)!r}")
        if not (0.0 <= self.nms_iou_threshold <= 1.0):
            raise ConfigError("nms_iou_threshold: must be in [0, 1]")
        if not (0.0 <= self.theta_low < self.theta_high <= 1.0):
            raise ConfigError("theta_low/theta_high: need 0 <= low < high <= 1")
        if self.scf_min_points < 1:
            raise ConfigError("scf_min_points: must be >= 1")
        if not (0.0 <= self.scf_min_fraction <= 1.0):
            raise ConfigError("scf_min_fraction: must be in [0, 1]")
        if not (0.0 <= self.confidence_floor <= 1.0):
            raise ConfigError("confidence_floor: must be in [0, 1]")
        if len(self.range_bin_edges) < 1 or any(
                b <= a for a, b in zip(self.range_bin_edges, self.range_bin_edges[1:])):
            raise ConfigError("range_bin_edges: must be strictly ascending")
        if self.range_bin_edges[0] < 0:
            raise ConfigError("range_bin_edges: must start at >= 0")
        if not self.eval_iou_thresholds or any(
                not 0 < t <= 1 for t in self.eval_iou_thresholds):
            raise ConfigError("eval_iou_thresholds: must be in (0, 1]")
        if not self.classes:
            raise ConfigError("classes: at least one foreground class required")
        for cid, cc in self.classes.items():
            if cid < 1:
                raise ConfigError(f"classes[{cid}]: class ids must be >= 1")
            try:
                ClusterParams(tuple(cc.radii), self.min_pts, cc.min_cluster_size)
            except ValueError as e:
                raise ConfigError(f"classes[{cid}].radii: {e}") from e
            if len(cc.meta_shape) != 3 or any(v <= 0 for v in cc.meta_shape):
                raise ConfigError(f"classes[{cid}].meta_shape: components must be > 0")

    # Derived accessors -------------------------------------------------

    def effective_epsilon(self, window_len: int) -> int:
        if self.epsilon is not None:
            return self.epsilon
        return int(math.ceil(0.6 * window_len))

    def cluster_params(self) -> dict[int, ClusterParams]:
        return {cid: ClusterParams(tuple(cc.radii), self.min_pts, cc.min_cluster_size)
                for cid, cc in self.classes.items()}

    def meta_shape(self, class_id: int) -> MetaShape:
        cc = self.classes.get(class_id)
        if cc is None:
            raise ConfigError(f"classes: no configuration for class id {class_id}")
        return MetaShape(*cc.meta_shape)

    @property
    def num_classes(self) -> int:
        return max(self.classes)

    def class_names(self) -> dict[int, str]:
        return {cid: cc.name for cid, cc in self.classes.items()}

    # Serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = {str(cid): asdict(cc) for cid, cc in self.classes.items()}
        return d

    @staticmethod
    def from_dict(data: dict) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
        known = set(PipelineConfig.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"config: unknown fields {sorted(unknown)}")
        kwargs = dict(data)
        if "classes" in kwargs:
            classes = {}
            for key, raw in kwargs["classes"].items():
                try:
                    cid = int(key)
                except (TypeError, ValueError):
                    raise ConfigError(f"classes: class id {key!r} is not an integer")
                extra = set(raw) - set(ClassConfig.__dataclass_fields__)
                if extra:
                    raise ConfigError(f"classes[{cid}]: unknown fields {sorted(extra)}")
                try:
                    classes[cid] = ClassConfig(
                        name=raw["name"],
                        radii=tuple(raw["radii"]),
                        min_cluster_size=int(raw["min_cluster_size"]),
                        meta_shape=tuple(raw["meta_shape"]),
                    )
                except KeyError as e:
                    raise ConfigError(f"classes[{cid}]: missing field {e.args[0]!r}")
            kwargs["classes"] = classes
        for name in ("lambdas", "range_bin_edges", "eval_iou_thresholds"):
            if name in kwargs and kwargs[name] is not None:
                kwargs[name] = tuple(kwargs[name])
        return PipelineConfig(**kwargs)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @staticmethod
    def from_json(path: str | Path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: invalid JSON in {path}: {e}") from e
        return PipelineConfig.from_dict(data)

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        return replace(self, **kwargs)
