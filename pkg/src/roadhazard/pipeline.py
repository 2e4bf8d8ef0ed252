"""Single-frame detection: saliency, road plane, corridor, classes, obstacles."""

from __future__ import annotations

from dataclasses import dataclass, field

from .pointcloud import PointCloud
from .saliency import SaliencyConfig, SaliencyMap, compute_saliency_map
from .segmentation import (
    Obstacle,
    SegmentedCloud,
    Thresholds,
    VehicleState,
    classify_points,
    driving_corridor,
    extract_obstacles,
    fit_road_plane,
)


@dataclass
class DetectionConfig:
    saliency: SaliencyConfig = field(default_factory=SaliencyConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    corridor_length: float = 30.0
    corridor_width: float = 3.5
    inlier_tol: float = 0.05
    ransac_iterations: int = 200
    cluster_radius: float = 0.3
    min_points: int = 10
    seed: int = 0


@dataclass(eq=False)
class Detection:
    saliency: SaliencyMap
    segmented: SegmentedCloud

    @property
    def obstacles(self) -> list[Obstacle]:
        return self.segmented.obstacles


def detect(cloud: PointCloud, state: VehicleState, config: DetectionConfig | None = None) -> Detection:
    cfg = config or DetectionConfig()
    sal = compute_saliency_map(cloud, cfg.saliency)
    plane = fit_road_plane(cloud, sal, cfg.inlier_tol, cfg.ransac_iterations, cfg.seed)
    corridor = driving_corridor(state, cfg.corridor_length, cfg.corridor_width)
    seg = classify_points(cloud, sal, plane, corridor, cfg.thresholds)
    seg = seg.with_obstacles(extract_obstacles(seg, cfg.cluster_radius, cfg.min_points))
    return Detection(sal, seg)
