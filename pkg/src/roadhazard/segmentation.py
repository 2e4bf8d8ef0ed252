"""Road plane, driving corridor, per-vertex region classes and obstacle extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .pointcloud import CloudFormatError, PointCloud, _parse_floats, format_float, write_columns
from .saliency import SaliencyMap


class RegionClass(IntEnum):
    SafeRoad = 0
    BeAwareNegative = 1
    HazardPositive = 2
    OffRoad = 3
    RecognizedObstacle = 4


class NoRoadError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleState:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    heading: tuple[float, float] = (1.0, 0.0)
    steering_angle: float = 0.0

    def __post_init__(self):
        if abs(self.steering_angle) > np.pi / 2:
            raise ValueError("|steering_angle| must not exceed pi/2")
        if abs(np.hypot(*self.heading) - 1.0) > 1e-6:
            raise ValueError("heading must be a unit vector")


@dataclass(frozen=True)
class Plane:
    """``normal . x + offset = 0`` with ``normal[2] > 0``."""

    normal: np.ndarray
    offset: float

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal + self.offset


@dataclass(frozen=True)
class RoadModel:
    plane: Plane
    corridor: np.ndarray


@dataclass(frozen=True)
class Thresholds:
    t_s: float = 0.5
    h_neg: float = 0.05
    h_pos: float = 0.05
    h_flat: float = 0.03
    # Number of nearest neighbours averaged into the distance used for
    # classification; 0 classifies on the raw plane distance.
    depth_smoothing: int = 0

    def validate(self) -> None:
        if min(self.h_neg, self.h_pos, self.h_flat) < 0:
            raise ValueError("height thresholds must be non-negative")
        if self.depth_smoothing < 0:
            raise ValueError("depth_smoothing must be non-negative")


@dataclass(frozen=True, eq=False)
class Descriptor:
    bbox_dims: np.ndarray
    point_count: int
    mean_depth: float
    saliency_histogram: np.ndarray

    def as_tuple(self) -> tuple:
        return (*map(float, self.bbox_dims), self.point_count, self.mean_depth,
                *map(int, self.saliency_histogram))


@dataclass(frozen=True, eq=False)
class Obstacle:
    vertex_indices: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    centroid: np.ndarray
    kind: str
    descriptor: Descriptor


@dataclass(eq=False)
class SegmentedCloud:
    cloud: PointCloud
    classes: np.ndarray
    signed_distance: np.ndarray
    saliency: np.ndarray
    plane: Plane
    corridor: np.ndarray
    obstacles: list[Obstacle] = field(default_factory=list)

    def with_obstacles(self, obstacles: list[Obstacle]) -> "SegmentedCloud":
        """Copy with obstacle members promoted to RecognizedObstacle."""
        classes = self.classes.copy()
        for ob in obstacles:
            classes[ob.vertex_indices] = RegionClass.RecognizedObstacle
        return replace(self, classes=classes, obstacles=list(obstacles))

    def negative_mask(self) -> np.ndarray:
        """Vertices predicted to belong to a negative obstacle."""
        mask = self.classes == RegionClass.BeAwareNegative
        for ob in self.obstacles:
            if ob.kind == "negative":
                mask[ob.vertex_indices] = True
        return mask


def _plane_through(p: np.ndarray) -> tuple[np.ndarray, float] | None:
    n = np.cross(p[1] - p[0], p[2] - p[0])
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n = n / norm
    return n, -float(n @ p[0])


def _refine(points: np.ndarray) -> tuple[np.ndarray, float]:
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    n = vt[-1]
    return n, -float(n @ c)


def fit_road_plane(
    cloud: PointCloud,
    saliency: SaliencyMap | np.ndarray,
    inlier_tol: float = 0.05,
    iterations: int = 200,
    seed: int = 0,
    min_inlier_ratio: float = 0.3,
) -> Plane:
    """RANSAC plane through the less salient half of the cloud, refined by least squares."""
    fused = saliency.fused if isinstance(saliency, SaliencyMap) else np.asarray(saliency, dtype=float)
    if len(fused) != cloud.m:
        raise ValueError("saliency length does not match the cloud")
    cand = np.nonzero(fused < np.percentile(fused, 50))[0]
    if len(cand) < 50:
        # A constant saliency field leaves nothing strictly below the median.
        cand = np.nonzero(fused <= np.percentile(fused, 50))[0]
    if len(cand) < 50:
        raise NoRoadError(f"only {len(cand)} low-saliency vertices, need 50")
    pts = cloud.vertices[cand]
    rng = np.random.default_rng(seed)
    best = None
    best_count = -1
    for _ in range(iterations):
        model = _plane_through(pts[rng.choice(len(pts), 3, replace=False)])
        if model is None:
            continue
        n, off = model
        count = int(np.sum(np.abs(pts @ n + off) <= inlier_tol))
        if count > best_count:
            best, best_count = model, count
    if best is None or best_count < min_inlier_ratio * len(pts):
        raise NoRoadError("no plane explains enough low-saliency vertices")
    n, off = best
    inliers = np.abs(pts @ n + off) <= inlier_tol
    n, off = _refine(pts[inliers])
    if n[2] < 0:
        n, off = -n, -off
    return Plane(n, off)


def driving_corridor(state: VehicleState, length: float = 30.0, width: float = 3.5) -> np.ndarray:
    """Counter-clockwise rectangle ahead of the vehicle, shape ``(4, 2)``."""
    if length <= 0 or width <= 0:
        raise ValueError("corridor length and width must be positive")
    c, s = np.cos(state.steering_angle), np.sin(state.steering_angle)
    hx, hy = state.heading
    u = np.array([c * hx - s * hy, s * hx + c * hy])
    w = np.array([-u[1], u[0]])
    p = np.asarray(state.position[:2], dtype=float)
    half = width / 2
    return np.array([p - half * w, p + length * u - half * w, p + length * u + half * w, p + half * w])


def in_polygon(polygon: np.ndarray, xy) -> np.ndarray:
    """Containment in a convex counter-clockwise polygon, boundary included."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    inside = np.ones(len(xy), dtype=bool)
    for a, b in zip(polygon, np.roll(polygon, -1, axis=0)):
        edge = b - a
        cross = edge[0] * (xy[:, 1] - a[1]) - edge[1] * (xy[:, 0] - a[0])
        inside &= cross >= -1e-9 * max(1.0, np.linalg.norm(edge))
    return inside


def _smoothed(values: np.ndarray, sal: SaliencyMap | None, cloud: PointCloud, k: int) -> np.ndarray:
    if k == 0:
        return values
    if sal is not None and sal.graph is not None and sal.graph.k >= k:
        idx = sal.graph.indices[:, :k]
    else:
        k = min(k, cloud.m - 1)
        _, idx = cKDTree(cloud.vertices).query(cloud.vertices, k + 1)
        idx = idx[:, 1:]
    return (values + values[idx].sum(axis=1)) / (k + 1)


def classify_points(
    cloud: PointCloud,
    saliency: SaliencyMap | np.ndarray,
    plane: Plane,
    corridor: np.ndarray,
    thresholds: Thresholds | None = None,
) -> SegmentedCloud:
    """Assign one region class per vertex.

    Outside the corridor everything is OffRoad. Inside, vertices further than
    ``h_neg`` below (``h_pos`` above) the plane are negative (positive)
    hazards. Salient vertices beyond the flat band ``h_flat`` are also hazards
    on the matching side; everything else is SafeRoad.
    """
    th = thresholds or Thresholds()
    th.validate()
    sal_map = saliency if isinstance(saliency, SaliencyMap) else None
    fused = sal_map.fused if sal_map is not None else np.asarray(saliency, dtype=float)
    dist = plane.signed_distance(cloud.vertices)
    depth = _smoothed(dist, sal_map, cloud, th.depth_smoothing)
    inside = in_polygon(corridor, cloud.vertices[:, :2])
    salient = fused >= th.t_s

    classes = np.full(cloud.m, RegionClass.SafeRoad, dtype=np.int8)
    negative = (depth < -th.h_neg) | (salient & (depth < -th.h_flat))
    positive = (depth > th.h_pos) | (salient & (depth > th.h_flat))
    classes[negative] = RegionClass.BeAwareNegative
    classes[positive & ~negative] = RegionClass.HazardPositive
    classes[~inside] = RegionClass.OffRoad
    return SegmentedCloud(cloud, classes, depth, fused, plane, np.asarray(corridor, dtype=float))


def _clusters(points: np.ndarray, radius: float) -> list[np.ndarray]:
    n = len(points)
    if n == 0:
        return []
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    count, labels = connected_components(adj, directed=False)
    order = np.argsort(labels, kind="stable")
    groups = np.split(order, np.cumsum(np.bincount(labels, minlength=count))[:-1])
    return sorted(groups, key=lambda g: int(g.min()))


def obstacle_descriptor(indices, cloud: PointCloud, saliency, plane: Plane) -> Descriptor:
    idx = np.sort(np.asarray(indices, dtype=np.int64))
    if len(idx) == 0:
        raise ValueError("obstacle has no vertices")
    pts = cloud.vertices[idx]
    below = -plane.signed_distance(pts)
    fused = saliency.fused if isinstance(saliency, SaliencyMap) else np.asarray(saliency, dtype=float)
    hist, _ = np.histogram(np.clip(fused[idx], 0.0, 1.0), bins=8, range=(0.0, 1.0))
    return Descriptor(
        bbox_dims=pts.max(axis=0) - pts.min(axis=0),
        point_count=len(idx),
        mean_depth=math.fsum(below) / len(idx),
        saliency_histogram=hist.astype(np.int64),
    )


def extract_obstacles(segmented: SegmentedCloud, cluster_radius: float = 0.3, min_points: int = 10) -> list[Obstacle]:
    """Single-linkage clusters of negative and positive hazard vertices, negatives first."""
    if cluster_radius <= 0 or min_points < 1:
        raise ValueError("cluster_radius and min_points must be positive")
    obstacles = []
    verts = segmented.cloud.vertices
    for kind, cls in (("negative", RegionClass.BeAwareNegative), ("positive", RegionClass.HazardPositive)):
        members = np.nonzero(segmented.classes == cls)[0]
        for group in _clusters(verts[members], cluster_radius):
            if len(group) < min_points:
                continue
            idx = np.sort(members[group])
            pts = verts[idx]
            obstacles.append(Obstacle(
                vertex_indices=idx,
                bbox_min=pts.min(axis=0),
                bbox_max=pts.max(axis=0),
                centroid=pts.mean(axis=0),
                kind=kind,
                descriptor=obstacle_descriptor(idx, segmented.cloud, segmented.saliency, segmented.plane),
            ))
    return obstacles


def export_segmented(segmented: SegmentedCloud, path) -> None:
    """Write ``x y z class_id`` rows."""
    write_columns(path, segmented.cloud.vertices, segmented.classes, lambda v: str(int(v)))


def load_segmented(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``x y z class_id`` rows back into vertices and classes."""
    rows, classes = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        values = _parse_floats(line.split(), lineno, 4)
        if values[3] not in tuple(float(c) for c in RegionClass):
            raise CloudFormatError(f"unknown class id {values[3]:g}", lineno)
        rows.append(values[:3])
        classes.append(int(values[3]))
    return np.array(rows, dtype=float).reshape(-1, 3), np.array(classes, dtype=np.int8)


def write_obstacle_manifest(obstacles: list[Obstacle], path) -> None:
    """One line per obstacle: ``id kind n cx cy cz xmin ymin zmin xmax ymax zmax mean_depth``."""
    lines = ["# id kind n cx cy cz xmin ymin zmin xmax ymax zmax mean_depth"]
    for i, ob in enumerate(obstacles):
        nums = [*ob.centroid, *ob.bbox_min, *ob.bbox_max, ob.descriptor.mean_depth]
        lines.append(f"{i} {ob.kind} {len(ob.vertex_indices)} " + " ".join(format_float(float(x)) for x in nums))
    Path(path).write_text("\n".join(lines) + "\n")
