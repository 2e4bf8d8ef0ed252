"""Synthetic road patches with parametric potholes and ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pointcloud import LabeledCloud, PointCloud, format_float


@dataclass(frozen=True)
class PotholeParams:
    """Elliptic bowl ``z -= depth * (1 - r^2) ** power`` for elliptic radius ``r < 1``."""

    depth: float
    semi_axis_a: float
    semi_axis_b: float
    power: float = 1.5
    center: tuple[float, float] = (0.0, 0.0)
    yaw: float = 0.0

    def __post_init__(self):
        if self.depth <= 0 or self.semi_axis_a <= 0 or self.semi_axis_b <= 0:
            raise ValueError("depth and semi-axes must be positive")
        if self.power < 1:
            raise ValueError("power must be >= 1")

    @property
    def ellipticity(self) -> float:
        return self.semi_axis_b / self.semi_axis_a

    def half_extents(self) -> tuple[float, float]:
        """Half widths of the axis-aligned box around the rotated ellipse."""
        a, b, c, s = self.semi_axis_a, self.semi_axis_b, np.cos(self.yaw), np.sin(self.yaw)
        return float(np.hypot(a * c, b * s)), float(np.hypot(a * s, b * c))

    def footprint_box(self) -> tuple[float, float, float, float]:
        hx, hy = self.half_extents()
        cx, cy = self.center
        return cx - hx, cy - hy, cx + hx, cy + hy

    def elliptic_radius(self, xy: np.ndarray) -> np.ndarray:
        d = np.asarray(xy, dtype=float) - np.asarray(self.center, dtype=float)
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        xp = c * d[:, 0] + s * d[:, 1]
        yp = -s * d[:, 0] + c * d[:, 1]
        return np.sqrt((xp / self.semi_axis_a) ** 2 + (yp / self.semi_axis_b) ** 2)

    def displacement(self, xy: np.ndarray) -> np.ndarray:
        """Downward displacement (positive meters) at each ``(x, y)``."""
        r = self.elliptic_radius(xy)
        inside = r < 1.0
        out = np.zeros(len(r))
        out[inside] = self.depth * (1.0 - r[inside] ** 2) ** self.power
        return out


@dataclass(frozen=True)
class RoadPatchParams:
    extent: tuple[float, float] = (10.0, 10.0)
    spacing: float = 0.1
    noise_sigma: float = 0.0
    seed: int = 0
    jitter: float = 0.0
    sensor_height: float = 2.0

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0 <= self.jitter < 0.5:
            raise ValueError("jitter must lie in [0, 0.5)")


@dataclass(frozen=True)
class SceneRanges:
    depth: tuple[float, float] = (0.05, 0.3)
    semi_axis: tuple[float, float] = (0.3, 1.0)
    power: tuple[float, float] = (1.5, 1.5)
    yaw: tuple[float, float] = (0.0, np.pi)


@dataclass(frozen=True, eq=False)
class GroundTruthPothole:
    id: int
    params: PotholeParams
    vertex_indices: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray


def label_threshold(noise_sigma: float) -> float:
    return max(0.01, 2.0 * noise_sigma)


def generate_road_patch(params: RoadPatchParams) -> LabeledCloud:
    """Grid of road points centred on the origin, all labelled road."""
    length, width = params.extent
    if length <= 0 or width <= 0:
        raise ValueError("extent must be positive")
    nx = int(round(length / params.spacing)) + 1
    ny = int(round(width / params.spacing)) + 1
    if nx * ny < 100:
        raise ValueError(f"extent/spacing gives only {nx * ny} points, need at least 100")
    xs = np.linspace(-length / 2, length / 2, nx)
    ys = np.linspace(-width / 2, width / 2, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    xy = np.column_stack([gx.ravel(), gy.ravel()])
    rng = np.random.default_rng(params.seed)
    if params.jitter > 0:
        xy = xy + rng.uniform(-params.jitter, params.jitter, xy.shape) * params.spacing
        xy[:, 0] = np.clip(xy[:, 0], -length / 2, length / 2)
        xy[:, 1] = np.clip(xy[:, 1], -width / 2, width / 2)
    z = rng.normal(0.0, params.noise_sigma, len(xy)) if params.noise_sigma > 0 else np.zeros(len(xy))
    cloud = PointCloud(np.column_stack([xy, z]), sensor_origin=(0.0, 0.0, params.sensor_height))
    return LabeledCloud(cloud, np.zeros(len(xy), dtype=np.int8))


def _patch_bounds(patch: LabeledCloud) -> tuple[float, float, float, float]:
    v = patch.vertices
    return v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max()


def carve_pothole(patch: LabeledCloud, ph: PotholeParams, noise_sigma: float = 0.0) -> LabeledCloud:
    """Lower vertices inside the pothole footprint and label the clearly displaced ones."""
    xmin, ymin, xmax, ymax = ph.footprint_box()
    pxmin, pymin, pxmax, pymax = _patch_bounds(patch)
    if xmin < pxmin or ymin < pymin or xmax > pxmax or ymax > pymax:
        raise ValueError("pothole footprint extends beyond the patch")
    verts = patch.vertices.copy()
    disp = ph.displacement(verts[:, :2])
    verts[:, 2] -= disp
    labels = patch.labels.copy()
    labels[disp > label_threshold(noise_sigma)] = 1
    cloud = PointCloud(verts, patch.cloud.frame_id, patch.cloud.sensor_origin)
    return LabeledCloud(cloud, labels)


def expected_label_area(ph: PotholeParams, noise_sigma: float = 0.0) -> float:
    """Area of the region whose displacement exceeds the label threshold."""
    t = label_threshold(noise_sigma)
    if t >= ph.depth:
        return 0.0
    return float(np.pi * ph.semi_axis_a * ph.semi_axis_b * (1.0 - (t / ph.depth) ** (1.0 / ph.power)))


def raise_box(patch: LabeledCloud, center, size, height: float) -> LabeledCloud:
    """Lift vertices inside an axis-aligned footprint by ``height`` (a positive obstacle)."""
    v = patch.vertices.copy()
    c = np.asarray(center, dtype=float)
    half = np.asarray(size, dtype=float) / 2
    inside = np.all(np.abs(v[:, :2] - c) <= half, axis=1)
    v[inside, 2] += height
    return LabeledCloud(PointCloud(v, patch.cloud.frame_id, patch.cloud.sensor_origin), patch.labels)


def _boxes_clear(a, b, gap: float) -> bool:
    return a[2] + gap <= b[0] or b[2] + gap <= a[0] or a[3] + gap <= b[1] or b[3] + gap <= a[1]


def generate_scene(
    seed: int,
    n_potholes: int,
    ranges: SceneRanges | None = None,
    patch: RoadPatchParams | None = None,
    min_gap: float = 0.2,
    max_attempts: int = 20,
) -> tuple[LabeledCloud, list[GroundTruthPothole]]:
    """Road patch with ``n_potholes`` non-overlapping potholes.

    All randomness flows from ``seed``; the patch noise uses the same seed.
    """
    ranges = ranges or SceneRanges()
    patch = patch or RoadPatchParams(seed=seed)
    if patch.seed != seed:
        patch = RoadPatchParams(**{**patch.__dict__, "seed": seed})
    scene = generate_road_patch(patch)
    rng = np.random.default_rng([seed, 1])
    pxmin, pymin, pxmax, pymax = _patch_bounds(scene)

    placed: list[PotholeParams] = []
    for i in range(n_potholes):
        for _ in range(max_attempts):
            a = rng.uniform(*ranges.semi_axis)
            b = rng.uniform(*ranges.semi_axis)
            candidate = PotholeParams(
                depth=float(rng.uniform(*ranges.depth)),
                semi_axis_a=float(a),
                semi_axis_b=float(b),
                power=float(rng.uniform(*ranges.power)),
                center=(0.0, 0.0),
                yaw=float(rng.uniform(*ranges.yaw)),
            )
            hx, hy = candidate.half_extents()
            if pxmin + hx >= pxmax - hx or pymin + hy >= pymax - hy:
                continue
            cx = rng.uniform(pxmin + hx, pxmax - hx)
            cy = rng.uniform(pymin + hy, pymax - hy)
            candidate = PotholeParams(
                candidate.depth, candidate.semi_axis_a, candidate.semi_axis_b,
                candidate.power, (float(cx), float(cy)), candidate.yaw,
            )
            box = candidate.footprint_box()
            if all(_boxes_clear(box, p.footprint_box(), min_gap) for p in placed):
                placed.append(candidate)
                break
        else:
            raise RuntimeError(f"could not place pothole {i} after {max_attempts} attempts")

    truth = []
    for i, ph in enumerate(placed):
        before = scene.labels.copy()
        scene = carve_pothole(scene, ph, patch.noise_sigma)
        idx = np.nonzero((scene.labels == 1) & (before == 0))[0]
        truth.append(_ground_truth(i, ph, scene, idx))
    return scene, truth


def _ground_truth(i: int, ph: PotholeParams, scene: LabeledCloud, idx: np.ndarray) -> GroundTruthPothole:
    if len(idx):
        pts = scene.vertices[idx]
        lo, hi = pts.min(axis=0), pts.max(axis=0)
    else:
        xmin, ymin, xmax, ymax = ph.footprint_box()
        lo, hi = np.array([xmin, ymin, -ph.depth]), np.array([xmax, ymax, 0.0])
    return GroundTruthPothole(i, ph, idx, lo, hi)


def write_manifest(truth: list[GroundTruthPothole], path) -> None:
    """One line per pothole: ``id d a b p cx cy yaw xmin ymin zmin xmax ymax zmax``."""
    lines = ["# id d a b p cx cy yaw xmin ymin zmin xmax ymax zmax"]
    for t in truth:
        p = t.params
        fields = [p.depth, p.semi_axis_a, p.semi_axis_b, p.power, *p.center, p.yaw, *t.bbox_min, *t.bbox_max]
        lines.append(str(t.id) + " " + " ".join(format_float(float(f)) for f in fields))
    Path(path).write_text("\n".join(lines) + "\n")
