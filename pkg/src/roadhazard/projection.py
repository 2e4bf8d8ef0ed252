"""Pinhole projection of classified points into a class image, gap filling and pixmap output.

The camera differs from the LiDAR frame by a translation only, so the camera
looks along the LiDAR ``+z`` axis. A camera placed above a road patch
(``lidar_to_camera = (0, 0, -h)``) therefore gives a top-down view.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

EMPTY = -1

DEFAULT_PALETTE: dict[int | str, tuple[int, int, int]] = {
    0: (0, 0, 255),      # SafeRoad, blue
    1: (255, 255, 0),    # BeAwareNegative, yellow
    2: (0, 255, 255),    # HazardPositive, cyan
    3: (128, 0, 128),    # OffRoad, purple
    4: (255, 0, 0),      # RecognizedObstacle, red
    "background": (0, 0, 0),
}


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    x0: float
    y0: float
    width: int
    height: int
    lidar_to_camera: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not (0 <= self.x0 < self.width and 0 <= self.y0 < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(eq=False)
class ClassImage:
    """``classes[v, u]`` is a class id or ``EMPTY``; ``depth`` is ``inf`` where empty."""

    classes: np.ndarray
    depth: np.ndarray

    @classmethod
    def empty(cls, width: int, height: int) -> "ClassImage":
        return cls(np.full((height, width), EMPTY, dtype=np.int16), np.full((height, width), np.inf))

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    def filled(self) -> np.ndarray:
        return self.classes != EMPTY

    def copy(self) -> "ClassImage":
        return ClassImage(self.classes.copy(), self.depth.copy())


def transform_to_camera(points, camera: CameraModel) -> np.ndarray:
    return np.asarray(points, dtype=float) - np.asarray(camera.lidar_to_camera, dtype=float)


def transform_from_camera(points, camera: CameraModel) -> np.ndarray:
    return np.asarray(points, dtype=float) + np.asarray(camera.lidar_to_camera, dtype=float)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def project(points, camera: CameraModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixel columns, rows and a visibility mask for camera-frame points."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    z = p[:, 2]
    front = z > 0
    safe_z = np.where(front, z, 1.0)
    u = _round_half_up(camera.fx * p[:, 0] / safe_z + camera.x0)
    v = _round_half_up(camera.fy * p[:, 1] / safe_z + camera.y0)
    visible = front & (u >= 0) & (u < camera.width) & (v >= 0) & (v < camera.height)
    u = np.where(visible, u, -1).astype(np.int64)
    v = np.where(visible, v, -1).astype(np.int64)
    return u, v, visible


def project_point(point, camera: CameraModel) -> tuple[int, int] | None:
    u, v, ok = project(point, camera)
    return (int(u[0]), int(v[0])) if ok[0] else None


def render_classes(vertices, classes, camera: CameraModel) -> ClassImage:
    """Paint each visible vertex; the nearest point wins a pixel, then the smaller class id."""
    image = ClassImage.empty(camera.width, camera.height)
    pts = np.asarray(vertices, dtype=float).reshape(-1, 3)
    cls = np.asarray(classes, dtype=np.int64).ravel()
    if len(pts) != len(cls):
        raise ValueError("one class per vertex required")
    if len(pts) == 0:
        return image
    cam = transform_to_camera(pts, camera)
    u, v, ok = project(cam, camera)
    if not ok.any():
        return image
    u, v, z, c = u[ok], v[ok], cam[ok, 2], cls[ok]
    pixel = v * camera.width + u
    order = np.lexsort((c, z, pixel))
    first = np.unique(pixel[order], return_index=True)[1]
    win = order[first]
    image.classes[v[win], u[win]] = c[win]
    image.depth[v[win], u[win]] = z[win]
    return image


def _offsets(connectivity: int) -> list[tuple[int, int, float]]:
    cross = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    diag = [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    if connectivity == 4:
        return [(dy, dx, 1.0) for dy, dx in cross]
    if connectivity == 8:
        return [(dy, dx, 1.0) for dy, dx in cross] + [(dy, dx, float(np.sqrt(2))) for dy, dx in diag]
    raise ValueError("connectivity must be 4 or 8")


def _shift(a: np.ndarray, dy: int, dx: int, fill):
    """``out[y, x] = a[y + dy, x + dx]`` with ``fill`` outside the image."""
    out = np.full_like(a, fill)
    h, w = a.shape
    ys, yd = slice(max(dy, 0), h + min(dy, 0)), slice(max(-dy, 0), h + min(-dy, 0))
    xs, xd = slice(max(dx, 0), w + min(dx, 0)), slice(max(-dx, 0), w + min(-dx, 0))
    out[yd, xd] = a[ys, xs]
    return out


def fill_gaps(image: ClassImage, iterations: int, connectivity: int = 4) -> ClassImage:
    """Grow labelled pixels into empty neighbours in synchronous rounds.

    An empty pixel takes class and depth from its nearest non-empty
    neighbour; ties go to the smaller depth, then the smaller class id.
    """
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    offsets = _offsets(connectivity)
    out = image.copy()
    for _ in range(iterations):
        empty = ~out.filled()
        if not empty.any():
            break
        best_d = np.full(out.classes.shape, np.inf)
        best_z = np.full(out.classes.shape, np.inf)
        best_c = np.full(out.classes.shape, EMPTY, dtype=np.int16)
        for dy, dx, dist in offsets:
            nc = _shift(out.classes, dy, dx, EMPTY)
            nz = _shift(out.depth, dy, dx, np.inf)
            cand = nc != EMPTY
            better = cand & (
                (dist < best_d)
                | ((dist == best_d) & ((nz < best_z) | ((nz == best_z) & (nc < best_c))))
            )
            best_d = np.where(better, dist, best_d)
            best_z = np.where(better, nz, best_z)
            best_c = np.where(better, nc, best_c)
        update = empty & (best_c != EMPTY)
        if not update.any():
            break
        out.classes[update] = best_c[update]
        out.depth[update] = best_z[update]
    return out


def parse_palette(entries: Mapping[str, str]) -> dict[int | str, tuple[int, int, int]]:
    """Palette from ``class.<id> = r,g,b`` and ``background = r,g,b`` entries over the defaults."""
    palette = dict(DEFAULT_PALETTE)
    for key, value in entries.items():
        key = key.strip()
        if key == "background":
            target: int | str = "background"
        elif key.startswith("class.") and key[6:].isdigit():
            target = int(key[6:])
        else:
            raise ValueError(f"unknown palette key {key!r}")
        parts = [p.strip() for p in str(value).split(",")]
        if len(parts) != 3 or not all(p.isdigit() and int(p) <= 255 for p in parts):
            raise ValueError(f"palette value for {key!r} must be r,g,b in 0..255")
        palette[target] = tuple(int(p) for p in parts)
    return palette


def image_rgb(image: ClassImage, palette=None) -> np.ndarray:
    palette = palette or DEFAULT_PALETTE
    rgb = np.empty((image.height, image.width, 3), dtype=np.uint8)
    rgb[:] = palette["background"]
    for cls in np.unique(image.classes):
        if cls == EMPTY:
            continue
        if int(cls) not in palette:
            raise ValueError(f"palette has no colour for class {int(cls)}")
        rgb[image.classes == cls] = palette[int(cls)]
    return rgb


def write_image(image: ClassImage, path, palette=None, binary: bool = False) -> None:
    """Write a P3 (ascii) or P6 (binary) pixmap."""
    rgb = image_rgb(image, palette)
    header = f"P{6 if binary else 3}\n{image.width} {image.height}\n255\n"
    if binary:
        Path(path).write_bytes(header.encode("ascii") + rgb.tobytes())
        return
    body = "\n".join(f"{r} {g} {b}" for r, g, b in rgb.reshape(-1, 3))
    Path(path).write_text(header + body + "\n")
