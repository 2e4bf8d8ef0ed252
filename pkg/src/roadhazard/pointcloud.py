"""Point-cloud containers, ASCII I/O, k-nearest-neighbour graphs and normals."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

FORMATS = ("xyz-ascii", "ply-ascii", "labeled-xyz")


class CloudFormatError(ValueError):
    """Raised when a point-cloud file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateFaceError(ValueError):
    pass


class NormalEstimationError(ValueError):
    pass


def _as_vertices(vertices) -> np.ndarray:
    arr = np.asarray(vertices, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"vertices must have shape (m, 3), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered set of ``m`` vertices in the sensor frame (meters)."""

    vertices: np.ndarray
    frame_id: int = 0
    sensor_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        verts = _as_vertices(self.vertices)
        if len(verts) < 1:
            raise ValueError("a point cloud needs at least one vertex")
        if not np.all(np.isfinite(verts)):
            raise ValueError("vertex coordinates must be finite")
        origin = np.asarray(self.sensor_origin, dtype=float).reshape(3)
        verts.setflags(write=False)
        origin.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "sensor_origin", origin)

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def m(self) -> int:
        return len(self.vertices)

    def subset(self, indices) -> "PointCloud":
        return PointCloud(self.vertices[np.asarray(indices)], self.frame_id, self.sensor_origin)

    def transformed(self, rotation=None, translation=None) -> "PointCloud":
        """Apply ``p -> R p + t`` to vertices and sensor origin alike."""
        R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
        t = np.zeros(3) if translation is None else np.asarray(translation, dtype=float)
        return PointCloud(self.vertices @ R.T + t, self.frame_id, R @ self.sensor_origin + t)


@dataclass(frozen=True, eq=False)
class LabeledCloud:
    """A point cloud with per-vertex binary ground truth (1 = pothole, 0 = road)."""

    cloud: PointCloud
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels).astype(np.int8).reshape(-1)
        if len(labels) != self.cloud.m:
            raise ValueError(f"{len(labels)} labels for {self.cloud.m} vertices")
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be 0 or 1")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.cloud.m

    @property
    def vertices(self) -> np.ndarray:
        return self.cloud.vertices

    def subset(self, indices) -> "LabeledCloud":
        idx = np.asarray(indices)
        return LabeledCloud(self.cloud.subset(idx), self.labels[idx])


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """``indices[j]`` lists the ``k`` nearest other vertices of ``j``, closest first."""

    k: int
    indices: np.ndarray
    distances: np.ndarray

    @property
    def m(self) -> int:
        return len(self.indices)


@dataclass(frozen=True, eq=False)
class NormalField:
    normals: np.ndarray

    def __len__(self) -> int:
        return len(self.normals)


# ---------------------------------------------------------------------------
# I/O


def _parse_floats(tokens: list[str], lineno: int, expected: int) -> list[float]:
    if len(tokens) != expected:
        raise CloudFormatError(f"expected {expected} fields, got {len(tokens)}", lineno)
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise CloudFormatError(f"non-numeric field in {' '.join(tokens)!r}", lineno) from None
    if not all(np.isfinite(values)):
        raise CloudFormatError("non-finite coordinate", lineno)
    return values


def _read_xyz(lines: list[str], labeled: bool):
    rows, labels = [], []
    ncol = 4 if labeled else 3
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        values = _parse_floats(line.split(), lineno, ncol)
        if labeled:
            if values[3] not in (0.0, 1.0):
                raise CloudFormatError(f"label must be 0 or 1, got {values[3]:g}", lineno)
            labels.append(int(values[3]))
        rows.append(values[:3])
    return rows, labels


def _read_ply(lines: list[str]):
    if not lines or lines[0].strip() != "ply":
        raise CloudFormatError("missing 'ply' magic", 1)
    n_vertex = None
    props: list[str] = []
    in_vertex = False
    header_end = None
    for lineno, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens:
            continue
        key = tokens[0]
        if key == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise CloudFormatError("only ascii PLY is supported", lineno)
        elif key == "element":
            in_vertex = len(tokens) >= 3 and tokens[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(tokens[2])
                except ValueError:
                    raise CloudFormatError("bad vertex count", lineno) from None
            elif n_vertex is None:
                # other elements before vertex would shift the body; not supported
                raise CloudFormatError("vertex element must come first", lineno)
        elif key == "property" and in_vertex:
            props.append(tokens[-1])
        elif key == "end_header":
            header_end = lineno
            break
    if header_end is None:
        raise CloudFormatError("missing end_header")
    if n_vertex is None:
        raise CloudFormatError("no vertex element declared")
    try:
        cols = [props.index(name) for name in ("x", "y", "z")]
    except ValueError:
        raise CloudFormatError("vertex element lacks x/y/z properties") from None
    rows = []
    lineno = header_end
    for raw in lines[header_end:]:
        lineno += 1
        if len(rows) == n_vertex:
            break
        tokens = raw.split()
        if not tokens:
            continue
        values = _parse_floats(tokens, lineno, len(props))
        rows.append([values[c] for c in cols])
    if len(rows) != n_vertex:
        raise CloudFormatError(f"header declares {n_vertex} vertices, found {len(rows)}")
    return rows


def load_cloud(path, format: str = "xyz-ascii") -> PointCloud | LabeledCloud:
    """Read a cloud from an ASCII file.

    ``labeled-xyz`` files yield a :class:`LabeledCloud`; the other formats yield
    a plain :class:`PointCloud`. Parse errors carry the offending line number.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    text = Path(path).read_text()
    lines = text.splitlines()
    if format == "ply-ascii":
        rows, labels = _read_ply(lines), None
    else:
        rows, labels = _read_xyz(lines, labeled=format == "labeled-xyz")
    if not rows:
        raise CloudFormatError("file contains no vertices")
    cloud = PointCloud(np.array(rows, dtype=float))
    if format == "labeled-xyz":
        return LabeledCloud(cloud, np.array(labels, dtype=np.int8))
    return cloud


def format_float(x: float) -> str:
    return f"{x:.9g}"


def write_columns(path, vertices: np.ndarray, extra=None, extra_fmt=None) -> None:
    """Write ``x y z [extra]`` rows; coordinates use 9 significant digits."""
    verts = np.asarray(vertices, dtype=float)
    lines = []
    for i, (x, y, z) in enumerate(verts):
        row = f"{format_float(x)} {format_float(y)} {format_float(z)}"
        if extra is not None:
            row += " " + (extra_fmt(extra[i]) if extra_fmt else str(extra[i]))
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


def save_cloud(cloud: PointCloud | LabeledCloud, path, format: str = "xyz-ascii") -> None:
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}")
    if format == "labeled-xyz":
        if not isinstance(cloud, LabeledCloud):
            raise TypeError("labeled-xyz needs a LabeledCloud")
        write_columns(path, cloud.vertices, cloud.labels, lambda v: str(int(v)))
        return
    verts = cloud.vertices
    if format == "xyz-ascii":
        write_columns(path, verts)
        return
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(verts)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    body = [" ".join(format_float(c) for c in v) for v in verts]
    Path(path).write_text("\n".join(header + body) + "\n")


# ---------------------------------------------------------------------------
# neighbours


def _sq_dist(vertices: np.ndarray, j: np.ndarray, cand: np.ndarray) -> np.ndarray:
    diff = vertices[cand] - vertices[j][:, None, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def build_neighbor_graph(cloud: PointCloud, k: int) -> NeighborGraph:
    """Exact k-NN graph, self excluded, ties broken by the lower vertex index."""
    verts = cloud.vertices
    m = len(verts)
    if k < 1:
        raise ValueError("k must be positive")
    if k >= m:
        raise ValueError(f"k={k} requires more than {k} vertices, cloud has {m}")
    tree = cKDTree(verts)
    # Extra candidates so equal-distance runs at the k-th slot are seen in full.
    q = min(m, k + 1 + max(8, k // 2))
    _, cand = tree.query(verts, k=q)
    cand = np.asarray(cand).reshape(m, q)
    rows = np.arange(m)
    d2 = _sq_dist(verts, rows, cand)
    d2 = np.where(cand == rows[:, None], np.inf, d2)
    order = np.lexsort((cand, d2), axis=1)
    cand = np.take_along_axis(cand, order, axis=1)
    d2 = np.take_along_axis(d2, order, axis=1)

    out_idx = cand[:, :k].copy()
    out_d2 = d2[:, :k].copy()
    # Rows whose candidate list may have truncated a tie at position k.
    if q < m:
        farthest = np.max(np.where(np.isfinite(d2), d2, -1.0), axis=1)
        unsure = np.nonzero(farthest <= d2[:, k - 1])[0]
        for j in unsure:
            r = np.sqrt(out_d2[j, -1])
            ball = np.array(tree.query_ball_point(verts[j], r * (1 + 1e-9) + 1e-12), dtype=int)
            ball = ball[ball != j]
            bd2 = _sq_dist(verts, np.array([j]), ball[None, :])[0]
            o = np.lexsort((ball, bd2))[:k]
            out_idx[j] = ball[o]
            out_d2[j] = bd2[o]
    return NeighborGraph(k=k, indices=out_idx, distances=np.sqrt(out_d2))


def brute_force_neighbors(vertices: np.ndarray, k: int) -> np.ndarray:
    """O(m^2) reference used to check :func:`build_neighbor_graph`."""
    verts = np.asarray(vertices, dtype=float)
    m = len(verts)
    diff = verts[:, None, :] - verts[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    idx = np.broadcast_to(np.arange(m), (m, m))
    order = np.lexsort((idx, d2), axis=1)
    return order[:, :k]


# ---------------------------------------------------------------------------
# normals


def face_normal(v1, v2, v3) -> np.ndarray:
    """Unit normal of the triangle ``(v1, v2, v3)`` by the right-hand rule."""
    v1, v2, v3 = (np.asarray(v, dtype=float) for v in (v1, v2, v3))
    c = np.cross(v2 - v1, v3 - v1)
    norm = np.linalg.norm(c)
    if norm < 1e-12:
        raise DegenerateFaceError("collinear or coincident vertices")
    return c / norm


def covariance_normals(cloud: PointCloud, graph: NeighborGraph) -> tuple[np.ndarray, np.ndarray]:
    """Smallest-eigenvector normal of each vertex's neighbourhood.

    Returns ``(normals, ok)``; ``ok`` is False where the two smallest
    eigenvalues coincide (no well-defined plane).
    """
    verts = cloud.vertices
    patch = np.concatenate([verts[:, None, :], verts[graph.indices]], axis=1)
    centered = patch - patch.mean(axis=1, keepdims=True)
    cov = np.einsum("mki,mkj->mij", centered, centered) / patch.shape[1]
    w, v = np.linalg.eigh(cov)
    scale = np.maximum(w[:, 2], 1e-300)
    ok = (w[:, 1] - w[:, 0]) > 1e-12 * scale
    return v[:, :, 0], ok & (w[:, 2] > 0)


def estimate_point_normals(cloud: PointCloud, graph: NeighborGraph) -> NormalField:
    """Point normals as the mean of local triangle face normals.

    Neighbours are ordered by angle in the tangent plane of the covariance
    normal; each angularly consecutive pair forms a triangle with the query
    point. Wrap-around pairs spanning more than half a turn are skipped so
    boundary vertices do not average in triangles that bridge empty space.
    Normals are finally turned to face ``cloud.sensor_origin``.
    """
    if graph.m != cloud.m:
        raise ValueError("neighbour graph was built for a different cloud")
    if graph.k < 2:
        raise ValueError("normal estimation needs k >= 2")
    verts = cloud.vertices
    m, k = graph.indices.shape
    cov_n, cov_ok = covariance_normals(cloud, graph)

    # tangent basis per vertex
    helper = np.where(np.abs(cov_n[:, [0]]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    e1 = np.cross(cov_n, helper)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(cov_n, e1)

    rel = verts[graph.indices] - verts[:, None, :]
    angle = np.arctan2(np.einsum("mkj,mj->mk", rel, e2), np.einsum("mkj,mj->mk", rel, e1))
    order = np.argsort(angle, axis=1, kind="stable")
    rel = np.take_along_axis(rel, order[:, :, None], axis=1)
    angle = np.take_along_axis(angle, order, axis=1)

    nxt = np.roll(rel, -1, axis=1)
    gap = np.roll(angle, -1, axis=1) - angle
    gap[:, -1] += 2 * np.pi
    faces = np.cross(rel, nxt)
    fnorm = np.linalg.norm(faces, axis=2)
    valid = (fnorm >= 1e-12) & (gap < np.pi)
    unit = np.where(valid[:, :, None], faces / np.where(fnorm > 0, fnorm, 1.0)[:, :, None], 0.0)
    count = valid.sum(axis=1)
    summed = unit.sum(axis=1)
    snorm = np.linalg.norm(summed, axis=1)

    good = (count > 0) & (snorm > 1e-12)
    normals = np.empty((m, 3))
    normals[good] = summed[good] / snorm[good, None]
    bad = ~good
    if np.any(bad):
        if not np.all(cov_ok[bad]):
            j = int(np.nonzero(bad & ~cov_ok)[0][0])
            raise NormalEstimationError(f"vertex {j}: neighbourhood is degenerate")
        normals[bad] = cov_n[bad]

    to_sensor = cloud.sensor_origin[None, :] - verts
    flip = np.einsum("ij,ij->i", normals, to_sensor) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return NormalField(normals)


# ---------------------------------------------------------------------------
# resampling


def downsample(cloud, ratio: float, seed: int = 0):
    """Keep ``round(ratio * m)`` vertices chosen uniformly at random.

    Surviving vertices keep their relative order; labels travel with them.
    """
    if not (0.0 < ratio <= 1.0):
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    m = len(cloud)
    n = max(1, int(np.floor(ratio * m + 0.5)))
    if n == m:
        return cloud
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(m, size=n, replace=False))
    return cloud.subset(keep)
