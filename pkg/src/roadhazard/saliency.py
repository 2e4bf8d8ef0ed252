"""Per-vertex saliency from stacked neighbourhood normals.

Two cues are combined:

* geometric saliency, the magnitude of a vertex's own normal in the sparse
  part of a low-rank + sparse split of the stacked normal matrix;
* spectral saliency, the inverse norm of the eigenvalues of the 3x3 Gram
  matrix of the normals in the vertex's neighbourhood.

Both are min-max scaled per frame and averaged with weights ``w1``/``w2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pointcloud import (
    NeighborGraph,
    NormalField,
    PointCloud,
    build_neighbor_graph,
    estimate_point_normals,
    format_float,
)
from .rpca import RpcaConfig, RpcaResult, fast_pcp


@dataclass(frozen=True, eq=False)
class NormalMatrix:
    """``3m x (k+1)`` matrix; rows ``3j..3j+2`` hold vertex ``j``'s normal then its neighbours'."""

    data: np.ndarray

    @property
    def m(self) -> int:
        return self.data.shape[0] // 3

    @property
    def k(self) -> int:
        return self.data.shape[1] - 1

    def blocks(self) -> np.ndarray:
        """View of shape ``(m, 3, k+1)``; ``blocks()[j]`` is the local matrix of vertex ``j``."""
        return self.data.reshape(self.m, 3, self.k + 1)


@dataclass
class SaliencyConfig:
    k: int = 16
    w1: float = 1.0
    w2: float = 1.0
    rpca: RpcaConfig = field(default_factory=RpcaConfig)

    def validate(self) -> None:
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise ValueError("weights must be non-negative with a positive sum")


@dataclass(eq=False)
class SaliencyMap:
    s1_raw: np.ndarray
    s2_raw: np.ndarray
    s1_norm: np.ndarray
    s2_norm: np.ndarray
    fused: np.ndarray
    normals: NormalField | None = None
    graph: NeighborGraph | None = None
    rpca: RpcaResult | None = None

    def __len__(self) -> int:
        return len(self.fused)


def assemble_normal_matrix(normals: NormalField, graph: NeighborGraph) -> NormalMatrix:
    n = np.asarray(normals.normals, dtype=float)
    if len(n) != graph.m:
        raise ValueError(f"{len(n)} normals but the graph has {graph.m} vertices")
    blocks = np.empty((graph.m, 3, graph.k + 1))
    blocks[:, :, 0] = n
    blocks[:, :, 1:] = n[graph.indices].transpose(0, 2, 1)
    return NormalMatrix(blocks.reshape(3 * graph.m, graph.k + 1))


def geometric_saliency(S: np.ndarray) -> np.ndarray:
    """Euclidean norm of each vertex's 3-row block in the first column of ``S``."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] % 3 or S.shape[1] < 1:
        raise ValueError(f"sparse matrix shape {S.shape} is not 3m x (k+1)")
    first = S[:, 0].reshape(-1, 3)
    return np.sqrt(np.sum(first * first, axis=1))


def local_eigenvalues(E: NormalMatrix) -> np.ndarray:
    """Eigenvalues (ascending, clamped at zero) of ``E_j E_j^T`` for every vertex."""
    b = E.blocks()
    R = np.einsum("mik,mjk->mij", b, b)
    lam = np.linalg.eigvalsh(R)
    return np.maximum(lam, 0.0)


def spectral_saliency(E: NormalMatrix) -> np.ndarray:
    lam = local_eigenvalues(E)
    norm = np.sqrt(np.sum(lam * lam, axis=1))
    if np.any(norm == 0):
        j = int(np.nonzero(norm == 0)[0][0])
        raise ValueError(f"vertex {j} has an all-zero normal block")
    return 1.0 / norm


def normalize_minmax(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("cannot normalise an empty array")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    lo, hi = v.min(), v.max()
    # Spreads at round-off level count as constant; scaling them would turn noise into signal.
    if hi - lo <= 1e-12 * max(abs(hi), abs(lo)):
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def fuse(s1n, s2n, w1: float = 1.0, w2: float = 1.0) -> np.ndarray:
    a = np.asarray(s1n, dtype=float)
    b = np.asarray(s2n, dtype=float)
    if a.shape != b.shape:
        raise ValueError("saliency arrays differ in length")
    if w1 + w2 == 0:
        raise ValueError("w1 + w2 must be positive")
    return (w1 * a + w2 * b) / (w1 + w2)


def compute_saliency_map(cloud: PointCloud, config: SaliencyConfig | None = None) -> SaliencyMap:
    """Run normals, normal matrix, decomposition, both cues, scaling and fusion."""
    cfg = config or SaliencyConfig()
    cfg.validate()
    if cloud.m <= cfg.k:
        raise ValueError(f"cloud has {cloud.m} vertices, need more than k={cfg.k}")
    graph = build_neighbor_graph(cloud, cfg.k)
    normals = estimate_point_normals(cloud, graph)
    E = assemble_normal_matrix(normals, graph)
    decomposition = fast_pcp(E.data, cfg.rpca)
    s1 = geometric_saliency(decomposition.S)
    s2 = spectral_saliency(E)
    s1n = normalize_minmax(s1)
    s2n = normalize_minmax(s2)
    return SaliencyMap(
        s1_raw=s1,
        s2_raw=s2,
        s1_norm=s1n,
        s2_norm=s2n,
        fused=fuse(s1n, s2n, cfg.w1, cfg.w2),
        normals=normals,
        graph=graph,
        rpca=decomposition,
    )


def export_saliency(cloud: PointCloud, values, path) -> None:
    """Write ``x y z s`` rows."""
    vals = np.asarray(values, dtype=float)
    lines = [
        " ".join(format_float(c) for c in v) + " " + format_float(s)
        for v, s in zip(cloud.vertices, vals)
    ]
    Path(path).write_text("\n".join(lines) + "\n")
