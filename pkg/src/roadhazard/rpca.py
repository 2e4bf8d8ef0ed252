"""Low-rank plus sparse matrix decomposition (fast principal component pursuit).

The solver alternates a rank-``K`` truncated SVD for the low-rank part with
elementwise soft thresholding for the sparse part, growing ``K`` while the
next singular component still carries a significant share of the spectrum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class RpcaConfig:
    """Solver settings.

    ``lam=None`` resolves to ``1/sqrt(max(rows, cols))`` and ``max_rank=None``
    to ``min(rows, cols)`` when the solver sees the matrix.

    ``settle_tol`` gates rank growth: the rank test is only acted on once the
    low-rank iterate at the current rank moves by less than this relative
    amount. ``polish`` re-fits the low-rank part with the sparse support held
    fixed, which removes the soft-threshold bias on recovered outliers.
    """

    lam: float | None = None
    eps: float = 0.01
    k0: int = 1
    max_rank: int | None = None
    max_iter: int = 100
    tol: float = 1e-6
    settle_tol: float = 1e-3
    polish: bool = False
    polish_iter: int = 500
    polish_tol: float = 1e-12

    def resolved(self, shape: tuple[int, int]) -> "RpcaConfig":
        rows, cols = shape
        lam = self.lam if self.lam is not None else 1.0 / np.sqrt(max(rows, cols))
        max_rank = self.max_rank if self.max_rank is not None else min(rows, cols)
        cfg = RpcaConfig(**{**self.__dict__, "lam": float(lam), "max_rank": int(max_rank)})
        cfg.validate(shape)
        return cfg

    def validate(self, shape: tuple[int, int] | None = None) -> None:
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lam must be positive")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.k0 < 1:
            raise ValueError("k0 must be a positive integer")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_rank is not None:
            if self.k0 > self.max_rank:
                raise ValueError("k0 exceeds max_rank")
            if shape is not None and self.max_rank > min(shape):
                raise ValueError("max_rank exceeds the matrix dimensions")


@dataclass
class RpcaResult:
    L: np.ndarray
    S: np.ndarray
    rank: int
    iterations: int
    residual: float
    converged: bool
    singular_values: np.ndarray
    objective: list[float] = field(default_factory=list)
    polish_iterations: int = 0


def shrink(X, lam: float):
    """Soft thresholding ``sign(x) * max(0, |x| - lam)``, elementwise."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    X = np.asarray(X, dtype=float)
    return X - np.clip(X, -lam, lam)


def _svd(M: np.ndarray):
    return np.linalg.svd(M, full_matrices=False)


def _right_spectrum(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Singular values (descending) and right singular vectors as rows.

    Tall matrices go through the small Gram matrix, which is an order of
    magnitude cheaper than a thin SVD for ``3m x (k+1)`` normal matrices.
    """
    if M.shape[0] < 4 * M.shape[1]:
        _, s, Vt = _svd(M)
        return s, Vt
    w, V = np.linalg.eigh(M.T @ M)
    order = np.argsort(w)[::-1]
    return np.sqrt(np.maximum(w[order], 0.0)), V[:, order].T


def _truncate(M: np.ndarray, Vt: np.ndarray, K: int) -> np.ndarray:
    return (M @ Vt[:K].T) @ Vt[:K]


def partial_low_rank(M, K: int):
    """Best rank-``K`` approximation of ``M`` and its ``K`` leading singular values."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("M must be a matrix")
    if not 1 <= K <= min(M.shape):
        raise ValueError(f"K={K} outside [1, {min(M.shape)}]")
    U, s, Vt = _svd(M)
    return (U[:, :K] * s[:K]) @ Vt[:K], s[:K].copy()


def objective(E, L, S, lam: float) -> float:
    R = (L + S - E).ravel()
    return 0.5 * float(R @ R) + lam * float(np.abs(S).sum())


def _numerical_rank(s: np.ndarray) -> int:
    return int(np.sum(s > 1e-10))


def fast_pcp(E, config: RpcaConfig | None = None) -> RpcaResult:
    """Decompose ``E`` into low-rank ``L`` and sparse ``S``.

    Each iteration sets ``L`` to the best rank-``K`` approximation of ``E - S``
    and ``S`` to ``shrink(E - L, lam)``. After an ``L`` update at a settled
    iterate, ``K`` grows by one when the next singular value ``u[K]`` exceeds
    ``eps`` times the sum of the first ``K + 1``. The loop stops when the
    relative change of ``L`` drops below ``tol`` with no rank growth pending,
    or after ``max_iter`` iterations (``converged`` is then False).
    """
    E = np.asarray(E, dtype=float)
    if E.ndim != 2 or E.size == 0:
        raise ValueError("E must be a non-empty matrix")
    if not np.all(np.isfinite(E)):
        raise ValueError("E contains non-finite entries")
    cfg = (config or RpcaConfig()).resolved(E.shape)
    lam, K = cfg.lam, cfg.k0

    S = np.zeros_like(E)
    L_prev = np.zeros_like(E)
    history: list[float] = []
    converged = False
    s_kept = np.zeros(0)
    K_used = K
    it = 0
    for it in range(1, cfg.max_iter + 1):
        M = E - S
        s, Vt = _right_spectrum(M)
        K_used = K
        L = _truncate(M, Vt, K)
        s_kept = s[:K].copy()
        S = shrink(E - L, lam)
        history.append(objective(E, L, S, lam))

        change = np.linalg.norm(L - L_prev) / max(1.0, np.linalg.norm(L_prev))
        L_prev = L
        if change < cfg.settle_tol and K < cfg.max_rank and K < len(s):
            total = s[: K + 1].sum()
            if total > 0 and s[K] / total > cfg.eps:
                K += 1
                continue
        if change < cfg.tol:
            converged = True
            break

    if not converged:
        log.warning("fast_pcp: no convergence after %d iterations", cfg.max_iter)

    polish_its = 0
    if cfg.polish:
        L, S, s_kept, polish_its = _polish(E, L, S, K_used, cfg)

    rank = _numerical_rank(s_kept)
    norm_e = np.linalg.norm(E)
    residual = float(np.linalg.norm(L + S - E) / norm_e) if norm_e > 0 else 0.0
    return RpcaResult(
        L=L,
        S=S,
        rank=rank,
        iterations=it,
        residual=residual,
        converged=converged,
        singular_values=s_kept,
        objective=history,
        polish_iterations=polish_its,
    )


def _polish(E, L, S, K, cfg: RpcaConfig):
    """Refit ``L`` with the support of ``S`` frozen and ``S`` absorbing it exactly."""
    support = S != 0
    s_kept = np.zeros(0)
    its = 0
    for its in range(1, cfg.polish_iter + 1):
        M = E - S
        s, Vt = _right_spectrum(M)
        L_new = _truncate(M, Vt, K)
        s_kept = s[:K].copy()
        S = np.where(support, E - L_new, 0.0)
        delta = np.linalg.norm(L_new - L)
        L = L_new
        if delta <= cfg.polish_tol * max(1.0, np.linalg.norm(L)):
            break
    return L, S, s_kept, its


def dump_result(result: RpcaResult, directory) -> list[Path]:
    """Write ``L``, ``S`` and the singular values as ASCII matrices."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, arr in (("L", result.L), ("S", result.S), ("singular_values", result.singular_values)):
        path = out / f"{name}.txt"
        np.savetxt(path, np.atleast_2d(arr) if arr.ndim == 1 else arr, fmt="%.9g")
        paths.append(path)
    return paths
