"""Distance and proximity kernels plus agglomerative clustering for batch diversity."""

from __future__ import annotations

import numpy as np

from . import _kernels


class GeometryError(ValueError):
    pass


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine distance in [0, 2]; any zero-norm operand yields 1 by convention."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise GeometryError(f"length mismatch: {a.shape} vs {b.shape}")
    na = float(np.sqrt(a @ a))
    nb = float(np.sqrt(b @ b))
    if na == 0.0 or nb == 0.0:
        return 1.0
    d = 1.0 - float(a @ b) / (na * nb)
    return min(max(d, 0.0), 2.0)


def proximity(u: np.ndarray, l: np.ndarray) -> float:
    """Similarity 1/(1 + distance): 1 at zero distance, 1/3 at the antipode."""
    return 1.0 / (1.0 + cosine_distance(u, l))


def proximity_from_distance(delta: np.ndarray | float):
    return 1.0 / (1.0 + delta)


def pairwise_distances(X: np.ndarray) -> np.ndarray:
    """Square matrix of pairwise cosine distances (diagonal fixed at 0)."""
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    return _kernels.pairwise_cosine(X)


def cross_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """|A| x |B| cosine distances between two point sets."""
    A = np.ascontiguousarray(np.asarray(A, dtype=np.float64))
    B = np.ascontiguousarray(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise GeometryError("feature dimensionality mismatch")
    return _kernels.cross_cosine(A, B)


def agglomerative_clusters(X: np.ndarray, k: int) -> np.ndarray:
    """Average-linkage agglomerative clustering down to k clusters.

    Returns an int label per row, numbered 0..k-1 in order of first appearance.
    Merges use cosine distance with deterministic lowest-pair-index
    tie-breaking, so results are reproducible for a fixed row order.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k < 1:
        raise GeometryError("k must be >= 1")
    if k > n:
        raise GeometryError(f"k={k} exceeds n={n}")
    D = pairwise_distances(X)
    return clusters_from_distances(D, k)


def clusters_from_distances(D: np.ndarray, k: int) -> np.ndarray:
    n = D.shape[0]
    if D.shape != (n, n):
        raise GeometryError("distance matrix must be square")
    if not 1 <= k <= n:
        raise GeometryError(f"k={k} outside [1, {n}]")
    return _kernels.average_linkage(np.ascontiguousarray(D, dtype=np.float64), k)
