"""Spatial radius graph, expression-similarity KNN graph, and the
symmetric GCN normalization of both.

Neighbor search is exact O(n^2); at the spot counts this package targets
that is cheaper and simpler than a spatial index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import NORM_EPS, SparseMatrix, Tensor
from .errors import ContractError

DEFAULT_RADIUS = 550.0
DEFAULT_KNN_K = 15


@dataclass(frozen=True)
class GraphPair:
    """Binary spatial/feature adjacencies plus their normalized operators."""

    spatial: SparseMatrix
    feature: SparseMatrix
    spatial_norm: SparseMatrix
    feature_norm: SparseMatrix


def _as_coords(coords) -> np.ndarray:
    arr = np.asarray(coords, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ContractError(f"coordinates must be (n, 2), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ContractError("coordinates are empty")
    if not np.isfinite(arr).all():
        raise ContractError("coordinates must be finite")
    return arr


def _binary_symmetric(n: int, mask: np.ndarray) -> SparseMatrix:
    rows, cols = np.nonzero(mask)
    return SparseMatrix(n, rows, cols, np.ones(rows.size), symmetric=True)


def build_spatial_graph(coords, radius: float) -> SparseMatrix:
    """Connect spots whose Euclidean distance is at most ``radius``."""
    pts = _as_coords(coords)
    if radius <= 0:
        raise ContractError(f"radius must be positive, got {radius}")
    n = pts.shape[0]
    dx = pts[:, 0:1] - pts[:, 0:1].T
    dy = pts[:, 1:2] - pts[:, 1:2].T
    within = dx * dx + dy * dy <= radius * radius
    np.fill_diagonal(within, False)
    return _binary_symmetric(n, within)


def build_feature_graph(x, k: int) -> SparseMatrix:
    """Union-symmetrized cosine KNN over the rows of ``x``.

    Ties in similarity are broken by ascending spot index; a spot is never
    its own candidate.
    """
    feats = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if feats.ndim != 2:
        raise ContractError(f"features must be a matrix, got shape {feats.shape}")
    n = feats.shape[0]
    if not 1 <= k < n:
        raise ContractError(f"need 1 <= k < n, got k={k}, n={n}")

    norms = np.sqrt((feats * feats).sum(axis=1, keepdims=True) + NORM_EPS)
    unit = feats / norms
    sims = unit @ unit.T
    np.fill_diagonal(sims, -np.inf)
    # Stable sort on descending similarity keeps ascending-index tie order.
    ranked = np.argsort(-sims, axis=1, kind="stable")[:, :k]

    pairs = set()
    for i in range(n):
        for j in ranked[i]:
            pairs.add((min(i, int(j)), max(i, int(j))))
    rows = [p for a, b in pairs for p in (a, b)]
    cols = [p for a, b in pairs for p in (b, a)]
    return SparseMatrix(n, rows, cols, np.ones(len(rows)), symmetric=True)


def normalize_adjacency(a: SparseMatrix) -> SparseMatrix:
    """Symmetric GCN normalization of a binary adjacency.

    Adds self-loops, then rescales entry (i, j) by the inverse square roots
    of the self-loop-augmented degrees of i and j.
    """
    if not a.symmetric:
        raise ContractError("adjacency must be flagged symmetric")
    if np.any(a.row_idx == a.col_idx):
        raise ContractError("adjacency must have a zero diagonal")

    degree = np.bincount(a.row_idx, weights=a.values, minlength=a.n) + 1.0
    inv_sqrt = 1.0 / np.sqrt(degree)

    # Grouped so mirror entries are bitwise equal (scalar * is commutative).
    off_vals = a.values * (inv_sqrt[a.row_idx] * inv_sqrt[a.col_idx])
    diag = np.arange(a.n)
    rows = np.concatenate([a.row_idx, diag])
    cols = np.concatenate([a.col_idx, diag])
    vals = np.concatenate([off_vals, inv_sqrt * inv_sqrt])
    return SparseMatrix(a.n, rows, cols, vals, symmetric=True)


def build_graph_pair(coords, features, radius: float = DEFAULT_RADIUS,
                     k: int = DEFAULT_KNN_K) -> GraphPair:
    spatial = build_spatial_graph(coords, radius)
    feature = build_feature_graph(features, k)
    return GraphPair(
        spatial=spatial,
        feature=feature,
        spatial_norm=normalize_adjacency(spatial),
        feature_norm=normalize_adjacency(feature),
    )
