"""Spatial search with brute-force-exact semantics.

A KD-tree accelerates the queries, but results are defined by exact
squared distances recomputed in float64 over a (slightly inflated)
candidate superset, so they match a naive scan including tie handling:
nearest_k breaks distance ties by lower point index, radius_search is
boundary-inclusive.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

_SLACK = 1e-9


class SpatialIndex:
    """Immutable index over a fixed point sequence."""

    def __init__(self, points):
        pts = np.array(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise ValueError(f"points must be (N, 3) with N >= 1, got {pts.shape}")
        pts.setflags(write=False)
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def build_index(points) -> SpatialIndex:
    return SpatialIndex(points)


def _exact_d2(points: np.ndarray, q: np.ndarray, idx) -> np.ndarray:
    diff = points[idx] - q
    return np.einsum("ij,ij->i", diff, diff)


def nearest_k(index: SpatialIndex, q, k: int) -> np.ndarray:
    """Indices of the k nearest points; ties broken by lower index."""
    n = len(index)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} indexed points")
    q = np.asarray(q, dtype=np.float64).reshape(3)
    d, _ = index._tree.query(q, k=k)
    dmax = float(np.max(d))
    cand = np.array(index._tree.query_ball_point(q, dmax * (1 + _SLACK)), dtype=np.int64)
    d2 = _exact_d2(index.points, q, cand)
    order = np.lexsort((cand, d2))
    return cand[order[:k]]


def radius_search(index: SpatialIndex, q, r: float) -> np.ndarray:
    """Ascending indices of all points with ||p - q|| <= r (empty is fine)."""
    if r < 0:
        raise ValueError(f"radius must be >= 0, got {r}")
    q = np.asarray(q, dtype=np.float64).reshape(3)
    cand = np.array(index._tree.query_ball_point(q, r * (1 + _SLACK)), dtype=np.int64)
    if cand.size == 0:
        return cand
    d2 = _exact_d2(index.points, q, cand)
    keep = cand[d2 <= r * r]
    return np.sort(keep)
