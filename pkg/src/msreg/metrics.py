"""Registration quality metrics: hit ratio, FMR, scaled registration error."""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud, RigidTransform
from .registration import Correspondences

DEFAULT_TAU1 = 0.1
DEFAULT_TAU2 = 0.05


def hit_ratio(
    matches: Correspondences,
    x_points: np.ndarray,
    y_points: np.ndarray,
    T_gt: RigidTransform,
    tau1: float = DEFAULT_TAU1,
) -> float:
    """Fraction of matches within tau1 of their ground-truth position.

    Defined as 0 for an empty match set.
    """
    if tau1 <= 0:
        raise ValueError("tau1 must be positive")
    if len(matches) == 0:
        return 0.0
    resid = np.linalg.norm(
        T_gt.apply(np.asarray(x_points)[matches.i]) - np.asarray(y_points)[matches.j], axis=1
    )
    return float(np.mean(resid <= tau1))


def fmr(hit_ratios, tau2: float = DEFAULT_TAU2) -> float:
    """Fraction of pairs whose hit ratio reaches tau2."""
    if not 0 < tau2 <= 1:
        raise ValueError("tau2 must be in (0, 1]")
    h = np.asarray(hit_ratios, dtype=np.float64)
    if h.size == 0:
        raise ValueError("fmr needs at least one hit ratio")
    return float(np.mean(h >= tau2))


def sre_pair(X: PointCloud, T_gt: RigidTransform, T_est: RigidTransform) -> float:
    """Mean displacement between the two transforms over X's points,
    each normalized by that point's distance to the transformed centroid.

    Points exactly at the centroid are excluded; all-coincident clouds
    are an error.
    """
    pts = X.points
    if len(pts) < 2:
        raise ValueError("SRE needs at least 2 points")
    centroid = pts.mean(axis=0)
    num = np.linalg.norm(T_gt.apply(pts) - T_est.apply(pts), axis=1)
    den = np.linalg.norm(T_gt.apply(pts) - T_gt.apply(centroid[None, :]), axis=1)
    keep = den > 0
    if not keep.any():
        raise ValueError("all points coincide with the centroid")
    return float(np.mean(num[keep] / den[keep]))


def sre_median(values) -> float:
    """Lower median: element floor((N-1)/2) of the sorted values."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("median of empty sequence")
    return float(v[(v.size - 1) // 2])
