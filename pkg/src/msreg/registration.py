"""Descriptor matching and robust rigid pose estimation.

Matching is nearest neighbor in descriptor space with a mutual
(symmetric) consistency filter; the pose comes from RANSAC over
3-correspondence samples solved in closed form (SVD alignment) and
refit on the best inlier set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, RigidTransform
from .errors import DegenerateInputError
from .model import Model, forward_multiscale


@dataclass(frozen=True)
class Correspondences:
    """Matched index pairs with their descriptor-space distance."""

    i: np.ndarray
    j: np.ndarray
    feat_dist: np.ndarray

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.int64).reshape(-1)
        j = np.asarray(self.j, dtype=np.int64).reshape(-1)
        d = np.asarray(self.feat_dist, dtype=np.float64).reshape(-1)
        if not (len(i) == len(j) == len(d)):
            raise ValueError("index and distance arrays must have equal length")
        if len(d) and d.min() < 0:
            raise ValueError("feat_dist must be non-negative")
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "feat_dist", d)

    def __len__(self) -> int:
        return self.i.shape[0]


def sample_keypoints(cloud: PointCloud, n: int, rng: np.random.Generator) -> np.ndarray:
    """n uniform indices without replacement (all indices if n >= N)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n >= len(cloud):
        return np.arange(len(cloud), dtype=np.int64)
    return np.sort(rng.choice(len(cloud), size=n, replace=False)).astype(np.int64)


def match_descriptors(fx: np.ndarray, fy: np.ndarray) -> Correspondences:
    """For each X descriptor, the Y descriptor at minimal Euclidean distance.

    Ties go to the lower Y index. Distances are computed in float64.
    """
    fx = np.asarray(fx, dtype=np.float64)
    fy = np.asarray(fy, dtype=np.float64)
    if fx.ndim != 2 or fy.ndim != 2 or fx.shape[1] != fy.shape[1]:
        raise ValueError(f"descriptor dimensions disagree: {fx.shape} vs {fy.shape}")
    if len(fx) == 0 or len(fy) == 0:
        raise ValueError("descriptor sets must be non-empty")
    d2 = (
        np.sum(fx**2, axis=1)[:, None]
        + np.sum(fy**2, axis=1)[None, :]
        - 2.0 * (fx @ fy.T)
    )
    j = np.argmin(d2, axis=1)  # first minimum = lowest index on ties
    best = np.maximum(d2[np.arange(len(fx)), j], 0.0)
    return Correspondences(np.arange(len(fx)), j, np.sqrt(best))


def symmetric_filter(matches_xy: Correspondences, matches_yx: Correspondences) -> Correspondences:
    """Keep (i, j) iff i maps to j and j maps back to i."""
    back = {int(i): int(j) for i, j in zip(matches_yx.i, matches_yx.j)}
    keep = [n for n in range(len(matches_xy))
            if back.get(int(matches_xy.j[n])) == int(matches_xy.i[n])]
    keep = np.asarray(keep, dtype=np.int64)
    return Correspondences(matches_xy.i[keep], matches_xy.j[keep], matches_xy.feat_dist[keep])


def kabsch(a: np.ndarray, b: np.ndarray, weights=None) -> RigidTransform:
    """Least-squares rigid alignment minimizing sum w ||R a + t - b||^2.

    SVD-based, with the reflection case corrected by flipping the
    smallest singular direction. Raises DegenerateInputError for fewer
    than 3 pairs or (near-)collinear configurations.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"point arrays must both be (K, 3), got {a.shape} and {b.shape}")
    if len(a) < 3:
        raise DegenerateInputError(f"need at least 3 correspondences, got {len(a)}")
    if weights is None:
        w = np.full(len(a), 1.0 / len(a))
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(a),) or w.min() < 0 or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        w = w / w.sum()
    ca = w @ a
    cb = w @ b
    h = (a - ca).T @ ((b - cb) * w[:, None])
    u, s, vt = np.linalg.svd(h)
    if s[1] <= 1e-9 * max(s[0], 1e-30):
        raise DegenerateInputError("correspondences are collinear or coincident")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, cb - rot @ ca)


@dataclass(frozen=True)
class RansacConfig:
    max_iters: int = 50_000
    inlier_threshold: float = 0.1
    min_sample: int = 3
    confidence: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if self.min_sample != 3:
            raise ValueError("min_sample is fixed at 3")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must be in (0, 1)")


@dataclass(frozen=True)
class RansacResult:
    transform: RigidTransform | None
    inliers: np.ndarray
    num_iters: int
    success: bool


_SCALE_RATIO_TOL = 0.1


def _sample_scale_consistent(a, b):
    """Pairwise-distance ratio check that cheaply rejects bad samples."""
    for p in range(3):
        q = (p + 1) % 3
        da = np.linalg.norm(a[p] - a[q])
        db = np.linalg.norm(b[p] - b[q])
        if abs(da - db) > _SCALE_RATIO_TOL * max(da, db):
            return False
    return True


def ransac_registration(a: np.ndarray, b: np.ndarray, config: RansacConfig) -> RansacResult:
    """Robust rigid fit of matched point pairs a[k] -> b[k].

    Samples 3 correspondences per iteration, counts inliers by residual,
    keeps the best model, and refits on its inlier set. Deterministic
    for a fixed seed; early exit on the standard confidence bound.
    Success needs more than a minimal sample's worth of inliers (unless
    only 3 correspondences were given).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ValueError("matched point arrays must both be (K, 3)")
    k = len(a)
    if k < 3:
        return RansacResult(None, np.empty(0, dtype=np.int64), 0, False)
    need = 3 if k == 3 else 4
    rng = np.random.default_rng(config.seed)
    thr = config.inlier_threshold
    best_count = 0
    best_inliers = None
    iters_done = 0
    for it in range(config.max_iters):
        iters_done = it + 1
        sel = rng.choice(k, size=3, replace=False)
        sa, sb = a[sel], b[sel]
        if not _sample_scale_consistent(sa, sb):
            continue
        try:
            t = kabsch(sa, sb)
        except DegenerateInputError:
            continue
        resid = np.linalg.norm(t.apply(a) - b, axis=1)
        count = int(np.sum(resid <= thr))
        if count > best_count:
            best_count = count
            best_inliers = np.nonzero(resid <= thr)[0]
            w = count / k
            if w >= 1.0:
                break
            denom = np.log1p(-min(w**3, 1 - 1e-12))
            if iters_done >= np.log1p(-config.confidence) / denom:
                break
    if best_count < need or best_inliers is None:
        return RansacResult(None, np.empty(0, dtype=np.int64), iters_done, False)
    try:
        refit = kabsch(a[best_inliers], b[best_inliers])
    except DegenerateInputError:
        return RansacResult(None, np.empty(0, dtype=np.int64), iters_done, False)
    resid = np.linalg.norm(refit.apply(a) - b, axis=1)
    inliers = np.nonzero(resid <= thr)[0]
    return RansacResult(refit, inliers, iters_done, True)


@dataclass(frozen=True)
class RegistrationOutcome:
    transform: RigidTransform | None
    matches: Correspondences  # symmetric-filtered, indices into the full clouds
    inliers: np.ndarray  # rows of `matches` accepted by RANSAC
    descriptor_time_s: float
    total_time_s: float
    success: bool


def register_pair(
    model: Model,
    X: PointCloud,
    Y: PointCloud,
    n_keypoints: int = 5000,
    ransac_config: RansacConfig | None = None,
    seed: int = 0,
) -> RegistrationOutcome:
    """Full pipeline: descriptors, keypoints, mutual matching, RANSAC.

    Descriptor extraction time is reported separately from the total.
    """
    ransac_config = ransac_config or RansacConfig(seed=seed)
    t0 = time.perf_counter()
    fx = forward_multiscale(model, X)
    fy = forward_multiscale(model, Y)
    t_desc = time.perf_counter() - t0
    rng = np.random.default_rng([seed, 3])
    kx = sample_keypoints(X, n_keypoints, rng)
    ky = sample_keypoints(Y, n_keypoints, rng)
    m_xy = match_descriptors(fx[kx], fy[ky])
    m_yx = match_descriptors(fy[ky], fx[kx])
    filtered = symmetric_filter(m_xy, m_yx)
    matches = Correspondences(kx[filtered.i], ky[filtered.j], filtered.feat_dist)
    result = ransac_registration(
        X.points[matches.i], Y.points[matches.j], ransac_config
    )
    total = time.perf_counter() - t0
    return RegistrationOutcome(
        transform=result.transform,
        matches=matches,
        inliers=result.inliers,
        descriptor_time_s=t_desc,
        total_time_s=total,
        success=result.success,
    )
