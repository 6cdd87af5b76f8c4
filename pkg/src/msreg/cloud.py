"""Point cloud and rigid transform types, grid subsampling.

Coordinates are meters, stored as float64. A cloud is an ordered point
sequence; optional per-point feature rows ride along with it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-9


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts[None, :]
    if pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must be (N, 3), got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points with optional per-point feature rows.

    An empty cloud is a legal value (some operations return one);
    operations that need points validate at their own boundary.
    """

    points: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        pts = _as_points(self.points)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.features is not None:
            feats = np.asarray(self.features)
            if feats.ndim != 2 or feats.shape[0] != pts.shape[0]:
                raise ValueError(
                    f"features must have one row per point: {feats.shape} vs {pts.shape[0]} points"
                )
            if not np.all(np.isfinite(feats)):
                raise ValueError("feature values must be finite")
            object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: proper rotation matrix plus translation vector."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"R must be 3x3, got {R.shape}")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > ORTHO_TOL:
            raise ValueError(f"R is not orthonormal (max |R^T R - I| = {err:.3e})")
        d = np.linalg.det(R)
        if abs(d - 1.0) > ORTHO_TOL:
            raise ValueError(f"det(R) = {d!r}, not a proper rotation")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (N, 3) array of points through the transform."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.R.T + self.t


def apply_transform(cloud: PointCloud, transform: RigidTransform) -> PointCloud:
    """Transform every point; features are carried over unchanged."""
    return PointCloud(transform.apply(cloud.points), cloud.features)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying b first, then a."""
    return RigidTransform(a.R @ b.R, a.R @ b.t + a.t)


def invert(transform: RigidTransform) -> RigidTransform:
    Rt = transform.R.T
    return RigidTransform(Rt, -Rt @ transform.t)


def rotation_about_axis(axis, angle: float) -> RigidTransform:
    """Rotation by `angle` radians about a 3-vector axis, zero translation."""
    u = np.asarray(axis, dtype=np.float64)
    u = u / np.linalg.norm(u)
    c, s = np.cos(angle), np.sin(angle)
    cross = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    R = c * np.eye(3) + s * cross + (1 - c) * np.outer(u, u)
    return RigidTransform(R, np.zeros(3))


def random_rotation(rng: np.random.Generator) -> RigidTransform:
    """Uniform random rotation (Shoemake quaternion sampling)."""
    u1, u2, u3 = rng.random(3)
    q = np.array(
        [
            np.sqrt(1 - u1) * np.sin(2 * np.pi * u2),
            np.sqrt(1 - u1) * np.cos(2 * np.pi * u2),
            np.sqrt(u1) * np.sin(2 * np.pi * u3),
            np.sqrt(u1) * np.cos(2 * np.pi * u3),
        ]
    )
    x, y, z, w = q
    R = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
    # Re-orthonormalize so the constructor tolerance is met exactly.
    u_svd, _, vt = np.linalg.svd(R)
    R = u_svd @ vt
    if np.linalg.det(R) < 0:
        u_svd[:, -1] = -u_svd[:, -1]
        R = u_svd @ vt
    return RigidTransform(R, np.zeros(3))


@dataclass(frozen=True)
class VoxelMap:
    """Bookkeeping from grid subsampling.

    voxel_of[i] is the index of the occupied voxel that original point i
    fell into; representatives holds the centroid of each occupied voxel;
    voxel_coords holds the integer grid coordinate of each occupied voxel.
    """

    voxel_of: np.ndarray
    representatives: np.ndarray
    voxel_coords: np.ndarray
    voxel_size: float

    @property
    def num_voxels(self) -> int:
        return self.voxel_coords.shape[0]


def voxel_indices(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Integer voxel coordinate of each point: floor(p / voxel_size) per axis."""
    return np.floor(np.asarray(points, dtype=np.float64) / voxel_size).astype(np.int64)


def grid_subsample(cloud: PointCloud, voxel_size: float) -> tuple[PointCloud, VoxelMap]:
    """Quantize to a voxel grid, keeping one centroid per occupied voxel.

    The returned cloud has one point per occupied voxel, ordered by
    lexicographically sorted voxel coordinates (deterministic).
    """
    if voxel_size <= 0:
        raise ValueError(f"voxel_size must be positive, got {voxel_size}")
    if len(cloud) == 0:
        raise ValueError("cannot subsample an empty cloud")
    idx = voxel_indices(cloud.points, voxel_size)
    coords, inverse = np.unique(idx, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1).astype(np.int64)
    m = coords.shape[0]
    sums = np.zeros((m, 3), dtype=np.float64)
    np.add.at(sums, inverse, cloud.points)
    counts = np.bincount(inverse, minlength=m).astype(np.float64)
    reps = sums / counts[:, None]
    vmap = VoxelMap(inverse, reps, coords, float(voxel_size))
    return PointCloud(reps), vmap
