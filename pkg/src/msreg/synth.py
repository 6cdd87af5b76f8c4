"""Synthetic indoor-style scenes for desk-scale experiments.

A scene is a seeded arrangement of a ground plane, two walls, boxes and
spheres, sampled on their surfaces. The "uniform" profile samples
surfaces evenly; "lidar" thins points with distance from a virtual
sensor, giving the strong density falloff of real scans.
"""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud, random_rotation

PROFILES = ("uniform", "lidar")


def _sample_rect(rng, origin, u_vec, v_vec, n):
    uv = rng.random((n, 2))
    return origin + uv[:, :1] * u_vec + uv[:, 1:] * v_vec


def _sample_box_surface(rng, center, sides, n, rot=None):
    """Points on the five visible faces of a box (no bottom).

    rot, when given, orients the box about its center so scenes carry
    edges and faces at diverse orientations.
    """
    sx, sy, sz = sides
    areas = np.array([sx * sy, sx * sz, sx * sz, sy * sz, sy * sz], dtype=np.float64)
    counts = np.maximum((n * areas / areas.sum()).astype(int), 1)
    lo = -np.array([sx, sy, sz]) / 2
    faces = []
    # top
    faces.append(_sample_rect(rng, lo + [0, 0, sz], [sx, 0, 0], [0, sy, 0], counts[0]))
    # y- and y+ sides
    faces.append(_sample_rect(rng, lo, [sx, 0, 0], [0, 0, sz], counts[1]))
    faces.append(_sample_rect(rng, lo + [0, sy, 0], [sx, 0, 0], [0, 0, sz], counts[2]))
    # x- and x+ sides
    faces.append(_sample_rect(rng, lo, [0, sy, 0], [0, 0, sz], counts[3]))
    faces.append(_sample_rect(rng, lo + [sx, 0, 0], [0, sy, 0], [0, 0, sz], counts[4]))
    pts = np.concatenate(faces, axis=0)
    if rot is not None:
        pts = pts @ rot.T
    return pts + center


def _sample_sphere_surface(rng, center, radius, n):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return center + radius * v


def synth_scene(
    rng: np.random.Generator,
    extent: float = 5.0,
    profile: str = "uniform",
    density: float = 600.0,
) -> PointCloud:
    """Deterministic synthetic scene; density is points per square meter."""
    if extent <= 0:
        raise ValueError("extent must be positive")
    if profile not in PROFILES:
        raise ValueError(f"profile must be one of {PROFILES}, got {profile!r}")
    e = float(extent)
    wall_h = 0.55 * e
    parts = []

    def rect(origin, u_vec, v_vec):
        area = np.linalg.norm(np.cross(u_vec, v_vec))
        n = max(int(round(area * density)), 1)
        parts.append(_sample_rect(rng, np.asarray(origin, float),
                                  np.asarray(u_vec, float), np.asarray(v_vec, float), n))

    rect([0, 0, 0], [e, 0, 0], [0, e, 0])  # floor
    rect([0, 0, 0], [e, 0, 0], [0, 0, wall_h])  # wall y=0
    rect([0, 0, 0], [0, e, 0], [0, 0, wall_h])  # wall x=0

    n_boxes = int(rng.integers(4, 8))
    for _ in range(n_boxes):
        sides = rng.uniform(0.1 * e, 0.3 * e, size=3)
        center_xy = rng.uniform(0.2 * e, 0.8 * e, size=2)
        center = np.array([center_xy[0], center_xy[1], sides[2] / 2 + rng.uniform(0, 0.1 * e)])
        area = 2 * (sides[0] * sides[1] + sides[0] * sides[2] + sides[1] * sides[2])
        n = max(int(round(area * density * 0.6)), 5)
        rot = random_rotation(rng).R
        parts.append(_sample_box_surface(rng, center, sides, n, rot=rot))

    n_spheres = int(rng.integers(2, 5))
    for _ in range(n_spheres):
        radius = float(rng.uniform(0.05 * e, 0.12 * e))
        center = np.array(
            [rng.uniform(0.2 * e, 0.8 * e), rng.uniform(0.2 * e, 0.8 * e),
             rng.uniform(radius, 0.4 * e)]
        )
        n = max(int(round(4 * np.pi * radius**2 * density * 0.6)), 5)
        parts.append(_sample_sphere_surface(rng, center, radius, n))

    # small landmark clutter: localizable blobs scattered over the floor
    n_clutter = int(rng.integers(10, 18))
    for _ in range(n_clutter):
        radius = float(rng.uniform(0.015 * e, 0.035 * e))
        center = np.array(
            [rng.uniform(0.05 * e, 0.95 * e), rng.uniform(0.05 * e, 0.95 * e), radius]
        )
        n = max(int(round(4 * np.pi * radius**2 * density * 1.2)), 8)
        parts.append(_sample_sphere_surface(rng, center, radius, n))

    points = np.concatenate(parts, axis=0)
    if profile == "lidar":
        sensor = np.array([rng.uniform(0.3 * e, 0.7 * e),
                           rng.uniform(0.3 * e, 0.7 * e), 0.35 * e])
        r = np.linalg.norm(points - sensor, axis=1)
        r0 = 0.25 * e
        keep_p = np.minimum(1.0, (r0 / np.maximum(r, 1e-6)) ** 2)
        points = points[rng.random(len(points)) < keep_p]
    return PointCloud(points)
