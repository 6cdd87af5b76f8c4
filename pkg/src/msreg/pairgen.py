"""Self-supervised pair generation from single clouds.

Two partially overlapping views are cut out of one cloud (random crop
around nearby centers), thinned with a radial periodic mask to mimic
uneven scan sampling, and augmented (shared global scale, independent
rotation and jitter per view). Because both views come from the same
cloud, the relative rigid transform between them is known exactly up to
the jitter noise, which is what makes the pairs usable as supervision.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .cloud import PointCloud, RigidTransform, compose, invert, random_rotation
from .cloud_io import load_cloud, save_cloud
from .errors import EmptyCropError, PairGenerationError
from .spatial import build_index


@dataclass(frozen=True)
class UdgeParams:
    crop_shape: str = "cube"  # "cube" or "sphere"
    crop_size: float = 3.0  # cube side / sphere diameter; inf disables cropping
    period_range: tuple[float, float] = (0.02, 0.08)
    alpha_range: tuple[float, float] = (1.0, 1.0)  # (1, 1) disables periodic sampling
    jitter_sigma: float = 0.007
    scale_range: tuple[float, float] = (0.9, 1.2)
    rotate: bool = True
    min_overlap: float = 0.3
    overlap_radius: float = 0.1
    max_retries: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.crop_shape not in ("cube", "sphere"):
            raise ValueError(f"crop_shape must be 'cube' or 'sphere', got {self.crop_shape!r}")
        a0, a1 = self.alpha_range
        if not (0 <= a0 <= a1 <= 1):
            raise ValueError(f"alpha_range must satisfy 0 <= a0 <= a1 <= 1, got {self.alpha_range}")
        if self.period_range[0] <= 0:
            raise ValueError("period must be positive")
        if self.scale_range[0] > self.scale_range[1]:
            raise ValueError("scale_range must be (min, max)")
        if not (0 <= self.min_overlap <= 1):
            raise ValueError("min_overlap must be in [0, 1]")
        if self.crop_size <= 0:
            raise ValueError("crop_size must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["period_range"] = list(self.period_range)
        d["alpha_range"] = list(self.alpha_range)
        d["scale_range"] = list(self.scale_range)
        return d

    @staticmethod
    def from_dict(d: dict) -> "UdgeParams":
        d = dict(d)
        for key in ("period_range", "alpha_range", "scale_range"):
            if key in d:
                d[key] = tuple(d[key])
        return UdgeParams(**d)


@dataclass(frozen=True)
class PairSample:
    """Two views and the rigid transform mapping X-frame to Y-frame."""

    X: PointCloud
    Y: PointCloud
    T_gt: RigidTransform
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.X) < 1 or len(self.Y) < 1:
            raise ValueError("both views must be non-empty")


def random_crop(cloud: PointCloud, center, shape: str, size: float) -> PointCloud:
    """Keep points inside a cube (side) or sphere (diameter) around center.

    Boundary-inclusive. Raises EmptyCropError when nothing survives so
    the caller can redraw.
    """
    if size <= 0:
        raise ValueError("crop size must be positive")
    c = np.asarray(center, dtype=np.float64).reshape(3)
    if not math.isfinite(size):
        return cloud
    half = size / 2.0
    if shape == "cube":
        keep = (np.abs(cloud.points - c) <= half).all(axis=1)
    elif shape == "sphere":
        keep = np.linalg.norm(cloud.points - c, axis=1) <= half
    else:
        raise ValueError(f"unknown crop shape {shape!r}")
    if not keep.any():
        raise EmptyCropError("crop kept no points")
    feats = cloud.features[keep] if cloud.features is not None else None
    return PointCloud(cloud.points[keep], feats)


def periodic_sampling(cloud: PointCloud, c, T: float, alpha: float) -> PointCloud:
    """Radial periodic mask: keep i iff |cos(2*pi/T * ||x_i - c||)| > cos(alpha*pi).

    alpha=1 keeps every point, alpha=0 removes every point. An empty
    result is a legal return; callers redraw in that case.
    """
    if T <= 0:
        raise ValueError("period T must be positive")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must be in [0, 1]")
    c = np.asarray(c, dtype=np.float64).reshape(3)
    r = np.linalg.norm(cloud.points - c, axis=1)
    keep = np.abs(np.cos((2 * np.pi / T) * r)) > np.cos(alpha * np.pi)
    feats = cloud.features[keep] if cloud.features is not None else None
    return PointCloud(cloud.points[keep], feats)


def augment(
    cloud: PointCloud,
    params: UdgeParams,
    rng: np.random.Generator,
    scale: float | None = None,
) -> tuple[PointCloud, RigidTransform]:
    """Scale, rotate (uniform SO(3)), jitter; returns the rigid part applied.

    The global scale is drawn from params.scale_range unless given
    explicitly (pair generation shares one scale across both views so
    the relative transform stays rigid).
    """
    if scale is None:
        scale = float(rng.uniform(*params.scale_range))
    rot = random_rotation(rng) if params.rotate else RigidTransform.identity()
    pts = (cloud.points * scale) @ rot.R.T
    if params.jitter_sigma > 0:
        pts = pts + rng.normal(0.0, params.jitter_sigma, size=pts.shape)
    return PointCloud(pts, cloud.features), rot


def estimate_overlap(X: PointCloud, Y: PointCloud, T_gt: RigidTransform, radius: float) -> float:
    """Fraction of X points with a Y point within radius after T_gt."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    tx = T_gt.apply(X.points)
    tree = build_index(Y.points)
    d, _ = tree._tree.query(tx, k=1)
    return float(np.mean(d <= radius))


def _draw_view(cloud, center, params, rng):
    view = random_crop(cloud, center, params.crop_shape, params.crop_size)
    alpha = float(rng.uniform(*params.alpha_range))
    period = float(rng.uniform(*params.period_range))
    if alpha < 1.0:
        lo = view.points.min(axis=0)
        hi = view.points.max(axis=0)
        ps_center = rng.uniform(lo, hi)
        view = periodic_sampling(view, ps_center, period, alpha)
        if len(view) == 0:
            raise EmptyCropError("periodic sampling kept no points")
    return view


def generate_pair(
    cloud: PointCloud,
    params: UdgeParams,
    rng: np.random.Generator,
    source_id: str = "cloud",
) -> PairSample:
    """Draw one training pair from a single cloud.

    Crop centers are cloud points; the second is drawn within
    crop_size/2 of the first so the views overlap. Redraws until the
    estimated overlap reaches params.min_overlap or the retry budget
    runs out.
    """
    if len(cloud) < 100:
        raise ValueError(f"source cloud too small ({len(cloud)} points, need >= 100)")
    tree = build_index(cloud.points)
    for attempt in range(params.max_retries):
        try:
            i1 = int(rng.integers(len(cloud)))
            c1 = cloud.points[i1]
            if math.isfinite(params.crop_size):
                near = tree._tree.query_ball_point(c1, params.crop_size / 2.0)
            else:
                near = range(len(cloud))
            i2 = int(np.sort(np.asarray(near, dtype=np.int64))[rng.integers(len(near))])
            c2 = cloud.points[i2]
            view1 = _draw_view(cloud, c1, params, rng)
            view2 = _draw_view(cloud, c2, params, rng)
            shared_scale = float(rng.uniform(*params.scale_range))
            x_view, rot1 = augment(view1, params, rng, scale=shared_scale)
            y_view, rot2 = augment(view2, params, rng, scale=shared_scale)
        except EmptyCropError:
            continue
        t_gt = compose(rot2, invert(rot1))
        overlap = estimate_overlap(x_view, y_view, t_gt, params.overlap_radius)
        if overlap >= params.min_overlap:
            return PairSample(
                X=x_view,
                Y=y_view,
                T_gt=t_gt,
                provenance={
                    "source_cloud": source_id,
                    "attempt": attempt,
                    "scale": shared_scale,
                    "overlap": overlap,
                },
            )
    raise PairGenerationError(
        f"could not generate an overlapping pair from {source_id!r} "
        f"after {params.max_retries} attempts"
    )


# ---------------------------------------------------------------------------
# Pair manifests: a JSON list of materialized pair files.

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class PairRecord:
    pair_id: str
    x_path: str
    y_path: str
    transform: RigidTransform | None
    source_cloud: str = ""
    seed: int | None = None
    params: dict | None = None


def save_pair_manifest(records: list[PairRecord], path) -> None:
    entries = []
    for r in records:
        entry = {
            "id": r.pair_id,
            "x": r.x_path,
            "y": r.y_path,
            "source_cloud": r.source_cloud,
            "seed": r.seed,
            "params": r.params,
        }
        if r.transform is not None:
            entry["gt_rotation"] = [float(v) for v in r.transform.R.ravel()]
            entry["gt_translation"] = [float(v) for v in r.transform.t]
        entries.append(entry)
    payload = {"format_version": MANIFEST_VERSION, "pairs": entries}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_pair_manifest(path) -> list[PairRecord]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format_version") != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {payload.get('format_version')!r}")
    records = []
    for entry in payload["pairs"]:
        transform = None
        if "gt_rotation" in entry:
            transform = RigidTransform(
                np.array(entry["gt_rotation"], dtype=np.float64).reshape(3, 3),
                np.array(entry["gt_translation"], dtype=np.float64),
            )
        records.append(
            PairRecord(
                pair_id=entry["id"],
                x_path=entry["x"],
                y_path=entry["y"],
                transform=transform,
                source_cloud=entry.get("source_cloud", ""),
                seed=entry.get("seed"),
                params=entry.get("params"),
            )
        )
    return records


def materialize_pairs(samples: list[PairSample], out_dir, manifest_path,
                      fmt: str = "ply_binary_le") -> list[PairRecord]:
    """Write pair clouds under out_dir and the manifest referencing them.

    Cloud paths in the manifest are relative to the manifest directory.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_dir = Path(manifest_path).resolve().parent
    ext = "xyz" if fmt == "xyz_text" else "ply"
    records = []
    for k, sample in enumerate(samples):
        pair_id = f"pair_{k:04d}"
        x_file = out_dir / f"{pair_id}_x.{ext}"
        y_file = out_dir / f"{pair_id}_y.{ext}"
        save_cloud(sample.X, x_file, fmt)
        save_cloud(sample.Y, y_file, fmt)
        records.append(
            PairRecord(
                pair_id=pair_id,
                x_path=str(x_file.resolve().relative_to(manifest_dir)),
                y_path=str(y_file.resolve().relative_to(manifest_dir)),
                transform=sample.T_gt,
                source_cloud=str(sample.provenance.get("source_cloud", "")),
                seed=sample.provenance.get("pair_seed"),
            )
        )
    save_pair_manifest(records, manifest_path)
    return records


def load_pair(record: PairRecord, manifest_dir) -> PairSample:
    if record.transform is None:
        raise ValueError(f"pair {record.pair_id} has no ground-truth transform")
    base = Path(manifest_dir)
    x = load_cloud(base / record.x_path)
    y = load_cloud(base / record.y_path)
    return PairSample(x, y, record.transform, {"source_cloud": record.source_cloud})
