import math

import numpy as np
import pytest

from msreg.benchrun import EvalConfig, run_benchmark, write_report
from msreg.cloud import PointCloud
from msreg.model import ModelConfig, build_model
from msreg.pairgen import (
    PairRecord,
    UdgeParams,
    generate_pair,
    materialize_pairs,
    save_pair_manifest,
    load_pair_manifest,
)

TOY_CFG = ModelConfig(num_heads=2, base_voxel_size=0.25, descriptor_dim=8,
                      widths=(4, 6), num_down_levels=1)

IDENTITY_PARAMS = UdgeParams(
    crop_size=math.inf, alpha_range=(1.0, 1.0), period_range=(0.1, 0.2),
    jitter_sigma=0.0, scale_range=(1.0, 1.0), rotate=False,
    min_overlap=0.0, overlap_radius=0.1,
)


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    base = tmp_path_factory.mktemp("bench")
    rng = np.random.default_rng(0)
    # spread out so voxels hold one point each: identity pairs then
    # match exactly instead of to same-voxel neighbors
    cloud = PointCloud(rng.uniform(0, 8.0, size=(500, 3)))
    pairs = [generate_pair(cloud, IDENTITY_PARAMS, np.random.default_rng(k)) for k in range(3)]
    path = base / "pairs.json"
    materialize_pairs(pairs, base / "data", path)
    return path


def test_identity_pairs_give_perfect_metrics(manifest):
    model = build_model(TOY_CFG, seed=0)
    records = load_pair_manifest(manifest)
    report = run_benchmark(model, records, EvalConfig(n_keypoints=400, seed=0),
                           manifest.parent)
    assert len(report.rows) == 3
    assert report.fmr == 1.0
    # a handful of coarse-voxel collisions keep this from exact zero
    assert report.sre_median < 1e-3
    assert report.num_failures == 0
    assert all(r.descriptor_time_s >= 0 for r in report.rows)


def test_unreadable_pair_counted_as_failure(manifest, tmp_path):
    records = load_pair_manifest(manifest)
    broken = records + [PairRecord("pair_bad", "missing_x.ply", "missing_y.ply",
                                   records[0].transform)]
    model = build_model(TOY_CFG, seed=0)
    report = run_benchmark(model, broken, EvalConfig(n_keypoints=400, seed=0),
                           manifest.parent)
    assert len(report.rows) == 4
    assert report.num_failures == 1
    assert report.rows[-1].failed
    # aggregates come from the three good rows only
    assert report.fmr == 1.0


def test_report_files_deterministic(manifest, tmp_path):
    model = build_model(TOY_CFG, seed=0)
    records = load_pair_manifest(manifest)
    outs = []
    for k in range(2):
        report = run_benchmark(model, records, EvalConfig(n_keypoints=400, seed=7),
                               manifest.parent)
        path = tmp_path / f"rep{k}.csv"
        write_report(report, path)
        outs.append(path.read_bytes())
        summary = path.with_suffix(".csv.summary.txt").read_text()
        assert "fmr 1.0" in summary
        assert path.with_suffix(".csv.timings.csv").exists()
    assert outs[0] == outs[1]


def test_empty_records_rejected():
    model = build_model(TOY_CFG, seed=0)
    with pytest.raises(ValueError, match="at least one pair"):
        run_benchmark(model, [], EvalConfig(), ".")


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(tau1=0.0)
    with pytest.raises(ValueError):
        EvalConfig(tau2=1.5)
    with pytest.raises(ValueError):
        EvalConfig(n_keypoints=0)
