import numpy as np
import pytest

from msreg.cloud import PointCloud, RigidTransform, compose, random_rotation
from msreg.metrics import fmr, hit_ratio, sre_median, sre_pair
from msreg.registration import Correspondences


def corrs(i, j):
    i = np.asarray(i)
    return Correspondences(i, np.asarray(j), np.zeros(len(i)))


class TestHitRatio:
    def test_exact_matches_identity(self):
        pts = np.random.default_rng(0).normal(size=(10, 3))
        m = corrs(np.arange(10), np.arange(10))
        assert hit_ratio(m, pts, pts, RigidTransform.identity(), 0.1) == 1.0

    def test_hand_residuals(self):
        x = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        y = np.array([[0.05, 0, 0], [1.5, 0, 0]])
        m = corrs([0, 1], [0, 1])
        assert hit_ratio(m, x, y, RigidTransform.identity(), 0.1) == 0.5

    def test_empty_matches_zero(self):
        m = corrs([], [])
        assert hit_ratio(m, np.zeros((1, 3)), np.zeros((1, 3)),
                         RigidTransform.identity(), 0.1) == 0.0

    def test_monotone_in_tau1(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(50, 3))
        y = x + rng.normal(scale=0.1, size=(50, 3))
        m = corrs(np.arange(50), np.arange(50))
        taus = [0.01, 0.05, 0.1, 0.3, 1.0]
        vals = [hit_ratio(m, x, y, RigidTransform.identity(), t) for t in taus]
        assert vals == sorted(vals)


class TestFmr:
    def test_defaults_hand_case(self):
        assert fmr([0.04, 0.06], 0.05) == 0.5

    def test_all_ones(self):
        assert fmr([1.0, 1.0, 1.0], 0.05) == 1.0

    def test_threshold_inclusive(self):
        assert fmr([0.05], 0.05) == 1.0

    def test_matches_brute_force_on_random_sets(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            h = rng.random(int(rng.integers(1, 30)))
            tau2 = float(rng.uniform(0.01, 1.0))
            want = sum(1 for v in h if v >= tau2) / len(h)
            assert abs(fmr(h, tau2) - want) < 1e-15

    def test_validation(self):
        with pytest.raises(ValueError):
            fmr([], 0.05)
        with pytest.raises(ValueError):
            fmr([0.5], 0.0)


class TestSrePair:
    def test_zero_for_equal_transforms(self):
        X = PointCloud(np.random.default_rng(0).normal(size=(20, 3)))
        T = RigidTransform.identity()
        assert sre_pair(X, T, T) == 0.0

    def test_hand_worked_translation(self):
        X = PointCloud(np.array([[1.0, 0, 0], [-1.0, 0, 0]]))
        T_est = RigidTransform(np.eye(3), [0.1, 0, 0])
        assert abs(sre_pair(X, RigidTransform.identity(), T_est) - 0.1) < 1e-12

    def test_linear_in_translation_offset(self):
        X = PointCloud(np.random.default_rng(1).normal(size=(30, 3)))
        I = RigidTransform.identity()
        a = sre_pair(X, I, RigidTransform(np.eye(3), [0.1, 0, 0]))
        b = sre_pair(X, I, RigidTransform(np.eye(3), [0.2, 0, 0]))
        assert abs(b - 2 * a) < 1e-12

    def test_invariant_to_left_composition(self):
        rng = np.random.default_rng(2)
        X = PointCloud(rng.normal(size=(25, 3)))
        T_gt = RigidTransform(random_rotation(rng).R, rng.normal(size=3))
        T_est = RigidTransform(random_rotation(rng).R, rng.normal(size=3))
        G = RigidTransform(random_rotation(rng).R, rng.normal(size=3))
        base = sre_pair(X, T_gt, T_est)
        moved = sre_pair(X, compose(G, T_gt), compose(G, T_est))
        assert abs(base - moved) < 1e-9

    def test_centroid_points_excluded(self):
        X = PointCloud(np.array([[0.0, 0, 0], [2.0, 0, 0], [-2.0, 0, 0]]))
        # centroid is the origin; the first point sits exactly on it
        val = sre_pair(X, RigidTransform.identity(), RigidTransform(np.eye(3), [0.2, 0, 0]))
        assert abs(val - 0.1) < 1e-12

    def test_coincident_cloud_rejected(self):
        X = PointCloud(np.zeros((3, 3)) + 1.0)
        with pytest.raises(ValueError, match="coincide"):
            sre_pair(X, RigidTransform.identity(), RigidTransform.identity())


class TestSreMedian:
    def test_singleton(self):
        assert sre_median([0.1]) == 0.1

    def test_odd_middle(self):
        assert sre_median([0.3, 0.1, 0.2]) == 0.2

    def test_even_lower_median(self):
        assert sre_median([0.4, 0.1, 0.2, 0.3]) == 0.2

    def test_outlier_robust(self):
        vals = [0.01] * 9 + [1e9]
        assert sre_median(vals) == 0.01

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sre_median([])
