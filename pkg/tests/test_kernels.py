import numpy as np
import pytest

from msreg import kernels
from msreg.kernels import neighbor_py
from msreg.sparseops import KERNEL_OFFSETS

HAS_COMPILED = "compiled" in kernels.available_backends()


def brute_force_map(in_coords, out_coords, offsets, mode):
    """Reference construction by dictionary lookup, output order preserved."""
    table = {tuple(c): i for i, c in enumerate(in_coords)}
    pairs = []
    for off in offsets:
        ins, outs = [], []
        for row, oc in enumerate(out_coords):
            if mode == "same":
                nb = oc + off
            elif mode == "down":
                nb = 2 * oc + off
            else:
                c2 = oc - off
                if np.any(c2 % 2 != 0):
                    continue
                nb = c2 // 2
            hit = table.get(tuple(nb))
            if hit is not None:
                ins.append(hit)
                outs.append(row)
        pairs.append((np.array(ins, dtype=np.int64), np.array(outs, dtype=np.int64)))
    return pairs


def random_coords(rng, n, lo=-6, hi=6):
    return np.unique(rng.integers(lo, hi, size=(n, 3)), axis=0)


@pytest.mark.parametrize("mode", ["same", "down", "up"])
def test_python_backend_matches_brute_force(mode):
    rng = np.random.default_rng(0)
    for _ in range(20):
        coords = random_coords(rng, 80)
        coarse = np.unique(coords // 2, axis=0)
        in_c, out_c = {
            "same": (coords, coords),
            "down": (coords, coarse),
            "up": (coarse, coords),
        }[mode]
        got = neighbor_py.build_kernel_map(in_c, out_c, KERNEL_OFFSETS, mode)
        want = brute_force_map(in_c, out_c, KERNEL_OFFSETS, mode)
        for (gi, go), (wi, wo) in zip(got, want):
            np.testing.assert_array_equal(gi, wi)
            np.testing.assert_array_equal(go, wo)


@pytest.mark.skipif(not HAS_COMPILED, reason="compiled backend not built")
@pytest.mark.parametrize("mode", ["same", "down", "up"])
def test_backends_bit_identical(mode):
    rng = np.random.default_rng(1)
    for trial in range(30):
        coords = random_coords(rng, int(rng.integers(1, 300)), -20, 20)
        coarse = np.unique(coords // 2, axis=0)
        in_c, out_c = {
            "same": (coords, coords),
            "down": (coords, coarse),
            "up": (coarse, coords),
        }[mode]
        with kernels.use_backend("python"):
            a = kernels.build_kernel_map(in_c, out_c, KERNEL_OFFSETS, mode)
        with kernels.use_backend("compiled"):
            b = kernels.build_kernel_map(in_c, out_c, KERNEL_OFFSETS, mode)
        for (ai, ao), (bi, bo) in zip(a, b):
            np.testing.assert_array_equal(ai, bi)
            np.testing.assert_array_equal(ao, bo)


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_duplicate_coordinates_rejected(backend):
    coords = np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0]])
    with kernels.use_backend(backend):
        with pytest.raises(ValueError, match="duplicate"):
            kernels.build_kernel_map(coords, coords, KERNEL_OFFSETS, "same")


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_out_of_range_coordinates_rejected(backend):
    coords = np.array([[1 << 21, 0, 0]])
    with kernels.use_backend(backend):
        with pytest.raises(ValueError, match="exceed"):
            kernels.build_kernel_map(coords, coords, KERNEL_OFFSETS, "same")


def test_unknown_mode_rejected():
    coords = np.zeros((1, 3), dtype=np.int64)
    with pytest.raises(ValueError, match="mode"):
        kernels.build_kernel_map(coords, coords, KERNEL_OFFSETS, "sideways")


def test_backend_selection_roundtrip():
    original = kernels.active_backend()
    with kernels.use_backend("python"):
        assert kernels.active_backend() == "python"
    assert kernels.active_backend() == original
    with pytest.raises(ValueError, match="unknown backend"):
        kernels.set_backend("gpu")
