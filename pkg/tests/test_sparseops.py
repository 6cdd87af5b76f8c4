import numpy as np
import pytest

from msreg import kernels
from msreg.autograd import BatchNormState, Tape
from msreg.sparseops import (
    CENTER_OFFSET,
    KERNEL_OFFSETS,
    SparseTensor,
    batch_norm,
    concat,
    downsample_coords,
    linear,
    relu,
    sparse_conv,
    sparse_transposed_conv,
)


def identity_kernel(c, dtype=np.float64):
    k = np.zeros((27, c, c), dtype=dtype)
    k[CENTER_OFFSET] = np.eye(c)
    return k


class TestSparseTensor:
    def test_duplicate_coords_rejected(self):
        with pytest.raises(ValueError, match="unique"):
            SparseTensor(np.zeros((2, 3), dtype=np.int64), np.ones((2, 1)))

    def test_row_count_mismatch(self):
        with pytest.raises(ValueError, match="one row per voxel"):
            SparseTensor(np.array([[0, 0, 0]]), np.ones((2, 1)))

    def test_non_finite_feats_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            SparseTensor(np.array([[0, 0, 0]]), np.array([[np.inf]]))


class TestSparseConv:
    def test_identity_kernel_preserves_features(self):
        st = SparseTensor(np.array([[2, -1, 5]]), np.array([[3.0, -2.0]]))
        out = sparse_conv(st, identity_kernel(2), np.zeros(2))
        np.testing.assert_array_equal(out.coords, st.coords)
        np.testing.assert_allclose(out.feats, st.feats)

    def test_two_adjacent_voxels_all_ones_kernel(self):
        # each output sums itself and its neighbor, plus bias
        st = SparseTensor(np.array([[0, 0, 0], [1, 0, 0]]), np.ones((2, 1)))
        out = sparse_conv(st, np.ones((27, 1, 1)), np.array([0.5]))
        np.testing.assert_allclose(out.feats, [[2.5], [2.5]])

    def test_stride2_eight_voxel_block_collapses_to_one(self):
        coords = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)])
        st = SparseTensor(coords, np.ones((8, 1)))
        out = sparse_conv(st, np.ones((27, 1, 1)), np.zeros(1), stride_out=2)
        assert out.num_voxels == 1
        np.testing.assert_array_equal(out.coords, [[0, 0, 0]])
        np.testing.assert_allclose(out.feats, [[8.0]])  # all 8 fine voxels gathered
        assert out.stride == 2

    def test_stride2_negative_coords_floor(self):
        st = SparseTensor(np.array([[-1, 0, 0], [0, 0, 0]]), np.ones((2, 1)))
        out = sparse_conv(st, identity_kernel(1), None, stride_out=2)
        np.testing.assert_array_equal(out.coords, [[-1, 0, 0], [0, 0, 0]])

    def test_linearity_in_features(self):
        rng = np.random.default_rng(0)
        coords = np.unique(rng.integers(-4, 4, size=(40, 3)), axis=0)
        feats = rng.normal(size=(len(coords), 3))
        kern = rng.normal(size=(27, 3, 2))
        st = SparseTensor(coords, feats)
        st2 = SparseTensor(coords, 2.5 * feats)
        a = sparse_conv(st, kern, None)
        b = sparse_conv(st2, kern, None)
        assert np.abs(b.feats - 2.5 * a.feats).max() < 1e-9

    def test_forward_deterministic(self):
        rng = np.random.default_rng(5)
        coords = np.unique(rng.integers(-4, 4, size=(50, 3)), axis=0)
        feats = rng.normal(size=(len(coords), 4)).astype(np.float32)
        kern = rng.normal(size=(27, 4, 4)).astype(np.float32)
        st = SparseTensor(coords, feats)
        a = sparse_conv(st, kern, None).feats
        b = sparse_conv(st, kern, None).feats
        np.testing.assert_array_equal(a, b)

    @pytest.mark.skipif("compiled" not in kernels.available_backends(),
                        reason="compiled backend not built")
    def test_backends_give_bit_identical_conv(self):
        rng = np.random.default_rng(6)
        coords = np.unique(rng.integers(-6, 6, size=(100, 3)), axis=0)
        st = SparseTensor(coords, rng.normal(size=(len(coords), 3)).astype(np.float32))
        kern = rng.normal(size=(27, 3, 5)).astype(np.float32)
        with kernels.use_backend("python"):
            a = sparse_conv(st, kern, None).feats
        with kernels.use_backend("compiled"):
            b = sparse_conv(st, kern, None).feats
        np.testing.assert_array_equal(a, b)

    def test_kernel_shape_validated(self):
        st = SparseTensor(np.array([[0, 0, 0]]), np.ones((1, 2)))
        with pytest.raises(ValueError, match="kernel"):
            sparse_conv(st, np.ones((9, 2, 2)), None)
        with pytest.raises(ValueError, match="C_in"):
            sparse_conv(st, np.ones((27, 3, 2)), None)


class TestTransposedConv:
    def test_adjoint_identity_random_instances(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            coords = np.unique(rng.integers(-3, 3, size=(20, 3)), axis=0)
            c_in, c_out = 2, 3
            x = SparseTensor(coords, rng.normal(size=(len(coords), c_in)))
            kern = rng.normal(size=(27, c_in, c_out))
            down = sparse_conv(x, kern, None, stride_out=2)
            y = rng.normal(size=down.feats.shape)
            # adjoint with channel-transposed kernel
            up = sparse_transposed_conv(
                SparseTensor(down.coords, y, stride=2),
                kern.transpose(0, 2, 1),
                None,
                coords,
            )
            lhs = float(np.sum(down.feats * y))
            rhs = float(np.sum(x.feats * up.feats))
            assert abs(lhs - rhs) < 1e-6

    def test_parent_scatters_to_children(self):
        # identity slices at the 8 child offsets copy the parent feature
        # to each of its children
        parent = SparseTensor(np.array([[0, 0, 0]]), np.array([[7.0]]), stride=2)
        children = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)])
        kern = np.zeros((27, 1, 1))
        for idx, off in enumerate(KERNEL_OFFSETS):
            if np.all((off == 0) | (off == 1)):
                kern[idx] = 1.0
        out = sparse_transposed_conv(parent, kern, None, children)
        np.testing.assert_allclose(out.feats, np.full((8, 1), 7.0))
        assert out.stride == 1

    def test_zero_input_gives_zero_output(self):
        parent = SparseTensor(np.array([[0, 0, 0]]), np.zeros((1, 2)), stride=2)
        children = np.array([[0, 0, 0], [1, 1, 1]])
        out = sparse_transposed_conv(parent, np.ones((27, 2, 2)), None, children)
        np.testing.assert_array_equal(out.feats, np.zeros((2, 2)))

    def test_coordinate_mismatch_rejected(self):
        parent = SparseTensor(np.array([[5, 5, 5]]), np.ones((1, 1)), stride=2)
        children = np.array([[0, 0, 0]])  # child of voxel (0,0,0), not (5,5,5)
        with pytest.raises(ValueError, match="coordinate mismatch"):
            sparse_transposed_conv(parent, np.ones((27, 1, 1)), None, children)

    def test_odd_stride_rejected(self):
        parent = SparseTensor(np.array([[0, 0, 0]]), np.ones((1, 1)), stride=1)
        with pytest.raises(ValueError, match="stride"):
            sparse_transposed_conv(parent, np.ones((27, 1, 1)), None, np.array([[0, 0, 0]]))


class TestElementwiseOps:
    def test_relu_values(self):
        st = SparseTensor(np.array([[0, 0, 0], [1, 0, 0]]), np.array([[-2.0], [3.0]]))
        np.testing.assert_array_equal(relu(st).feats, [[0.0], [3.0]])

    def test_linear_identity(self):
        st = SparseTensor(np.array([[0, 0, 0]]), np.array([[1.0, 2.0]]))
        out = linear(st, np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(out.feats, st.feats)

    def test_concat_channel_blocks(self):
        coords = np.array([[0, 0, 0], [1, 0, 0]])
        a = SparseTensor(coords, np.arange(4.0).reshape(2, 2))
        b = SparseTensor(coords, np.arange(6.0).reshape(2, 3))
        out = concat([a, b])
        assert out.feats.shape == (2, 5)
        np.testing.assert_array_equal(out.feats[:, :2], a.feats)
        np.testing.assert_array_equal(out.feats[:, 2:], b.feats)

    def test_concat_coordinate_mismatch(self):
        a = SparseTensor(np.array([[0, 0, 0]]), np.ones((1, 1)))
        b = SparseTensor(np.array([[1, 0, 0]]), np.ones((1, 1)))
        with pytest.raises(ValueError, match="coordinates"):
            concat([a, b])

    def test_batch_norm_functional(self):
        st = SparseTensor(np.array([[0, 0, 0], [1, 0, 0]]), np.array([[-1.0], [1.0]]))
        out = batch_norm(st, np.ones(1), np.zeros(1), mode="train")
        np.testing.assert_allclose(out.feats, st.feats / np.sqrt(1 + 1e-5), atol=1e-12)

    def test_batch_norm_eval_uses_state(self):
        state = BatchNormState(1, dtype=np.float64)
        state.running_mean[...] = 1.0
        state.running_var[...] = 4.0
        st = SparseTensor(np.array([[0, 0, 0]]), np.array([[3.0]]))
        out = batch_norm(st, np.ones(1), np.zeros(1), mode="eval", state=state)
        np.testing.assert_allclose(out.feats, [[(3.0 - 1.0) / np.sqrt(4 + 1e-5)]])


def test_downsample_coords_sorted_unique():
    coords = np.array([[3, 3, 3], [-1, 0, 0], [2, 2, 2], [-2, 0, 0]])
    out = downsample_coords(coords)
    np.testing.assert_array_equal(out, [[-1, 0, 0], [1, 1, 1]])
