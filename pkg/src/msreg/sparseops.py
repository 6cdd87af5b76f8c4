"""Sparse voxel tensors and differentiable convolution ops.

A SparseTensor pairs unique integer voxel coordinates with per-voxel
feature rows. Convolutions use 3x3x3 kernels laid out as (27, C_in,
C_out), one slice per offset in KERNEL_OFFSETS order (lexicographic over
dx, dy, dz; the center slice is index CENTER_OFFSET).

Conventions:
  * stride-1 conv: output voxel v gathers input voxels v + o.
  * stride-2 conv: output coordinates are the unique floor(coords / 2);
    output voxel c gathers input voxels 2c + o on the finer grid.
  * transposed conv: output (fine) voxel f gathers input (coarse)
    voxels (f - o) / 2 where the division is exact. Indexed this way,
    transposing the kernel's channel axes makes it the exact adjoint of
    the stride-2 conv.

Per offset, each output index and each input index occurs at most once,
so scatter updates use plain fancy indexing.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import kernels
from .autograd import BatchNormState, Node, Tape

KERNEL_OFFSETS = np.array(
    list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64
)
NUM_OFFSETS = KERNEL_OFFSETS.shape[0]
CENTER_OFFSET = 13  # index of (0, 0, 0) in KERNEL_OFFSETS


@dataclass(frozen=True)
class SparseTensor:
    """Unique voxel coordinates with one feature row per voxel."""

    coords: np.ndarray
    feats: np.ndarray
    stride: int = 1

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.int64)
        feats = np.asarray(self.feats)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ValueError(f"coords must be (V, 3), got {coords.shape}")
        if feats.ndim != 2 or feats.shape[0] != coords.shape[0]:
            raise ValueError(
                f"feats must have one row per voxel: {feats.shape} vs {coords.shape[0]} voxels"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if coords.shape[0] and len(np.unique(coords, axis=0)) != coords.shape[0]:
            raise ValueError("voxel coordinates must be unique")
        if not np.all(np.isfinite(feats)):
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "feats", feats)

    @property
    def num_voxels(self) -> int:
        return self.coords.shape[0]

    @property
    def num_channels(self) -> int:
        return self.feats.shape[1]


def downsample_coords(coords: np.ndarray) -> np.ndarray:
    """Unique floor(coords / 2), lexicographically sorted."""
    return np.unique(np.asarray(coords, dtype=np.int64) // 2, axis=0)


def conv_kernel_map(in_coords, out_coords, mode: str):
    return kernels.build_kernel_map(in_coords, out_coords, KERNEL_OFFSETS, mode)


def _check_kernel(kernel: np.ndarray) -> None:
    if kernel.ndim != 3 or kernel.shape[0] != NUM_OFFSETS:
        raise ValueError(
            f"kernel must be ({NUM_OFFSETS}, C_in, C_out), got {kernel.shape}"
        )


def conv_nodes(tape: Tape, x: Node, kernel: Node, bias: Node | None, kmap, num_out: int) -> Node:
    """Gather-GEMM-scatter convolution over a precomputed kernel map."""
    _check_kernel(kernel.value)
    if kernel.value.shape[1] != x.value.shape[1]:
        raise ValueError(
            f"kernel C_in {kernel.value.shape[1]} != input channels {x.value.shape[1]}"
        )
    c_out = kernel.value.shape[2]
    out = np.zeros((num_out, c_out), dtype=x.value.dtype)
    for o, (ii, oo) in enumerate(kmap):
        if len(ii):
            out[oo] += x.value[ii] @ kernel.value[o]
    if bias is not None:
        out += bias.value

    def vjp(g):
        gx = np.zeros_like(x.value)
        gw = np.zeros_like(kernel.value)
        for o, (ii, oo) in enumerate(kmap):
            if len(ii):
                gx[ii] += g[oo] @ kernel.value[o].T
                gw[o] = x.value[ii].T @ g[oo]
        _accumulate = ag._accumulate
        _accumulate(x, gx)
        _accumulate(kernel, gw)
        if bias is not None:
            _accumulate(bias, g.sum(axis=0))

    return tape.record(out, vjp)


# ---------------------------------------------------------------------------
# Functional wrappers operating on SparseTensor values (no gradient kept).


def sparse_conv(x: SparseTensor, kernel, bias=None, stride_out: int = 1) -> SparseTensor:
    """3x3x3 sparse convolution; stride_out=2 downsamples to floor(coords/2)."""
    if stride_out not in (1, 2):
        raise ValueError(f"stride_out must be 1 or 2, got {stride_out}")
    kernel = np.asarray(kernel)
    _check_kernel(kernel)
    if stride_out == 1:
        out_coords = x.coords
        kmap = conv_kernel_map(x.coords, out_coords, "same")
    else:
        out_coords = downsample_coords(x.coords)
        kmap = conv_kernel_map(x.coords, out_coords, "down")
    tape = Tape()
    out = conv_nodes(
        tape,
        tape.leaf(x.feats),
        tape.leaf(kernel),
        None if bias is None else tape.leaf(np.asarray(bias)),
        kmap,
        out_coords.shape[0],
    )
    return SparseTensor(out_coords, out.value, stride=x.stride * stride_out)


def sparse_transposed_conv(x: SparseTensor, kernel, bias, target_coords) -> SparseTensor:
    """Upsample from a coarse tensor onto target_coords at half the stride."""
    if x.stride % 2 != 0:
        raise ValueError(f"input stride {x.stride} is not upsampleable (must be even)")
    target_coords = np.ascontiguousarray(target_coords, dtype=np.int64)
    parents = downsample_coords(target_coords)
    coarse = {tuple(c) for c in parents}
    missing = [tuple(c) for c in x.coords if tuple(c) not in coarse]
    if missing:
        raise ValueError(
            f"coordinate mismatch: {len(missing)} input voxels have no child in target_coords"
        )
    kernel = np.asarray(kernel)
    _check_kernel(kernel)
    kmap = conv_kernel_map(x.coords, target_coords, "up")
    tape = Tape()
    out = conv_nodes(
        tape,
        tape.leaf(x.feats),
        tape.leaf(kernel),
        None if bias is None else tape.leaf(np.asarray(bias)),
        kmap,
        target_coords.shape[0],
    )
    return SparseTensor(target_coords, out.value, stride=x.stride // 2)


def relu(x: SparseTensor) -> SparseTensor:
    return SparseTensor(x.coords, np.maximum(x.feats, 0), x.stride)


def linear(x: SparseTensor, w, b=None) -> SparseTensor:
    out = x.feats @ np.asarray(w)
    if b is not None:
        out = out + np.asarray(b)
    return SparseTensor(x.coords, out, x.stride)


def concat(xs: list[SparseTensor]) -> SparseTensor:
    """Channel-wise concatenation; inputs must share coords and order."""
    first = xs[0]
    for x in xs[1:]:
        if x.coords.shape != first.coords.shape or not np.array_equal(x.coords, first.coords):
            raise ValueError("concat inputs must share the same coordinates in the same order")
    return SparseTensor(first.coords, np.concatenate([x.feats for x in xs], axis=1), first.stride)


def batch_norm(
    x: SparseTensor,
    bn_scale,
    bn_shift,
    mode: str = "train",
    state: BatchNormState | None = None,
) -> SparseTensor:
    """Standalone batch norm over a tensor's voxels; see autograd.batch_norm."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if state is None:
        state = BatchNormState(x.num_channels)
    tape = Tape()
    out = ag.batch_norm(
        tape,
        tape.leaf(x.feats),
        tape.leaf(np.asarray(bn_scale)),
        tape.leaf(np.asarray(bn_shift)),
        state,
        training=(mode == "train"),
    )
    return SparseTensor(x.coords, out.value, x.stride)
