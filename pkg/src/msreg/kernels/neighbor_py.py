"""Pure-NumPy kernel-map construction (fallback backend).

A kernel map lists, for each kernel offset, the (input voxel, output
voxel) index pairs that are connected by that offset. Lookups are done
by packing integer voxel coordinates into sorted int64 keys and binary
searching, so the whole build is vectorized.

Coordinate relations by mode:
  same  neighbor = out + offset            (stride-preserving conv)
  down  neighbor = 2 * out + offset        (stride-2 conv, out on the coarse grid)
  up    neighbor = (out - offset) / 2      (transposed conv; only when exactly divisible)

Within one offset each output index appears at most once (the relations
are injective in out), and pairs are emitted in ascending output order.
The compiled backend produces bit-identical arrays.
"""

from __future__ import annotations

import numpy as np

COORD_LIMIT = (1 << 20) - 2  # per-axis |coordinate| bound for key packing

_BIAS = 1 << 20
_MODES = ("same", "down", "up")


def _check_range(coords: np.ndarray, what: str) -> None:
    if coords.size and np.abs(coords).max() > COORD_LIMIT:
        raise ValueError(f"{what} coordinates exceed +/-{COORD_LIMIT}")


def _pack(coords: np.ndarray) -> np.ndarray:
    c = coords + _BIAS
    return c[:, 0] | (c[:, 1] << 21) | (c[:, 2] << 42)


def build_kernel_map(in_coords, out_coords, offsets, mode: str):
    """Returns a list with one (in_idx, out_idx) int64 array pair per offset."""
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    in_coords = np.ascontiguousarray(in_coords, dtype=np.int64)
    out_coords = np.ascontiguousarray(out_coords, dtype=np.int64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    _check_range(in_coords, "input")
    _check_range(out_coords, "output")

    n_in = in_coords.shape[0]
    keys = _pack(in_coords)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    if n_in > 1 and np.any(sorted_keys[1:] == sorted_keys[:-1]):
        raise ValueError("duplicate input coordinates")

    all_rows = np.arange(out_coords.shape[0], dtype=np.int64)
    pairs = []
    for off in offsets:
        if mode == "same":
            nb = out_coords + off
            rows = all_rows
        elif mode == "down":
            nb = 2 * out_coords + off
            rows = all_rows
        else:
            c2 = out_coords - off
            ok = ((c2 & 1) == 0).all(axis=1)
            nb = c2[ok] >> 1
            rows = all_rows[ok]
        in_range = (np.abs(nb) <= COORD_LIMIT).all(axis=1)
        nb = nb[in_range]
        rows = rows[in_range]
        nk = _pack(nb)
        pos = np.searchsorted(sorted_keys, nk)
        pos_c = np.minimum(pos, max(n_in - 1, 0))
        found = (pos < n_in) & (sorted_keys[pos_c] == nk) if n_in else np.zeros(len(nk), bool)
        pairs.append((order[pos_c[found]], rows[found]))
    return pairs
