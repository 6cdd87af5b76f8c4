# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel-map construction (hot path).

Same contract as neighbor_py.build_kernel_map: per kernel offset, the
(input voxel, output voxel) index pairs connected by that offset, in
ascending output order. Lookup uses an open-addressing hash table over
packed voxel coordinates, one probe sequence per query.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef long long COORD_LIMIT_C = (1 << 20) - 2
COORD_LIMIT = COORD_LIMIT_C

cdef long long BIAS = 1 << 20
cdef long long EMPTY = -1


cdef inline long long _pack1(long long x, long long y, long long z) nogil:
    return (x + BIAS) | ((y + BIAS) << 21) | ((z + BIAS) << 42)


cdef inline unsigned long long _mix(long long key) nogil:
    cdef unsigned long long h = <unsigned long long> key
    h *= 0x9E3779B97F4A7C15ULL
    h ^= h >> 29
    return h


cdef int _insert_all(long long[:, ::1] coords, long long[::1] table_keys,
                     long long[::1] table_vals, unsigned long long mask) nogil:
    cdef Py_ssize_t i, n = coords.shape[0]
    cdef long long key
    cdef unsigned long long slot
    for i in range(n):
        key = _pack1(coords[i, 0], coords[i, 1], coords[i, 2])
        slot = _mix(key) & mask
        while table_vals[slot] != EMPTY:
            if table_keys[slot] == key:
                return -1  # duplicate coordinate
            slot = (slot + 1) & mask
        table_keys[slot] = key
        table_vals[slot] = i
    return 0


cdef inline long long _lookup(long long x, long long y, long long z,
                              long long[::1] table_keys, long long[::1] table_vals,
                              unsigned long long mask) nogil:
    cdef long long key = _pack1(x, y, z)
    cdef unsigned long long slot = _mix(key) & mask
    while table_vals[slot] != EMPTY:
        if table_keys[slot] == key:
            return table_vals[slot]
        slot = (slot + 1) & mask
    return -1


def build_kernel_map(in_coords, out_coords, offsets, mode):
    if mode not in ("same", "down", "up"):
        raise ValueError(f"mode must be one of ('same', 'down', 'up'), got {mode!r}")
    cdef long long[:, ::1] ic = np.ascontiguousarray(in_coords, dtype=np.int64)
    cdef long long[:, ::1] oc = np.ascontiguousarray(out_coords, dtype=np.int64)
    cdef long long[:, ::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef Py_ssize_t n_in = ic.shape[0], n_out = oc.shape[0], n_off = off.shape[0]
    cdef Py_ssize_t i, o, count
    cdef long long nx, ny, nz, cx, cy, cz, hit
    cdef int mode_id = 0 if mode == "same" else (1 if mode == "down" else 2)

    for i in range(n_in):
        if (ic[i, 0] < -COORD_LIMIT_C or ic[i, 0] > COORD_LIMIT_C
                or ic[i, 1] < -COORD_LIMIT_C or ic[i, 1] > COORD_LIMIT_C
                or ic[i, 2] < -COORD_LIMIT_C or ic[i, 2] > COORD_LIMIT_C):
            raise ValueError(f"input coordinates exceed +/-{COORD_LIMIT_C}")
    for i in range(n_out):
        if (oc[i, 0] < -COORD_LIMIT_C or oc[i, 0] > COORD_LIMIT_C
                or oc[i, 1] < -COORD_LIMIT_C or oc[i, 1] > COORD_LIMIT_C
                or oc[i, 2] < -COORD_LIMIT_C or oc[i, 2] > COORD_LIMIT_C):
            raise ValueError(f"output coordinates exceed +/-{COORD_LIMIT_C}")

    cdef unsigned long long size = 8
    while size < <unsigned long long> (2 * n_in + 2):
        size <<= 1
    cdef unsigned long long mask = size - 1
    keys_arr = np.empty(size, dtype=np.int64)
    vals_arr = np.full(size, EMPTY, dtype=np.int64)
    cdef long long[::1] table_keys = keys_arr
    cdef long long[::1] table_vals = vals_arr
    if _insert_all(ic, table_keys, table_vals, mask) != 0:
        raise ValueError("duplicate input coordinates")

    in_buf = np.empty(n_out, dtype=np.int64)
    out_buf = np.empty(n_out, dtype=np.int64)
    cdef long long[::1] ib = in_buf
    cdef long long[::1] ob = out_buf

    pairs = []
    for o in range(n_off):
        count = 0
        with nogil:
            for i in range(n_out):
                if mode_id == 0:
                    nx = oc[i, 0] + off[o, 0]
                    ny = oc[i, 1] + off[o, 1]
                    nz = oc[i, 2] + off[o, 2]
                elif mode_id == 1:
                    nx = 2 * oc[i, 0] + off[o, 0]
                    ny = 2 * oc[i, 1] + off[o, 1]
                    nz = 2 * oc[i, 2] + off[o, 2]
                else:
                    cx = oc[i, 0] - off[o, 0]
                    cy = oc[i, 1] - off[o, 1]
                    cz = oc[i, 2] - off[o, 2]
                    if (cx & 1) or (cy & 1) or (cz & 1):
                        continue
                    nx = cx >> 1
                    ny = cy >> 1
                    nz = cz >> 1
                if (nx < -COORD_LIMIT_C or nx > COORD_LIMIT_C
                        or ny < -COORD_LIMIT_C or ny > COORD_LIMIT_C
                        or nz < -COORD_LIMIT_C or nz > COORD_LIMIT_C):
                    continue
                hit = _lookup(nx, ny, nz, table_keys, table_vals, mask)
                if hit >= 0:
                    ib[count] = hit
                    ob[count] = i
                    count += 1
        pairs.append((in_buf[:count].copy(), out_buf[:count].copy()))
    return pairs
