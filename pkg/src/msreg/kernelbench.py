"""Timing comparison between the compiled and pure-NumPy kernel backends."""

from __future__ import annotations

import time

import numpy as np

from . import kernels
from .sparseops import KERNEL_OFFSETS, SparseTensor, sparse_conv


def _random_tensor(num_voxels: int, channels: int, seed: int = 0) -> SparseTensor:
    rng = np.random.default_rng(seed)
    side = max(int(round((4 * num_voxels) ** (1 / 3))), 2)
    coords = rng.integers(0, side, size=(int(num_voxels * 1.5), 3))
    coords = np.unique(coords, axis=0)[:num_voxels]
    feats = rng.normal(size=(len(coords), channels)).astype(np.float32)
    return SparseTensor(coords, feats)


def run_kernel_benchmark(num_voxels: int = 30_000, channels: int = 16,
                         repeats: int = 5, seed: int = 0) -> list[dict]:
    """Times kernel-map building and a full conv forward per backend.

    Returns one row per (backend, operation) with best-of-repeats
    seconds. Results across backends are also checked for equality.
    """
    st = _random_tensor(num_voxels, channels, seed)
    rng = np.random.default_rng(seed + 1)
    kern = rng.normal(size=(27, channels, channels)).astype(np.float32)
    bias = np.zeros(channels, dtype=np.float32)

    rows = []
    outputs = {}
    for backend in kernels.available_backends():
        with kernels.use_backend(backend):
            best_map = min(
                _time(lambda: kernels.build_kernel_map(st.coords, st.coords, KERNEL_OFFSETS, "same"))
                for _ in range(repeats)
            )
            best_conv = min(
                _time(lambda: sparse_conv(st, kern, bias, stride_out=1)) for _ in range(repeats)
            )
            outputs[backend] = sparse_conv(st, kern, bias, stride_out=1).feats
        rows.append({"backend": backend, "op": "build_kernel_map", "seconds": best_map,
                     "voxels": len(st.coords)})
        rows.append({"backend": backend, "op": "sparse_conv_forward", "seconds": best_conv,
                     "voxels": len(st.coords)})
    if len(outputs) == 2:
        a, b = outputs.values()
        if not np.array_equal(a, b):
            raise AssertionError("backends disagree on conv output")
    return rows


def _time(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def format_rows(rows: list[dict]) -> str:
    lines = [f"{'backend':<10} {'op':<22} {'voxels':>8} {'seconds':>12}"]
    for r in rows:
        lines.append(f"{r['backend']:<10} {r['op']:<22} {r['voxels']:>8} {r['seconds']:>12.6f}")
    by_op: dict[str, dict[str, float]] = {}
    for r in rows:
        by_op.setdefault(r["op"], {})[r["backend"]] = r["seconds"]
    for op, t in by_op.items():
        if "compiled" in t and "python" in t:
            lines.append(f"speedup {op}: {t['python'] / t['compiled']:.2f}x")
    return "\n".join(lines)
