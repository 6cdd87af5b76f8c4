"""Kernel-map backends: compiled extension with a pure-NumPy fallback.

The active backend is chosen at import time: the compiled module if it
built, else the NumPy fallback. Both produce bit-identical outputs.
Override with the MSREG_KERNEL_BACKEND environment variable
("compiled" or "python") or set_backend(); see benchmarks/bench_kernels.py
for the speed comparison.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from . import neighbor_py

try:
    from . import _neighbor as _compiled
except ImportError:  # extension not built; fall back
    _compiled = None

_BACKENDS = {"python": neighbor_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

COORD_LIMIT = neighbor_py.COORD_LIMIT


def _initial_backend() -> str:
    forced = os.environ.get("MSREG_KERNEL_BACKEND")
    if forced:
        if forced not in ("compiled", "python"):
            raise ValueError(f"MSREG_KERNEL_BACKEND must be 'compiled' or 'python', got {forced!r}")
        if forced == "compiled" and _compiled is None:
            raise ImportError("MSREG_KERNEL_BACKEND=compiled but the extension is not built")
        return forced
    return "compiled" if _compiled is not None else "python"


_active = _initial_backend()


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active = name


@contextmanager
def use_backend(name: str):
    prev = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def build_kernel_map(in_coords, out_coords, offsets, mode: str):
    """Per-offset (in_idx, out_idx) pairs; see neighbor_py for the contract."""
    return _BACKENDS[_active].build_kernel_map(in_coords, out_coords, offsets, mode)
