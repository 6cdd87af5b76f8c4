"""Checkpoint serialization: JSON manifest plus one float32 blob.

File layout: 4-byte magic, little-endian uint32 manifest length, the
UTF-8 JSON manifest, then every tensor as little-endian float32 in
manifest order. The manifest carries a format-version integer, the
model config, and {name, shape, dtype} per tensor.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError
from .model import Model, ModelConfig, build_model

MAGIC = b"MSRG"
FORMAT_VERSION = 1


def _tensor_items(model: Model):
    for name, p in model.params.items():
        yield name, p.value
    for name, state in model.bn_states.items():
        yield f"{name}.running_mean", state.running_mean
        yield f"{name}.running_var", state.running_var


def save_checkpoint(model: Model, path) -> None:
    entries = []
    blobs = []
    for name, arr in _tensor_items(model):
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "f32"})
        blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "tensors": entries,
    }
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path, dtype=np.float32) -> Model:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (mlen,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + mlen:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[8 : 8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest: {exc}") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version mismatch (file has {version!r}, expected {FORMAT_VERSION})"
        )
    try:
        config = ModelConfig.from_dict(manifest["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad config in manifest: {exc}") from None

    model = build_model(config, seed=0, dtype=dtype)
    expected = dict(_tensor_items(model))
    listed = manifest.get("tensors", [])
    if {e["name"] for e in listed} != set(expected):
        missing = sorted(set(expected) - {e["name"] for e in listed})
        extra = sorted({e["name"] for e in listed} - set(expected))
        raise CheckpointError(
            f"{path}: tensor set mismatch (missing {missing[:3]}, unexpected {extra[:3]})"
        )

    offset = 8 + mlen
    for entry in listed:
        name, shape = entry["name"], tuple(entry["shape"])
        if entry.get("dtype") != "f32":
            raise CheckpointError(f"{path}: tensor {name!r} has unsupported dtype")
        target = expected[name]
        if shape != target.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name!r}: file {shape}, model {target.shape}"
            )
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated blob at tensor {name!r}")
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
        target[...] = arr.astype(target.dtype)
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes after blob")
    return model
