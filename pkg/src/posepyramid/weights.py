"""Weights file: a JSON manifest followed by a little-endian f64 blob.

Layout: 4-byte magic "PPW1", an 8-byte little-endian manifest length, the
UTF-8 JSON manifest, then the raw parameter blob. The manifest records
{name, shape, dtype, byte_offset} per tensor plus the model configuration,
so the file is self-describing and portable across languages.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError

MAGIC = b"PPW1"


def save_weights(path, named_arrays: dict, config: dict, extra: dict = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in named_arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        entries.append(
            {"name": name, "shape": list(data.shape), "dtype": "f64",
             "byte_offset": offset}
        )
        blobs.append(data.tobytes())
        offset += len(blobs[-1])
    manifest = {"format": "posepyramid-weights-v1", "config": config,
                "tensors": entries}
    if extra:
        manifest.update(extra)
    payload = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_weights(path):
    """Returns (manifest dict, {name: float64 array})."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise DataError(f"{path}: not a weights file (bad magic {magic!r})")
        (length,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(length).decode("utf-8"))
        blob = fh.read()
    arrays = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return manifest, arrays


def save_model(path, model, extra: dict = None) -> None:
    named = {k: v.data for k, v in model.named_parameters().items()}
    save_weights(path, named, model.config.to_dict(), extra)


def load_into(model, arrays: dict) -> None:
    params = model.named_parameters()
    missing = set(params) - set(arrays)
    surplus = set(arrays) - set(params)
    if missing or surplus:
        raise DataError(
            f"weights do not match the model (missing={sorted(missing)[:3]}, "
            f"surplus={sorted(surplus)[:3]})"
        )
    for name, tensor in params.items():
        arr = arrays[name]
        if arr.shape != tensor.data.shape:
            raise DataError(
                f"tensor {name}: file shape {arr.shape} vs model {tensor.data.shape}"
            )
        tensor.data = np.ascontiguousarray(arr)
