"""Checkpoint serialization: one JSON header line plus a raw binary payload.

Layout: ``header_json + b"\\n" + payload``.  The header is canonical JSON
(sorted keys, compact separators) carrying the format tag, version, dtype,
model config, parameter index (name, shape, byte offset), an index of extra
arrays (optimizer state), free-form JSON metadata, and a checksum.  The
payload is the concatenation of all arrays as little-endian bytes in index
order.  The checksum is the first 16 hex digits of SHA-256 over the payload,
so a truncated or corrupted file fails loudly instead of producing a model.

Saving a freshly loaded checkpoint reproduces the original file byte for
byte: the header is canonical and arrays round-trip exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os

import numpy as np

from .errors import (
    CheckpointChecksumError,
    CheckpointConfigError,
    CheckpointError,
    CheckpointVersionError,
)
from .model import DemosaickModel, ModelConfig, build_model

FORMAT_TAG = "demosaick-checkpoint"
VERSION = 1

_DTYPE_TO_WIRE = {np.dtype(np.float32): ("float32", "<f4"), np.dtype(np.float64): ("float64", "<f8")}
_WIRE_TO_DTYPE = {"float32": np.float32, "float64": np.float64}


def _checksum(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()[:16]


def save_checkpoint(model: DemosaickModel, path, extra_arrays: dict | None = None,
                    meta: dict | None = None) -> None:
    """Write model parameters, optional extra arrays, and metadata to ``path``."""
    name, wire = _DTYPE_TO_WIRE[np.dtype(model.dtype)]
    chunks: list[bytes] = []
    offset = 0

    def push(arr: np.ndarray) -> tuple:
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype=wire).tobytes()
        chunks.append(raw)
        start = offset
        offset += len(raw)
        return start

    params = []
    for leaf in model.leaves():
        params.append([leaf.name, list(leaf.value.shape), push(leaf.value.data)])
    extras = []
    for key in sorted(extra_arrays or {}):
        arr = np.asarray((extra_arrays or {})[key])
        extras.append([key, list(arr.shape), push(arr)])

    payload = b"".join(chunks)
    header = {
        "format": FORMAT_TAG,
        "version": VERSION,
        "dtype": name,
        "config": model.config.to_dict(),
        "params": params,
        "extra": extras,
        "meta": meta or {},
        "checksum": _checksum(payload),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("ascii") + b"\n" + payload
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def _read(path) -> tuple:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: no header line found")
    try:
        header = json.loads(blob[:nl].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: not a {FORMAT_TAG} file")
    if header.get("version") != VERSION:
        raise CheckpointVersionError(
            f"{path}: unsupported checkpoint version {header.get('version')!r}, expected {VERSION}")
    payload = blob[nl + 1:]
    if _checksum(payload) != header.get("checksum"):
        raise CheckpointChecksumError(f"{path}: payload checksum mismatch (file truncated or corrupted)")
    return header, payload


def _unpack(payload: bytes, index, wire: str) -> dict:
    out = {}
    width = np.dtype(wire).itemsize
    for name, shape, off in index:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = off + count * width
        if end > len(payload):
            raise CheckpointChecksumError(f"array {name!r} extends past end of payload")
        arr = np.frombuffer(payload, dtype=wire, count=count, offset=off)
        out[name] = arr.reshape(shape).astype(np.dtype(wire).newbyteorder("="), copy=True)
    return out


def load_checkpoint_bundle(path, expect_config: ModelConfig | None = None):
    """Load ``path`` and return (model, extra_arrays, meta)."""
    header, payload = _read(path)
    try:
        config = ModelConfig.from_dict(header["config"])
    except Exception as exc:
        raise CheckpointConfigError(f"{path}: bad stored config: {exc}") from exc
    if expect_config is not None and config != expect_config:
        diffs = [
            f.name for f in dataclasses.fields(ModelConfig)
            if getattr(config, f.name) != getattr(expect_config, f.name)
        ]
        raise CheckpointConfigError(
            f"{path}: stored config differs from expected in fields {diffs}")
    dtype_name = header.get("dtype")
    if dtype_name not in _WIRE_TO_DTYPE:
        raise CheckpointError(f"{path}: unsupported dtype {dtype_name!r}")
    dtype = _WIRE_TO_DTYPE[dtype_name]
    _, wire = _DTYPE_TO_WIRE[np.dtype(dtype)]

    model = build_model(config, seed=0, dtype=dtype)
    stored = _unpack(payload, header["params"], wire)
    expected = {leaf.name for leaf in model.leaves()}
    if set(stored) != expected:
        missing = sorted(expected - set(stored))
        surplus = sorted(set(stored) - expected)
        raise CheckpointError(f"{path}: parameter name mismatch, missing={missing}, surplus={surplus}")
    for leaf in model.leaves():
        arr = stored[leaf.name]
        if tuple(arr.shape) != leaf.value.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {leaf.name!r}: {arr.shape} vs {leaf.value.shape}")
        leaf.value.data = np.ascontiguousarray(arr, dtype=model.dtype)
        leaf.grad = np.zeros_like(leaf.value.data)

    extras = _unpack(payload, header.get("extra", []), wire)
    return model, extras, header.get("meta", {})


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> DemosaickModel:
    """Rebuild the stored model; raises distinct errors for version, checksum,
    and config mismatches."""
    return load_checkpoint_bundle(path, expect_config)[0]
