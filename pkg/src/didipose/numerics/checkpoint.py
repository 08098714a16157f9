"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    bytes 0..7    magic b"DDPCKPT1"
    bytes 8..11   uint32 format version (currently 1)
    bytes 12..19  uint64 header length H
    next H bytes  UTF-8 JSON header, keys sorted:
                  {"format_version": 1, "kind": str, "config": {...},
                   "extra": {...},
                   "manifest": [{"name", "shape", "dtype", "offset", "nbytes"}, ...]}
    remainder     raw buffers, C order, concatenated in manifest order;
                  ``offset`` counts from the first byte after the header.

``dtype`` is "<f8" (little-endian FP64) unless a tensor was stored as FP32
("<f4").  The file carries no timestamps, so identical inputs produce
identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError, ParseError, SchemaError

MAGIC = b"DDPCKPT1"
FORMAT_VERSION = 1


def save_checkpoint(path, arrays: dict, kind: str, config: dict | None = None,
                    extra: dict | None = None) -> None:
    manifest, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dt = "<f4" if arr.dtype == np.float32 else "<f8"
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dt,
                         "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"format_version": FORMAT_VERSION, "kind": kind, "config": config or {},
              "extra": extra or {}, "manifest": manifest}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path, kind: str | None = None) -> tuple[dict, dict]:
    """Return ``(arrays, header)``; arrays are FP64/FP32 numpy arrays by name."""
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    if blob[:8] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file (bad magic)", offset=0)
    if len(blob) < 20:
        raise ParseError(f"{path}: truncated checkpoint header", offset=len(blob))
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt checkpoint header ({exc})", offset=20) from exc
    if kind is not None and header.get("kind") != kind:
        raise SchemaError(f"{path}: expected a {kind!r} checkpoint, found {header.get('kind')!r}")
    base = 20 + hlen
    arrays = {}
    for entry in header["manifest"]:
        start = base + entry["offset"]
        stop = start + entry["nbytes"]
        if stop > len(blob):
            raise ParseError(f"{path}: buffer for {entry['name']} is truncated", offset=len(blob))
        arr = np.frombuffer(blob[start:stop], dtype=entry["dtype"]).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return arrays, header
