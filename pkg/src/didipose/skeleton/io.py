"""Line-delimited JSON dataset files.

Line 1 is a header object::

    {"format": "didipose-dataset", "version": 1, "skeleton": {...},
     "seed": 0, "split": "train", "count": n, "meta": {...}}

followed by exactly ``count`` sample objects with keys ``coords`` (J x 3),
``proj2d`` (J x 2), ``visible`` (J booleans) and ``occluder`` (x0, y0, x1, y1).
Floats are written with ``repr`` (shortest round-trip decimal), so reading a
file back reproduces every coordinate bit for bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ParseError, SchemaError
from .model import PoseDataset, SkeletonDef

FORMAT = "didipose-dataset"
VERSION = 1


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def write_dataset(ds: PoseDataset, path) -> None:
    header = {
        "format": FORMAT,
        "version": VERSION,
        "skeleton": ds.skeleton.to_dict(),
        "seed": int(ds.seed),
        "split": ds.split,
        "count": len(ds),
        "meta": ds.meta,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps(header) + "\n")
        for i in range(len(ds)):
            rec = {
                "coords": ds.coords[i].tolist(),
                "proj2d": ds.proj2d[i].tolist(),
                "visible": ds.visible[i].tolist(),
                "occluder": ds.occluders[i].tolist(),
            }
            fh.write(_dumps(rec) + "\n")


def _load_line(text: str, lineno: int):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=lineno, offset=exc.colno) from exc


def _array(rec, key, shape, dtype, lineno):
    if key not in rec:
        raise ParseError(f"sample is missing field {key!r}", line=lineno)
    try:
        arr = np.asarray(rec[key], dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"field {key!r} is not numeric", line=lineno) from exc
    if arr.shape != shape:
        raise SchemaError(f"line {lineno}: field {key!r} has shape {arr.shape}, expected {shape}")
    return arr


def read_dataset(path, skeleton: SkeletonDef | None = None) -> PoseDataset:
    """Parse a dataset file.

    If ``skeleton`` is given the file's skeleton must equal it, otherwise a
    ``SchemaError`` is raised.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file, expected a header line", line=1)
    header = _load_line(lines[0], 1)
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise ParseError("first line is not a dataset header", line=1)
    if header.get("version") != VERSION:
        raise SchemaError(f"unsupported dataset version {header.get('version')!r}")
    for key in ("skeleton", "seed", "split", "count"):
        if key not in header:
            raise ParseError(f"header is missing {key!r}", line=1)
    file_skel = SkeletonDef.from_dict(header["skeleton"])
    if skeleton is not None and file_skel != skeleton:
        raise SchemaError("dataset skeleton does not match the expected skeleton")
    count = header["count"]
    body = lines[1:]
    if len(body) != count:
        raise ParseError(f"header declares {count} samples but file holds {len(body)}",
                         line=len(lines))
    J = file_skel.joint_count
    coords = np.empty((count, J, 3))
    proj = np.empty((count, J, 2))
    vis = np.empty((count, J), dtype=bool)
    occ = np.empty((count, 4))
    for i, text in enumerate(body):
        lineno = i + 2
        rec = _load_line(text, lineno)
        if not isinstance(rec, dict):
            raise ParseError("sample line is not an object", line=lineno)
        coords[i] = _array(rec, "coords", (J, 3), np.float64, lineno)
        proj[i] = _array(rec, "proj2d", (J, 2), np.float64, lineno)
        vis[i] = _array(rec, "visible", (J,), bool, lineno)
        occ[i] = _array(rec, "occluder", (4,), np.float64, lineno)
    return PoseDataset(file_skel, coords, proj, vis, occ, seed=header["seed"],
                       split=header["split"], meta=header.get("meta", {}))
