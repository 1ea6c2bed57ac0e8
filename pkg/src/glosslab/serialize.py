"""Named-tensor checkpoint format shared by both model families.

Parameters are stored as raw little-endian float32 in one binary file,
described by a JSON manifest of (name, shape, byte offset) entries. Saving
the same parameters twice produces byte-identical files, which is what the
reproducibility guarantee rests on.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Mapping

import numpy as np

from .errors import ValidationError

PARAMS_FILE = "params.bin"
MANIFEST_FILE = "manifest.json"


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file and rename, so readers never see partial files."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def atomic_write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True) + "\n")


def save_tensors(directory, named: Mapping[str, np.ndarray]) -> None:
    os.makedirs(directory, exist_ok=True)
    blobs = []
    manifest = []
    offset = 0
    for name in named:
        arr = np.ascontiguousarray(np.asarray(named[name], dtype=np.float32))
        raw = arr.astype("<f4", copy=False).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    atomic_write(os.path.join(directory, PARAMS_FILE), b"".join(blobs))
    atomic_write_json(os.path.join(directory, MANIFEST_FILE), manifest)


def load_tensors(directory) -> dict[str, np.ndarray]:
    manifest_path = os.path.join(directory, MANIFEST_FILE)
    params_path = os.path.join(directory, PARAMS_FILE)
    if not os.path.exists(manifest_path) or not os.path.exists(params_path):
        raise ValidationError(f"{directory}: missing checkpoint manifest or parameter file")
    with open(manifest_path, encoding="utf-8") as f:
        manifest = json.load(f)
    with open(params_path, "rb") as f:
        raw = f.read()
    out = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=start)
        out[entry["name"]] = arr.reshape(shape).astype(np.float32)
    return out
