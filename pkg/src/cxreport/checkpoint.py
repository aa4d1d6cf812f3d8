"""Single-file binary checkpoints.

Layout (all integers little-endian):

    bytes 0..7    magic  b"CXRCKPT\\0"
    bytes 8..11   u32    format version (currently 1)
    bytes 12..19  u64    header length H
    bytes 20..20+H       UTF-8 JSON header
    remainder            concatenated float64 little-endian arrays, C order

The JSON header carries {"config", "epoch", "vocab", "extra", "arrays"} where
"arrays" lists {"key", "shape", "offset"} records; offsets are relative to the
start of the payload section.  Writes go to a temp file in the same directory
followed by an atomic rename.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["CheckpointState", "save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]

MAGIC = b"CXRCKPT\0"
VERSION = 1


@dataclass
class CheckpointState:
    config: dict
    epoch: int
    vocab_tokens: list[str]
    arrays: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, state: CheckpointState) -> None:
    path = Path(path)
    entries = []
    offset = 0
    blobs = []
    for key in sorted(state.arrays):
        arr = np.ascontiguousarray(state.arrays[key], dtype="<f8")
        entries.append({"key": key, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {
            "config": state.config,
            "epoch": state.epoch,
            "vocab": state.vocab_tokens,
            "extra": state.extra,
            "arrays": entries,
        }
    ).encode("utf-8")

    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(VERSION.to_bytes(4, "little"))
            fh.write(len(header).to_bytes(8, "little"))
            fh.write(header)
            for blob in blobs:
                fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> CheckpointState:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version = int.from_bytes(raw[8:12], "little")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header_len = int.from_bytes(raw[12:20], "little")
    header = json.loads(raw[20 : 20 + header_len].decode("utf-8"))
    payload = raw[20 + header_len :]
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        arrays[entry["key"]] = arr.reshape(shape).astype(np.float64)
    return CheckpointState(
        config=header["config"],
        epoch=header["epoch"],
        vocab_tokens=header["vocab"],
        arrays=arrays,
        extra=header.get("extra", {}),
    )
