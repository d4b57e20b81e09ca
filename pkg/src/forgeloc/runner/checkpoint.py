"""Checkpoint file: magic, format version, JSON header, raw float32 LE tensors."""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointError

MAGIC = b"FGLCKPT\x00"
FORMAT_VERSION = 1


def save_checkpoint(path: Path, tensors: dict[str, torch.Tensor], meta: dict) -> None:
    table = []
    blobs = []
    offset = 0
    for name, t in tensors.items():
        arr = t.detach().cpu().to(torch.float32).numpy().astype("<f4", copy=False)
        raw = arr.tobytes(order="C")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({**meta, "tensors": table}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: Path) -> tuple[OrderedDict, dict]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    try:
        meta = json.loads(raw[16:16 + hlen])
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}") from exc
    body = raw[16 + hlen:]
    tensors = OrderedDict()
    for entry in meta.pop("tensors"):
        start, count = entry["offset"], entry["count"]
        if start + 4 * count > len(body):
            raise CheckpointError(f"truncated tensor {entry['name']} in {path}")
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=start).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
    return tensors, meta
