"""Versioned binary checkpoint files.

Layout (all integers little-endian):

    magic       8 bytes   b"PLFITCK\\0"
    version     uint32    currently 1
    kind        uint8     0 = pointnet, 1 = mvcnn
    meta_len    uint32    length of the UTF-8 JSON block that follows
    meta        bytes     {"config": {...}, "adam_step": int|null, "note": str}
    n_tensors   uint32
    per tensor: name_len uint16, name (UTF-8), ndim uint8, dims uint32 * ndim
    payload     float32 little-endian values of every tensor, in table order

Optimizer moments, when saved, appear as tensors named ``adam.m.<name>`` and
``adam.v.<name>``.
"""

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .networks import MVCNN, MVCNNConfig, PointNet, PointNetConfig
from .optim import AdamState

MAGIC = b"PLFITCK\x00"
VERSION = 1
KINDS = {"pointnet": 0, "mvcnn": 1}


def save_checkpoint(model, path, state: AdamState = None, note: str = "") -> None:
    tensors = OrderedDict(model.params)
    if state is not None:
        for k in model.params:
            tensors[f"adam.m.{k}"] = state.m[k]
            tensors[f"adam.v.{k}"] = state.v[k]
    meta = json.dumps(
        {"config": model.config_dict(), "adam_step": None if state is None else state.step, "note": note},
        sort_keys=True,
    ).encode("utf-8")
    out = bytearray(MAGIC)
    out += struct.pack("<IBI", VERSION, KINDS[model.kind], len(meta))
    out += meta
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    for arr in tensors.values():
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path, dtype=np.float32):
    """Return ``(model, adam_state_or_None, note)``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a plantfit checkpoint")
    try:
        pos = 8
        version, kind_id, meta_len = struct.unpack_from("<IBI", data, pos)
        pos += struct.calcsize("<IBI")
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        meta = json.loads(data[pos : pos + meta_len].decode("utf-8"))
        pos += meta_len
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        table = []
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + ln].decode("utf-8")
            pos += ln
            (nd,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{nd}I", data, pos)
            pos += 4 * nd
            table.append((name, dims))
        tensors = OrderedDict()
        for name, dims in table:
            count = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims)
            pos += 4 * count
            tensors[name] = arr.astype(dtype)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after payload")

    kind = {v: k for k, v in KINDS.items()}.get(kind_id)
    if kind == "pointnet":
        cls, cfg = PointNet, PointNetConfig(**meta["config"])
    elif kind == "mvcnn":
        cls, cfg = MVCNN, MVCNNConfig(**meta["config"])
    else:
        raise CheckpointError(f"{path}: unknown network kind {kind_id}")
    params = OrderedDict((k, v) for k, v in tensors.items() if not k.startswith("adam."))
    expected = cls.init(cfg, 0, dtype).params
    if list(expected) != list(params) or any(expected[k].shape != params[k].shape for k in params):
        raise CheckpointError(f"{path}: tensor table does not match the stored config")
    state = None
    if meta.get("adam_step") is not None:
        state = AdamState(
            OrderedDict((k, tensors[f"adam.m.{k}"]) for k in params),
            OrderedDict((k, tensors[f"adam.v.{k}"]) for k in params),
            int(meta["adam_step"]),
        )
    return cls(cfg, params), state, meta.get("note", "")
