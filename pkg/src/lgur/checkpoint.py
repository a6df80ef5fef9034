"""Binary checkpoint container.

Layout (little-endian)::

    magic b"LGURCKPT" | version u32 | seed u64 | header_len u32 | header JSON
    then per parameter:
      name_len u16 | name utf-8 | dtype tag (2 bytes: b"f4"/b"f8")
      | ndim u8 | shape u32 * ndim | raw values
"""
from __future__ import annotations

import json
import struct

import numpy as np

CHECKPOINT_VERSION = 1
_MAGIC = b"LGURCKPT"
_TAGS = {np.dtype("float32"): b"f4", np.dtype("float64"): b"f8"}
_DTYPES = {v: k for k, v in _TAGS.items()}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state: dict[str, np.ndarray], seed: int, header: dict | None = None):
    meta = json.dumps(header or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQI", CHECKPOINT_VERSION, seed, len(meta)))
        fh.write(meta)
        for name in sorted(state):
            arr = np.asarray(state[name])
            if arr.dtype not in _TAGS:
                raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(_TAGS[arr.dtype])
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path):
    """Returns (state, seed, header)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, seed, hlen = struct.unpack_from("<IQI", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 8 + struct.calcsize("<IQI")
    header = json.loads(blob[pos:pos + hlen])
    pos += hlen
    state = {}
    while pos < len(blob):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode()
        pos += nlen
        tag = bytes(blob[pos:pos + 2])
        pos += 2
        if tag not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype tag {tag!r}")
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        dtype = _DTYPES[tag].newbyteorder("<")
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos).reshape(shape)
        pos += arr.nbytes
        state[name] = arr.astype(_DTYPES[tag])
    return state, seed, header


def save_model(model, path):
    save_checkpoint(path, model.state_dict(), model.cfg.seed, {"config": model.cfg.to_dict()})


def load_model(path):
    from .config import RunConfig
    from .model import LGUR

    state, _seed, header = load_checkpoint(path)
    cfg = RunConfig.from_dict(header["config"])
    dtype = next(iter(state.values())).dtype if state else np.float32
    model = LGUR(cfg, dtype=dtype)
    model.load_state_dict(state)
    return model
