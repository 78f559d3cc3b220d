"""Model checkpoints in the ``SSGM`` container.

Layout (all integers little-endian)::

    magic      4 bytes  b"SSGM"
    version    u16      1
    cfg_len    u32      length of the config JSON
    config     bytes    UTF-8 JSON of ModelConfig.to_dict()
    n_blobs    u16
    n_blobs x:
        key    u16 length + UTF-8, "<layer index>.<LayerClass>.<param>"
        dtype  u8       1 = float32, 2 = float64
        rank   u8
        dims   rank x u32
        data   prod(dims) values, C order

Nothing may follow the last blob. Batch-norm running statistics are
stored as blobs alongside the trainable parameters.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FormatError, TruncationError
from ..features import _pack_str, _Reader
from .model import Model, ModelConfig, build_model

MAGIC = b"SSGM"
VERSION = 1
DTYPES = {1: "<f4", 2: "<f8"}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def save_model(model: Model, path) -> None:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    state = model.state_dict()
    out = bytearray(MAGIC)
    out += struct.pack("<HI", VERSION, len(cfg)) + cfg
    out += struct.pack("<H", len(state))
    for key, arr in state.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise ConfigError(f"{key}: cannot store dtype {arr.dtype}")
        out += _pack_str(key)
        out += struct.pack("<BB", code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
    Path(path).write_bytes(bytes(out))


def load_model(path) -> Model:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic, not an SSGM checkpoint")
    version, cfg_len = r.unpack("<HI")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        cfg = json.loads(r.take(cfg_len).decode("utf-8"))
        config = ModelConfig(**cfg)
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, ConfigError) as exc:
        if isinstance(exc, TruncationError):
            raise
        raise FormatError(f"{path}: bad config block: {exc}") from exc
    (n,) = r.unpack("<H")
    state = {}
    for _ in range(n):
        key = r.string()
        code, rank = r.unpack("<BB")
        if code not in DTYPES:
            raise FormatError(f"{path}: {key}: unknown dtype code {code}")
        dims = r.unpack(f"<{rank}I")
        dt = np.dtype(DTYPES[code])
        count = int(np.prod(dims, dtype=np.int64))
        state[key] = np.frombuffer(r.take(dt.itemsize * count), dtype=dt).reshape(dims).copy()
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    model = build_model(config, 0)
    try:
        model.load_state_dict(state)
    except ConfigError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return model
