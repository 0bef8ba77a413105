"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic  b"NPFG"
    u32    format version
    u16    length, then utf-8 model tag
    u32    length, then utf-8 JSON header (hyperparameters, metadata; keys sorted)
    u32    parameter count
    per parameter (sorted by name):
        u16 length, utf-8 name
        u8  ndim, then ndim x u64 shape
        raw float64 little-endian values
    8-byte blake2b digest of everything above
"""

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .models import build_model

MAGIC = b"NPFG"
VERSION = 1
DIGEST_SIZE = 8


class CheckpointError(IOError):
    pass


@dataclass
class Checkpoint:
    tag: str
    hyper: dict
    params: dict  # name -> float64 array
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model, **meta):
        params = {k: v.data.copy() for k, v in model.params.items()}
        return cls(model.tag, _jsonable(model.hyper), params, _jsonable(meta))

    def to_model(self):
        model = build_model(self.tag, self.hyper)
        missing = set(model.params) ^ set(self.params)
        if missing:
            raise CheckpointError(f"parameter names do not match the {self.tag} architecture: {sorted(missing)[:4]}")
        for k, p in model.params.items():
            arr = self.params[k]
            if arr.shape != p.data.shape:
                raise CheckpointError(f"{k}: stored shape {arr.shape}, model expects {p.data.shape}")
            p.data = arr.copy()
        return model


def _jsonable(obj):
    return json.loads(json.dumps(obj, sort_keys=True))


def _digest(payload):
    return hashlib.blake2b(payload, digest_size=DIGEST_SIZE).digest()


def encode(ckpt):
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    tag = ckpt.tag.encode()
    out += struct.pack("<H", len(tag)) + tag
    header = json.dumps({"hyper": ckpt.hyper, "meta": ckpt.meta}, sort_keys=True, separators=(",", ":")).encode()
    out += struct.pack("<I", len(header)) + header
    out += struct.pack("<I", len(ckpt.params))
    for name in sorted(ckpt.params):
        arr = np.asarray(ckpt.params[name], dtype="<f8", order="C")  # keeps 0-d shapes
        nb = name.encode()
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += arr.tobytes()
    out += _digest(bytes(out))
    return bytes(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("unexpected end of checkpoint data")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data, expect_tag=None):
    if len(data) < len(MAGIC) + 4 + DIGEST_SIZE:
        raise CheckpointError("checksum mismatch: file too short")
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if _digest(body) != digest:
        raise CheckpointError("checksum mismatch: file is corrupt or truncated")
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (this build reads {VERSION})")
    (n,) = r.unpack("<H")
    tag = r.take(n).decode()
    if expect_tag is not None and tag != expect_tag:
        raise CheckpointError(f"model tag mismatch: file holds {tag!r}, expected {expect_tag!r}")
    (n,) = r.unpack("<I")
    header = json.loads(r.take(n).decode())
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after parameter blobs")
    return Checkpoint(tag, header["hyper"], params, header["meta"])


def save_checkpoint(ckpt, path):
    """Write atomically: a crash mid-write never leaves a half-written file at ``path``."""
    if not isinstance(ckpt, Checkpoint):
        ckpt = Checkpoint.from_model(ckpt)
    data = encode(ckpt)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
    return path


def load_checkpoint(path, expect_tag=None):
    with open(path, "rb") as f:
        return decode(f.read(), expect_tag)


def load_model(path, expect_tag=None):
    return load_checkpoint(path, expect_tag).to_model()
