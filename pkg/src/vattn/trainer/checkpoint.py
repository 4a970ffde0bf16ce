"""Binary checkpoint container.

Layout (little-endian)::

    b"VACK" | version u32 | epoch u32
    | config_len u32 | config (canonical JSON, utf-8)
    | state_len u32  | state JSON (rng state, optimizer step, run metadata)
    | n_tensors u32
    | per tensor: name_len u16 | name utf-8 | ndim u32 | dims u32[ndim] | data f64[prod(dims)]

Tensors are written in sorted-name order, so identical content gives identical bytes.
Writes go to a temporary file that is renamed into place.
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from vattn.errors import InvalidArgumentError

MAGIC = b"VACK"
VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict
    config: dict
    epoch: int = 0
    state: dict = field(default_factory=dict)


def _canon(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def encode(ckpt):
    parts = [MAGIC, struct.pack("<2I", VERSION, ckpt.epoch)]
    for blob in (_canon(ckpt.config), _canon(ckpt.state)):
        parts += [struct.pack("<I", len(blob)), blob]
    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f8")
        nb = name.encode()
        parts += [
            struct.pack("<H", len(nb)),
            nb,
            struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape),
            arr.tobytes(),
        ]
    return b"".join(parts)


def decode(raw):
    if raw[:4] != MAGIC:
        raise InvalidArgumentError("not a VACK checkpoint")
    version, epoch = struct.unpack_from("<2I", raw, 4)
    if version != VERSION:
        raise InvalidArgumentError(f"unsupported checkpoint version {version}")
    off = 12
    blobs = []
    for _ in range(2):
        (n,) = struct.unpack_from("<I", raw, off)
        blobs.append(json.loads(raw[off + 4 : off + 4 + n]))
        off += 4 + n
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        name = raw[off + 2 : off + 2 + nlen].decode()
        off += 2 + nlen
        (ndim,) = struct.unpack_from("<I", raw, off)
        dims = struct.unpack_from(f"<{ndim}I", raw, off + 4)
        off += 4 + 4 * ndim
        size = int(np.prod(dims)) if ndim else 1
        tensors[name] = np.frombuffer(raw, "<f8", size, off).reshape(dims).astype(np.float64)
        off += 8 * size
    if off != len(raw):
        raise InvalidArgumentError("trailing bytes after checkpoint tensors")
    return Checkpoint(tensors=tensors, config=blobs[0], epoch=epoch, state=blobs[1])


def save(ckpt, path):
    data = encode(ckpt)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
