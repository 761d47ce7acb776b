"""GRC1 model checkpoints.

Little-endian layout::

    b"GRC1" | version u32 | descriptor length u32 | descriptor (UTF-8 JSON)
    | parameters as float32 in declaration order | CRC32 u32 of all prior bytes
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib

import numpy as np

from .model import GrcnnModel

MAGIC = b"GRC1"
VERSION = 1


class CheckpointError(ValueError):
    code = "checkpoint_error"


def dumps(model: GrcnnModel) -> bytes:
    desc = json.dumps(model.descriptor(), sort_keys=True).encode("utf-8")
    blob = b"".join(v.astype("<f4").tobytes() for _, v in model.named_parameters())
    body = MAGIC + struct.pack("<II", VERSION, len(desc)) + desc + blob
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def loads(data: bytes, dtype=np.float32) -> GrcnnModel:
    if len(data) < 16:
        raise CheckpointError("truncated checkpoint")
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic: not a GRC1 checkpoint")
    (crc,) = struct.unpack("<I", data[-4:])
    body = data[:-4]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("CRC mismatch")
    version, dlen = struct.unpack("<II", body[4:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    desc = json.loads(body[12 : 12 + dlen].decode("utf-8"))
    if desc.get("arch") != "grcnn":
        raise CheckpointError(f"unknown architecture {desc.get('arch')!r}")
    model = GrcnnModel(desc["widths"], desc["noise_map"], dtype=dtype,
                       flip_directions=desc.get("flip_directions", False),
                       residual=desc.get("residual", "input"))
    blob = np.frombuffer(body, dtype="<f4", offset=12 + dlen)
    if blob.size != model.num_parameters():
        raise CheckpointError("parameter blob does not match the architecture")
    state, pos = {}, 0
    for name, v in model.named_parameters():
        state[name] = blob[pos : pos + v.size].reshape(v.shape).astype(dtype)
        pos += v.size
    model.load_state_dict(state)
    return model


def save(model: GrcnnModel, path) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".grc1-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(dumps(model))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path, dtype=np.float32) -> GrcnnModel:
    with open(path, "rb") as fh:
        return loads(fh.read(), dtype)
