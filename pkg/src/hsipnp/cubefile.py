"""HSC1 cube container.

Little-endian layout::

    b"HSC1" | version u32 | M u32 | N u32 | B u32 | dtype u8 (1 = float32)
    | 3 reserved bytes | M*N*B float32, band-major | CRC32 u32 of all prior bytes
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib

import numpy as np

MAGIC = b"HSC1"
VERSION = 1
DTYPE_FLOAT32 = 1
HEADER = struct.Struct("<4sIIIIB3s")


class CubeFileError(ValueError):
    code = "cube_file_error"


class BadMagicError(CubeFileError):
    code = "bad_magic"


class ChecksumError(CubeFileError):
    code = "crc_mismatch"


class TruncatedFileError(CubeFileError):
    code = "truncated"


class UnsupportedFormatError(CubeFileError):
    code = "unsupported_format"


def encode_cube(cube) -> bytes:
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise ValueError(f"expected a (B, M, N) cube, got shape {cube.shape}")
    if not np.all(np.isfinite(cube)):
        raise ValueError("cube contains non-finite values")
    B, M, N = cube.shape
    body = HEADER.pack(MAGIC, VERSION, M, N, B, DTYPE_FLOAT32, b"\0\0\0")
    body += np.ascontiguousarray(cube, dtype="<f4").tobytes()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_cube(data: bytes) -> np.ndarray:
    if len(data) >= 4 and data[:4] != MAGIC:
        raise BadMagicError("not an HSC1 cube (bad magic)")
    if len(data) < HEADER.size:
        raise TruncatedFileError("truncated header")
    magic, version, M, N, B, dtype, _ = HEADER.unpack_from(data)
    if version != VERSION or dtype != DTYPE_FLOAT32:
        raise UnsupportedFormatError(f"unsupported version {version} / dtype tag {dtype}")
    expected = HEADER.size + 4 * M * N * B + 4
    if len(data) < expected:
        raise TruncatedFileError(f"truncated file: {len(data)} of {expected} bytes")
    if len(data) > expected:
        raise CubeFileError("trailing bytes after CRC")
    (crc,) = struct.unpack_from("<I", data, expected - 4)
    if zlib.crc32(data[: expected - 4]) & 0xFFFFFFFF != crc:
        raise ChecksumError("CRC mismatch")
    payload = np.frombuffer(data, dtype="<f4", count=M * N * B, offset=HEADER.size)
    return payload.reshape(B, M, N).astype(np.float32)


def write_cube(cube, path) -> None:
    """Write atomically (temp file in the same directory, then rename)."""
    data = encode_cube(cube)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".hsc1-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_cube(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_cube(fh.read())
