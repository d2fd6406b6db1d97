"""Versioned binary serialization for network parameters.

Blob layout (little-endian):
    magic b"SRLW" | u32 version | u32 n_sizes | i64 sizes... | i64 acts... |
    f64 row-major parameter payload | u32 crc32(header + payload)
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .mlp import Mlp, param_count

MAGIC = b"SRLW"
VERSION = 1


class SerializationError(ValueError):
    pass


def mlp_to_bytes(net: Mlp) -> bytes:
    header = MAGIC + struct.pack("<II", VERSION, net.sizes.shape[0])
    header += net.sizes.astype("<i8").tobytes()
    header += net.acts.astype("<i8").tobytes()
    payload = net.flat.astype("<f8").tobytes()
    body = header + payload
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def mlp_from_bytes(buf: bytes, flat_out: np.ndarray | None = None) -> Mlp:
    if len(buf) < 12 + 4:
        raise SerializationError("blob too short")
    if buf[:4] != MAGIC:
        raise SerializationError(f"bad magic {buf[:4]!r}")
    version, n_sizes = struct.unpack("<II", buf[4:12])
    if version != VERSION:
        raise SerializationError(f"unsupported format version {version}")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise SerializationError("checksum mismatch (file truncated or corrupted)")
    off = 12
    sizes = np.frombuffer(buf, dtype="<i8", count=n_sizes, offset=off).astype(np.int64)
    off += 8 * n_sizes
    acts = np.frombuffer(buf, dtype="<i8", count=n_sizes - 1, offset=off).astype(np.int64)
    off += 8 * (n_sizes - 1)
    n = param_count(sizes)
    params = np.frombuffer(buf, dtype="<f8", count=n, offset=off)
    if off + 8 * n != len(body):
        raise SerializationError("payload length does not match layer sizes")
    net = Mlp(sizes, flat=flat_out)
    net.acts = acts
    net.flat[...] = params
    return net
