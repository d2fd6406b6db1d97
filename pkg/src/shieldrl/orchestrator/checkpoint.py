"""Checkpoint container: versioned binary for all parameters + JSON manifest.

Layout of state.bin (little-endian):
    magic b"SRLC" | u32 version | u32 n_entries |
    per entry: u16 name_len | name | u8 kind | u64 payload_len | payload |
    u32 crc32 of everything before the checksum

kind 0 payloads are network blobs (see shieldrl.nn.serialize); kind 1 payloads
are raw float64 arrays (u32 ndim | u64 dims... | data), used for optimizer
moments and target stacks.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..nn import Mlp, mlp_from_bytes, mlp_to_bytes
from ..nn.serialize import SerializationError

MAGIC = b"SRLC"
VERSION = 1
KIND_MLP = 0
KIND_ARRAY = 1


def _array_payload(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.float64)
    head = struct.pack("<I", arr.ndim) + b"".join(
        struct.pack("<Q", d) for d in arr.shape)
    return head + arr.astype("<f8").tobytes()


def _array_from_payload(buf: bytes) -> np.ndarray:
    (ndim,) = struct.unpack_from("<I", buf, 0)
    dims = struct.unpack_from("<" + "Q" * ndim, buf, 4)
    data = np.frombuffer(buf, dtype="<f8", offset=4 + 8 * ndim)
    return data.reshape(dims).copy()


def write_container(path, entries: dict):
    """entries: name -> Mlp | ndarray."""
    out = bytearray()
    out += MAGIC + struct.pack("<II", VERSION, len(entries))
    for name, value in entries.items():
        blob = name.encode()
        out += struct.pack("<H", len(blob)) + blob
        if isinstance(value, Mlp):
            payload = mlp_to_bytes(value)
            out += struct.pack("<BQ", KIND_MLP, len(payload)) + payload
        else:
            payload = _array_payload(value)
            out += struct.pack("<BQ", KIND_ARRAY, len(payload)) + payload
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(out))


def read_container(path) -> dict:
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise SerializationError(f"{path}: not a checkpoint container")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != crc:
        raise SerializationError(f"{path}: checksum mismatch (truncated or corrupted)")
    version, n = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise SerializationError(f"{path}: unsupported container version {version}")
    off = 12
    entries = {}
    for _ in range(n):
        (name_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + name_len].decode()
        off += name_len
        kind, payload_len = struct.unpack_from("<BQ", buf, off)
        off += 9
        payload = buf[off:off + payload_len]
        off += payload_len
        if kind == KIND_MLP:
            entries[name] = mlp_from_bytes(payload)
        else:
            entries[name] = _array_from_payload(payload)
    return entries


def save_checkpoint(ckpt_dir, manifest: dict, entries: dict, buffer=None):
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    write_container(ckpt_dir / "state.bin", entries)
    if buffer is not None:
        buffer.save_jsonl(ckpt_dir / "buffer.jsonl")
        manifest = dict(manifest, buffer=buffer.meta())
    manifest = dict(manifest, container_crc=zlib.crc32(
        (ckpt_dir / "state.bin").read_bytes()) & 0xFFFFFFFF)
    (ckpt_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_checkpoint(ckpt_dir):
    ckpt_dir = Path(ckpt_dir)
    manifest = json.loads((ckpt_dir / "manifest.json").read_text())
    blob = (ckpt_dir / "state.bin").read_bytes()
    if zlib.crc32(blob) & 0xFFFFFFFF != manifest.get("container_crc"):
        raise SerializationError(f"{ckpt_dir}: container does not match manifest checksum")
    entries = read_container(ckpt_dir / "state.bin")
    return manifest, entries
