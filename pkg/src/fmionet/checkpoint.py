"""Checkpoint container: JSON header plus raw little-endian buffers, CRC32.

Layout: magic ``FMCK``, u32 version, u64 header length, UTF-8 JSON header
(config echo, parameter manifest with names/shapes/dtypes, optimizer
scalars, RNG state, free-form extras), the parameter buffers in manifest
order, the optimizer moment buffers, and a trailing CRC32 over everything
before it. Save and load are byte-exact inverses.
"""
from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"FMCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, *, config: dict, params: list, opt_buffers: list,
                    opt_scalars: dict, rng_state: dict, extra: dict | None = None) -> None:
    """``params`` is a list of (name, ndarray) in a stable order."""
    manifest = [{"name": n, "shape": list(a.shape), "dtype": str(a.dtype)}
                for n, a in params]
    opt_manifest = [{"shape": list(a.shape), "dtype": str(a.dtype)} for a in opt_buffers]
    header = json.dumps({
        "config": config,
        "manifest": manifest,
        "opt_manifest": opt_manifest,
        "opt_scalars": opt_scalars,
        "rng_state": rng_state,
        "extra": extra or {},
    }, sort_keys=True).encode("utf-8")

    body = bytearray()
    body += MAGIC
    body += VERSION.to_bytes(4, "little")
    body += len(header).to_bytes(8, "little")
    body += header
    for _, arr in params:
        body += np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
    for arr in opt_buffers:
        body += np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    body += crc.to_bytes(4, "little")
    Path(path).write_bytes(bytes(body))


def load_checkpoint(path) -> dict:
    blob = Path(path).read_bytes()
    if len(blob) < 20 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic (not a checkpoint)")
    version = int.from_bytes(blob[4:8], "little")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    stored_crc = int.from_bytes(blob[-4:], "little")
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    header_len = int.from_bytes(blob[8:16], "little")
    header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    offset = 16 + header_len

    def take(meta):
        nonlocal offset
        dtype = np.dtype(meta["dtype"]).newbyteorder("<")
        count = int(np.prod(meta["shape"])) if meta["shape"] else 1
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        offset += arr.nbytes
        return arr.reshape(meta["shape"]).astype(np.dtype(meta["dtype"])).copy()

    params = [(m["name"], take(m)) for m in header["manifest"]]
    opt_buffers = [take(m) for m in header["opt_manifest"]]
    if offset != len(blob) - 4:
        raise CheckpointError(f"{path}: trailing bytes after buffers")
    return {
        "config": header["config"],
        "params": params,
        "opt_buffers": opt_buffers,
        "opt_scalars": header["opt_scalars"],
        "rng_state": header["rng_state"],
        "extra": header["extra"],
    }
