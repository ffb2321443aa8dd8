"""GCSD container format, version 1.

Layout: magic ``GCSD``, little-endian u32 version, u32 record count, then
per record a UTF-8 key=value header terminated by a blank line, raw
little-endian arrays in fixed order (kx, ky, phi as float32, mask as u8,
SG and dP snapshot stacks as float32), and a CRC32 (u32).

The checksum covers the record's header and payload bytes, so truncation or
corruption is detected per record and no partial record is ever returned.
"""
from __future__ import annotations

import io
import zlib
from pathlib import Path

import numpy as np

from .records import FieldMaps, SampleRecord, ScalarParams, SCALAR_ORDER

MAGIC = b"GCSD"
VERSION = 1


class DatasetFormatError(RuntimeError):
    pass


def _record_bytes(rec: SampleRecord) -> bytes:
    nz, nr = rec.grid_shape
    n_t = len(rec.times_days)
    lines = [f"nz={nz}", f"nr={nr}", f"n_t={n_t}",
             f"thickness={rec.fields.thickness!r}"]
    for name in SCALAR_ORDER:
        lines.append(f"{name}={getattr(rec.scalars, name)!r}")
    lines.append("times_days=" + ",".join(repr(t) for t in rec.times_days))
    header = ("\n".join(lines) + "\n\n").encode("utf-8")

    buf = io.BytesIO()
    buf.write(header)
    for arr in (rec.fields.kx, rec.fields.ky, rec.fields.phi):
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    buf.write(np.ascontiguousarray(rec.mask, dtype=np.uint8).tobytes())
    buf.write(np.ascontiguousarray(rec.sg, dtype="<f4").tobytes())
    buf.write(np.ascontiguousarray(rec.dp, dtype="<f4").tobytes())
    payload = buf.getvalue()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    return payload + crc.to_bytes(4, "little")


def write_dataset(path, records) -> None:
    records = list(records)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(records).to_bytes(4, "little"))
        for rec in records:
            fh.write(_record_bytes(rec))


def _parse_header(blob: bytes, offset: int, index: int):
    end = blob.find(b"\n\n", offset)
    if end < 0:
        raise DatasetFormatError(f"record {index}: unterminated header")
    fields = {}
    for lineno, line in enumerate(blob[offset:end].decode("utf-8").splitlines(), 1):
        if "=" not in line:
            raise DatasetFormatError(f"record {index} header line {lineno}: missing '='")
        key, value = line.split("=", 1)
        fields[key] = value
    return fields, end + 2


def import_external_dataset(source, out_path, adapter) -> int:
    """Convert an externally published dataset into a GCSD file.

    ``adapter`` is a callable mapping the source location to an iterable of
    SampleRecord. The upstream file layout is not pinned here (it varies by
    distribution), so only this adapter interface is declared; supply one
    per source. Returns the number of records written.
    """
    records = list(adapter(source))
    for rec in records:
        rec.validate()
    write_dataset(out_path, records)
    return len(records)


def read_dataset(path) -> list[SampleRecord]:
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic (not a GCSD file)")
    version = int.from_bytes(blob[4:8], "little")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    count = int.from_bytes(blob[8:12], "little")
    offset = 12
    records = []
    for index in range(count):
        start = offset
        header, offset = _parse_header(blob, offset, index)
        try:
            nz = int(header["nz"])
            nr = int(header["nr"])
            n_t = int(header["n_t"])
            thickness = float(header["thickness"])
            scalars = ScalarParams(**{k: float(header[k]) for k in SCALAR_ORDER})
            times = tuple(float(t) for t in header["times_days"].split(","))
        except (KeyError, ValueError) as exc:
            raise DatasetFormatError(f"record {index}: bad header field ({exc})") from exc
        if len(times) != n_t:
            raise DatasetFormatError(f"record {index}: schedule length mismatch")

        cells = nz * nr
        sizes = [4 * cells, 4 * cells, 4 * cells, cells, 4 * n_t * cells, 4 * n_t * cells]
        payload_len = sum(sizes)
        if offset + payload_len + 4 > len(blob):
            raise DatasetFormatError(f"record {index}: truncated payload")
        stored_crc = int.from_bytes(blob[offset + payload_len:offset + payload_len + 4], "little")
        actual_crc = zlib.crc32(blob[start:offset + payload_len]) & 0xFFFFFFFF
        if stored_crc != actual_crc:
            raise DatasetFormatError(f"record {index}: checksum mismatch "
                                     f"(stored {stored_crc:#x}, computed {actual_crc:#x})")

        def take(nbytes, dtype, shape):
            nonlocal offset
            arr = np.frombuffer(blob, dtype=dtype, count=int(np.prod(shape)), offset=offset)
            offset += nbytes
            return arr.reshape(shape).copy()

        kx = take(sizes[0], "<f4", (nz, nr)).astype(np.float64)
        ky = take(sizes[1], "<f4", (nz, nr)).astype(np.float64)
        phi = take(sizes[2], "<f4", (nz, nr)).astype(np.float64)
        mask = take(sizes[3], np.uint8, (nz, nr)).astype(bool)
        sg = take(sizes[4], "<f4", (n_t, nz, nr))
        dp = take(sizes[5], "<f4", (n_t, nz, nr))
        offset += 4  # crc
        records.append(SampleRecord(
            fields=FieldMaps(kx=kx, ky=ky, phi=phi, thickness=thickness),
            scalars=scalars, mask=mask, sg=sg, dp=dp, times_days=times))
    return records
