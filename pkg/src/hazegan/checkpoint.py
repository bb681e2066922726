"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic        8 bytes   b"HZGCKPT\\0"
    version      u32
    header_len   u32
    header       header_len bytes of UTF-8 JSON (fingerprint, config, counters)
    n_tensors    u32
    n_tensors x:
        name_len u16, name (UTF-8)
        dtype    u8        (see DTYPE_CODES)
        ndim     u8
        shape    ndim x u64
        nbytes   u64
        data     nbytes, C order, little-endian
    digest       32 bytes  SHA-256 of everything above

The header can be read without touching tensor data, see :func:`read_header`.
"""
import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointIntegrityError, CheckpointVersionError

MAGIC = b"HZGCKPT\x00"
FORMAT_VERSION = 1

DTYPE_CODES = {
    torch.float32: 1,
    torch.float64: 2,
    torch.int64: 3,
    torch.uint8: 4,
    torch.int32: 5,
    torch.float16: 6,
}
_CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}
_NP_DTYPES = {1: "<f4", 2: "<f8", 3: "<i8", 4: "u1", 5: "<i4", 6: "<f2"}


def _chunks(header, tensors):
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    yield MAGIC + struct.pack("<II", FORMAT_VERSION, len(blob)) + blob
    yield struct.pack("<I", len(tensors))
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in DTYPE_CODES:
            raise TypeError(f"unsupported dtype {t.dtype} for {name}")
        code = DTYPE_CODES[t.dtype]
        data = t.numpy().astype(_NP_DTYPES[code], copy=False).tobytes(order="C")
        raw_name = name.encode("utf-8")
        yield (
            struct.pack("<H", len(raw_name))
            + raw_name
            + struct.pack(f"<BB{t.ndim}QQ", code, t.ndim, *t.shape, len(data))
        )
        yield data


def write(path, header, tensors):
    """Atomically write ``header`` (JSON-able dict) and named tensors to ``path``.

    Data is streamed to a temporary sibling file and renamed into place, so a
    crash never leaves a half-written checkpoint under ``path``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    digest = hashlib.sha256()
    try:
        with open(tmp, "wb") as fh:
            for chunk in _chunks(header, tensors):
                digest.update(chunk)
                fh.write(chunk)
            fh.write(digest.digest())
            fh.flush()
            os.fsync(fh.fileno())
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointIntegrityError("checkpoint is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_preamble(reader):
    if bytes(reader.take(len(MAGIC))) != MAGIC:
        raise CheckpointIntegrityError("not a hazegan checkpoint (bad magic)")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    (hlen,) = reader.unpack("<I")
    try:
        return json.loads(bytes(reader.take(hlen)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"corrupt checkpoint header: {exc}") from exc


def read_header(path):
    """Header dict only; reads just the leading bytes of the file."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(len(MAGIC) + 8))
        if bytes(reader.take(len(MAGIC))) != MAGIC:
            raise CheckpointIntegrityError("not a hazegan checkpoint (bad magic)")
        version, hlen = reader.unpack("<II")
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
        blob = fh.read(hlen)
    if len(blob) != hlen:
        raise CheckpointIntegrityError("checkpoint is truncated")
    try:
        return json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"corrupt checkpoint header: {exc}") from exc


def read(path):
    """Return ``(header, tensors)``; verifies the trailing digest first."""
    buf = memoryview(Path(path).read_bytes())
    if len(buf) < len(MAGIC) + 32:
        raise CheckpointIntegrityError("checkpoint is truncated")
    body = buf[:-32]
    reader = _Reader(body)
    header = _read_preamble(reader)
    if hashlib.sha256(body).digest() != bytes(buf[-32:]):
        raise CheckpointIntegrityError("checkpoint digest mismatch (truncated or corrupted)")
    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = reader.unpack("<H")
        name = bytes(reader.take(nlen)).decode("utf-8")
        code, ndim = reader.unpack("<BB")
        if code not in _CODE_DTYPES:
            raise CheckpointIntegrityError(f"unknown dtype code {code} for {name}")
        shape = reader.unpack(f"<{ndim}Q") if ndim else ()
        (nbytes,) = reader.unpack("<Q")
        arr = np.frombuffer(reader.take(nbytes), dtype=_NP_DTYPES[code]).reshape(shape)
        tensors[name] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    if reader.pos != len(reader.buf):
        raise CheckpointIntegrityError("trailing bytes after tensor table")
    return header, tensors
