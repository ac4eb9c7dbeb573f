"""Binary checkpoint files.

Layout (all little-endian)::

    magic      8 bytes  b"LFXCKPT\\0"
    version    u32
    meta_len   u32, then meta_len bytes of UTF-8 JSON metadata
    table      parameter table (below)
    has_adam   u8; if 1: t (u64), lr, beta1, beta2, eps (f64 each),
               then two parameter tables: first and second moments

    parameter table: count (u32), then per entry
        name_len (u16), name (UTF-8), dtype (u8: 0 = f32, 1 = f64),
        ndim (u8), dims (u32 * ndim), values (prod(dims) of dtype)

Parameters are stored as f32 and Adam moments as f64, so a resumed run
continues from exactly the in-memory state.

Writes go to a temporary file that is renamed into place.
"""

import json
import os
import struct
import tempfile

import numpy as np

from .optim import AdamState

MAGIC = b"LFXCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


_DTYPES = ("<f4", "<f8")


def _write_table(fh, table, code=0):
    fh.write(struct.pack("<I", len(table)))
    for name in sorted(table):
        arr = np.ascontiguousarray(table[name], dtype=_DTYPES[code])
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<B", code))
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def _read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def _read_table(fh):
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    table = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, nlen).decode("utf-8")
        code, ndim = struct.unpack("<BB", _read_exact(fh, 2))
        if code >= len(_DTYPES):
            raise CheckpointError(f"unknown dtype code {code} for {name!r}")
        dtype = np.dtype(_DTYPES[code])
        dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
        size = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(_read_exact(fh, dtype.itemsize * size), dtype=dtype).reshape(dims)
        table[name] = arr.astype(dtype.newbyteorder("="))
    return table


def save_checkpoint(path, params, metadata=None, adam=None):
    """Atomically write ``params`` (name -> array), metadata and optional Adam state."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
            fh.write(struct.pack("<I", len(meta)))
            fh.write(meta)
            _write_table(fh, params)
            if adam is None:
                fh.write(struct.pack("<B", 0))
            else:
                fh.write(struct.pack("<B", 1))
                fh.write(struct.pack("<Q4d", adam.t, adam.lr, adam.beta1, adam.beta2, adam.eps))
                _write_table(fh, adam.m, code=1)
                _write_table(fh, adam.v, code=1)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Return ``(params, metadata, adam_state_or_None)``."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (mlen,) = struct.unpack("<I", _read_exact(fh, 4))
        metadata = json.loads(_read_exact(fh, mlen).decode("utf-8"))
        params = _read_table(fh)
        (has_adam,) = struct.unpack("<B", _read_exact(fh, 1))
        adam = None
        if has_adam:
            t, lr, b1, b2, eps = struct.unpack("<Q4d", _read_exact(fh, 40))
            m = _read_table(fh)
            v = _read_table(fh)
            adam = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, t=t, m=m, v=v)
    return params, metadata, adam


def table_size(path):
    """Total number of scalars in a checkpoint's parameter table, read from dims only."""
    with open(path, "rb") as fh:
        _read_exact(fh, len(MAGIC) + 4)
        (mlen,) = struct.unpack("<I", _read_exact(fh, 4))
        fh.seek(mlen, os.SEEK_CUR)
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        total = 0
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
            fh.seek(nlen, os.SEEK_CUR)
            code, ndim = struct.unpack("<BB", _read_exact(fh, 2))
            dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            size = int(np.prod(dims)) if ndim else 1
            fh.seek(np.dtype(_DTYPES[code]).itemsize * size, os.SEEK_CUR)
            total += size
    return total
