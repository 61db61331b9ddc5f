"""Binary tensor files and CSV helpers with atomic writes.

Tensor layout (little endian)::

    b"DNRB" | u32 version | u32 rank | u32 dims[rank] | f32 payload (row-major)
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import InvalidInput

MAGIC = b"DNRB"
VERSION = 1


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(array) -> bytes:
    a = np.asarray(array)
    if a.ndim == 0:
        a = a.reshape(1)
    head = MAGIC + struct.pack("<II", VERSION, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a, dtype="<f4").tobytes()


def decode_tensor(data: bytes, name="<bytes>") -> np.ndarray:
    if len(data) < 12 or data[:4] != MAGIC:
        raise InvalidInput(f"{name}: not a DNRB tensor file (bad magic)")
    version, rank = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise InvalidInput(f"{name}: unsupported tensor version {version}")
    off = 12 + 4 * rank
    if len(data) < off:
        raise InvalidInput(f"{name}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", data, 12)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 0
    if len(data) - off != 4 * count:
        raise InvalidInput(f"{name}: payload has {len(data) - off} bytes, expected {4 * count}")
    return np.frombuffer(data, dtype="<f4", offset=off, count=count).reshape(dims).astype(np.float32)


def write_tensor(path, array):
    atomic_write_bytes(path, encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"{path}: file not found")
    return decode_tensor(path.read_bytes(), str(path))


def fmt(v) -> str:
    """Shortest round-trip text for numbers; deterministic across runs."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def read_csv(path, required=()) -> tuple[list, dict]:
    """Return ``(header, columns)``; every required column must be present."""
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInput(f"{path}: empty file, header row required") from None
        rows = list(reader)
    for col in required:
        if col not in header:
            raise InvalidInput(f"{path}: missing column '{col}'")
    cols = {h: [] for h in header}
    for n, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise InvalidInput(f"{path}: line {n} has {len(r)} fields, expected {len(header)}")
        for h, v in zip(header, r):
            cols[h].append(v)
    return header, cols


def as_float(path, name, values) -> np.ndarray:
    try:
        return np.array([float(v) for v in values])
    except ValueError as exc:
        raise InvalidInput(f"{path}: column '{name}' is not numeric ({exc})") from None


def as_int(path, name, values) -> np.ndarray:
    try:
        return np.array([int(v) for v in values], dtype=np.int64)
    except ValueError as exc:
        raise InvalidInput(f"{path}: column '{name}' is not integer ({exc})") from None


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
