"""Binary field snapshots and atomic report writers.

Snapshot layout (little-endian)::

    magic  4s   b"FNLS"
    version u32
    dim    u32
    N      u32
    L      f64
    kind   u8    0 = real, 1 = complex
    payload f64 * N^dim (complex: interleaved re, im), row-major
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .domain import Field, Grid

MAGIC = b"FNLS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdB")


class SnapshotError(ValueError):
    pass


def _atomic_write(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def encode_field(f: Field) -> bytes:
    g = f.grid
    complex_ = np.iscomplexobj(f.values)
    header = _HEADER.pack(MAGIC, VERSION, g.dim, g.N, g.L, 1 if complex_ else 0)
    if complex_:
        payload = np.ascontiguousarray(f.values).view(np.float64)
    else:
        payload = np.ascontiguousarray(f.values, dtype=np.float64)
    return header + payload.astype("<f8").tobytes()


def decode_field(data: bytes) -> Field:
    if len(data) < _HEADER.size:
        raise SnapshotError("snapshot shorter than its header")
    magic, version, dim, n, L, kind = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotError(f"bad snapshot magic {magic!r}")
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    if kind not in (0, 1):
        raise SnapshotError(f"unknown payload kind {kind}")
    try:
        grid = Grid(dim, L, n)
    except ValueError as exc:
        raise SnapshotError(f"invalid grid in snapshot: {exc}") from exc
    count = grid.size * (2 if kind else 1)
    body = data[_HEADER.size:]
    if len(body) != 8 * count:
        raise SnapshotError(f"payload has {len(body)} bytes, expected {8 * count}")
    vals = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if kind:
        vals = vals.view(np.complex128)
    return Field(grid, vals.reshape(grid.shape))


def write_snapshot(path, f: Field) -> Path:
    return _atomic_write(path, encode_field(f))


def read_snapshot(path) -> Field:
    return decode_field(Path(path).read_bytes())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def write_json(path, obj) -> Path:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"
    return _atomic_write(path, text.encode())


def write_csv(path, columns: dict) -> Path:
    """Write equal-length columns; floats use repr so output is reproducible."""
    names = list(columns)
    rows = zip(*(columns[k] for k in names))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return _atomic_write(path, buf.getvalue().encode())


def write_rows(path, header, rows) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return _atomic_write(path, buf.getvalue().encode())
