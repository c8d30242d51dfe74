"""Artifact writers: provenance-stamped CSV/JSON and the binary grid layout.

Binary layout (all little-endian)::

    8 bytes   magic, e.g. b"RFXGRID1"
    int64     k, number of count fields
    int64[k]  counts (array dimensions)
    int64     m, number of extent fields
    float64[m] extents (grid descriptors such as t0, t1, x0, x1)
    int64     a, number of arrays
    float64[] each array, row-major, shape given by ``counts``

Writes go through a temporary file and ``os.replace`` so readers never see a
partial file and an existing entry is never modified in place.
"""

import csv
import io as _io
import json
import os
import struct

import numpy as np

from . import __version__
from .errors import CacheError


def provenance(config_hash, seed, **extra):
    out = {"tool": "rankflux", "version": __version__, "config_hash": config_hash, "seed": seed}
    out.update(extra)
    return out


def _format(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def atomic_write_bytes(path, data):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_csv(path, header, rows, prov=None):
    """Write CSV with ``# key=value`` provenance comment lines before the header."""
    buf = _io.StringIO()
    if prov:
        for k in sorted(prov):
            buf.write(f"# {k}={prov[k]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_format(v) for v in row])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def read_csv(path):
    """Return ``(provenance dict, header, rows as list of str lists)``."""
    prov, lines = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                prov[k] = v
            else:
                lines.append(line)
    rows = list(csv.reader(lines))
    return prov, rows[0], rows[1:]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, payload):
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True, allow_nan=True) + "\n"
    atomic_write_bytes(path, text.encode("utf-8"))


def write_binary(path, magic, counts, extents, arrays):
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    parts = [magic, struct.pack("<q", len(counts)), struct.pack(f"<{len(counts)}q", *counts),
             struct.pack("<q", len(extents)), struct.pack(f"<{len(extents)}d", *extents),
             struct.pack("<q", len(arrays))]
    for arr in arrays:
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def read_binary(path, magic, shapes):
    """Read a binary file; ``shapes(counts)`` returns the array shapes to expect."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CacheError(f"cannot read {path}: {exc}") from None
    if data[:8] != magic:
        raise CacheError(f"{path}: bad magic {data[:8]!r}")
    try:
        return _parse_binary(path, data, shapes)
    except struct.error as exc:
        raise CacheError(f"{path}: truncated header: {exc}") from None


def _parse_binary(path, data, shapes):
    pos = 8
    (k,) = struct.unpack_from("<q", data, pos)
    pos += 8
    counts = struct.unpack_from(f"<{k}q", data, pos)
    pos += 8 * k
    (m,) = struct.unpack_from("<q", data, pos)
    pos += 8
    extents = struct.unpack_from(f"<{m}d", data, pos)
    pos += 8 * m
    (a,) = struct.unpack_from("<q", data, pos)
    pos += 8
    arrays = []
    for shape in shapes(counts)[:a]:
        size = int(np.prod(shape))
        if pos + 8 * size > len(data):
            raise CacheError(f"{path}: truncated array data")
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        arrays.append(arr.astype(float))
        pos += 8 * size
    if pos != len(data):
        raise CacheError(f"{path}: unexpected trailing or missing data")
    return list(counts), list(extents), arrays
