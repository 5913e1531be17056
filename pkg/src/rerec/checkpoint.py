"""Shared on-disk checkpoint format.

A checkpoint is one UTF-8 JSON header line terminated by ``\\n`` followed by a
raw blob of little-endian floats (32-bit unless the header says otherwise),
each array written in row-major order in the sequence listed under
``header["arrays"]``.
"""
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import FormatVersionError

FORMAT_NAME = "rerec-ckpt"
FORMAT_VERSION = 1
_DTYPES = {"<f4", "<f8"}


def save_checkpoint(path, kind, arrays, meta=None, dtype="<f4"):
    """Write ``arrays`` (name -> ndarray, insertion order kept) under ``kind``.

    Returns the fingerprint of the written file.
    """
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype}")
    header = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "dtype": dtype,
        "arrays": [{"name": name, "shape": list(np.shape(a))} for name, a in arrays.items()],
        "meta": meta or {},
    }
    blob = b"".join(np.ascontiguousarray(a, dtype=dtype).tobytes() for a in arrays.values())
    data = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + blob
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return fingerprint_bytes(data)


def read_header(path):
    with open(path, "rb") as fh:
        line = fh.readline()
    return _parse_header(line, path)


def _parse_header(line, path):
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatVersionError(f"{path}: unreadable checkpoint header ({exc})") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise FormatVersionError(f"{path}: not a {FORMAT_NAME} file")
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatVersionError(
            f"{path}: format_version {header.get('format_version')!r}, expected {FORMAT_VERSION}"
        )
    if header.get("dtype") not in _DTYPES:
        raise FormatVersionError(f"{path}: bad dtype {header.get('dtype')!r}")
    return header


def load_checkpoint(path, kind=None):
    """Return ``(header, arrays)``; arrays are converted to float64."""
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatVersionError(f"{path}: missing header terminator")
    header = _parse_header(data[:nl], path)
    if kind is not None and header.get("kind") != kind:
        raise FormatVersionError(f"{path}: expected kind {kind!r}, found {header.get('kind')!r}")
    dtype = np.dtype(header["dtype"])
    blob = memoryview(data)[nl + 1:]
    arrays = {}
    offset = 0
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        nbytes = n * dtype.itemsize
        if offset + nbytes > len(blob):
            raise FormatVersionError(f"{path}: truncated blob at array {spec['name']!r}")
        arr = np.frombuffer(blob[offset:offset + nbytes], dtype=dtype).reshape(shape)
        arrays[spec["name"]] = arr.astype(np.float64)
        offset += nbytes
    if offset != len(blob):
        raise FormatVersionError(f"{path}: {len(blob) - offset} trailing bytes after blob")
    return header, arrays


def fingerprint_bytes(data):
    return hashlib.sha256(data).hexdigest()[:16]


def fingerprint(path):
    return fingerprint_bytes(Path(path).read_bytes())
