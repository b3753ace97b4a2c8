"""Versioned binary container for named arrays plus text metadata.

Layout::

    PANSR-CKPT\\n
    version=<major>.<minor>\\n
    meta <key>=<value>\\n            (repeated)
    tensor <name> <dtype> <dims>\\n  (repeated; dims comma-separated, "-" for rank 0)
    end\\n
    <raw little-endian array bytes, in header order>
    <32-byte sha256 of everything above>

Loading verifies the digest before parsing anything, so a corrupt file never
yields a partial state.
"""

from __future__ import annotations

import hashlib
import os
from typing import Dict, Tuple

import numpy as np

from .errors import ChecksumError, DataError, VersionError

MAGIC = b"PANSR-CKPT\n"
FORMAT_VERSION = (1, 0)


def _encode_value(value) -> str:
    text = str(value)
    if "\n" in text:
        raise ValueError("metadata values must be single-line")
    return text


def dumps(arrays: Dict[str, np.ndarray], meta: Dict[str, object]) -> bytes:
    header = [MAGIC, f"version={FORMAT_VERSION[0]}.{FORMAT_VERSION[1]}\n".encode()]
    for key in sorted(meta):
        if "=" in key or " " in key:
            raise ValueError(f"bad metadata key {key!r}")
        header.append(f"meta {key}={_encode_value(meta[key])}\n".encode())
    payload = []
    for name, arr in arrays.items():
        if " " in name:
            raise ValueError(f"bad tensor name {name!r}")
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        dims = ",".join(str(d) for d in arr.shape) if arr.ndim else "-"
        header.append(f"tensor {name} {arr.dtype.str.lstrip('<>=|')} {dims}\n".encode())
        payload.append(np.ascontiguousarray(le).tobytes())
    header.append(b"end\n")
    body = b"".join(header) + b"".join(payload)
    return body + hashlib.sha256(body).digest()


def loads(blob: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    if len(blob) < len(MAGIC) + 32 or not blob.startswith(MAGIC):
        raise DataError("not a pansr checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checkpoint checksum mismatch; file is corrupt or truncated")
    pos = len(MAGIC)
    meta: Dict[str, str] = {}
    entries = []
    version_seen = False
    while True:
        end = body.index(b"\n", pos)
        line = body[pos:end].decode()
        pos = end + 1
        if line == "end":
            break
        if line.startswith("version="):
            major, minor = (int(v) for v in line[len("version="):].split("."))
            if major != FORMAT_VERSION[0]:
                raise VersionError(
                    f"checkpoint format version {major}.{minor} is not readable by "
                    f"reader version {FORMAT_VERSION[0]}.{FORMAT_VERSION[1]}"
                )
            version_seen = True
        elif line.startswith("meta "):
            key, _, value = line[5:].partition("=")
            meta[key] = value
        elif line.startswith("tensor "):
            _, name, dtype, dims = line.split(" ")
            shape = () if dims == "-" else tuple(int(d) for d in dims.split(","))
            entries.append((name, np.dtype(dtype).newbyteorder("<"), shape))
        else:
            raise DataError(f"unrecognised header line {line!r}")
    if not version_seen:
        raise DataError("checkpoint header lacks a version line")
    arrays: Dict[str, np.ndarray] = {}
    for name, dtype, shape in entries:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(body, dtype=dtype, count=count, offset=pos).reshape(shape)
        arrays[name] = arr.astype(dtype.newbyteorder("="))
        pos += nbytes
    if pos != len(body):
        raise DataError("trailing bytes after checkpoint payload")
    return arrays, meta


def save(path, arrays: Dict[str, np.ndarray], meta: Dict[str, object]) -> None:
    blob = dumps(arrays, meta)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load(path) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    with open(path, "rb") as fh:
        return loads(fh.read())
