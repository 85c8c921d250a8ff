"""Deterministic container format for model/weight files.

Layout: magic line, 8-byte little-endian header length, JSON header, then
the raw row-major array payloads back to back. The header carries a format
version, arbitrary metadata and a manifest of (name, dtype, shape, offset).
Identical inputs always produce identical bytes, which keeps whole-pipeline
reruns diffable (a zip-based container would embed timestamps).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EVCAT-ARRAYS\n"
FORMAT_VERSION = 1


class ArrayFileError(Exception):
    """Unreadable, wrong-version or inconsistent array container."""


def save_arrays(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    manifest = []
    payloads = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        blob = arr.tobytes(order="C")
        manifest.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        payloads.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"version": FORMAT_VERSION, "meta": meta, "arrays": manifest},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in payloads:
            fh.write(blob)


def load_arrays(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ArrayFileError(f"cannot read {path}: {exc}") from exc
    if not data.startswith(MAGIC):
        raise ArrayFileError(f"{path} is not an array container")
    pos = len(MAGIC)
    (header_len,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    try:
        header = json.loads(data[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArrayFileError(f"{path}: corrupt header: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise ArrayFileError(f"{path}: unsupported version {header.get('version')!r}")
    base = pos + header_len
    arrays = {}
    for entry in header["arrays"]:
        start = base + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(data):
            raise ArrayFileError(f"{path}: truncated payload for {entry['name']!r}")
        arr = np.frombuffer(data[start:end], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header["meta"], arrays
