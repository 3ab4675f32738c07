"""Portable parameter checkpoints.

Layout (all integers little-endian)::

    magic     8 bytes   b"TBCKPT\\x00\\x01"
    version   uint32    currently 1
    hlen      uint64    length of the JSON header in bytes
    header    hlen      UTF-8 JSON object:
                          {"version": 1,
                           "hyperparameters": {...},
                           "extra": {...},
                           "tensors": [{"name": str, "shape": [int, ...],
                                        "offset": int, "count": int}, ...]}
    payload   ...       float64 little-endian values, row-major; each
                        tensor's ``offset`` is a byte offset into the payload

Tensors appear in the payload in header order with no padding.
"""
import json
import struct

import numpy as np

from ..errors import ParseError, VersionError

MAGIC = b"TBCKPT\x00\x01"
VERSION = 1
_PRE = struct.Struct("<IQ")


def save_checkpoint(path, tensors, hyperparameters, extra=None):
    """Write ``tensors`` (name -> array) with ``hyperparameters`` to ``path``."""
    index = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.array(arr, dtype="<f8", order="C")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset,
                      "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"version": VERSION, "hyperparameters": hyperparameters,
         "extra": extra or {}, "tensors": index},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_PRE.pack(VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path):
    """Return ``(tensors, hyperparameters, extra)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise ParseError("not a transbeam checkpoint (bad magic)", 0)
    pos = len(MAGIC)
    if len(blob) < pos + _PRE.size:
        raise ParseError("truncated checkpoint preamble", len(blob))
    version, hlen = _PRE.unpack_from(blob, pos)
    if version != VERSION:
        raise VersionError(f"checkpoint version {version}, expected {VERSION}")
    pos += _PRE.size
    if len(blob) < pos + hlen:
        raise ParseError("truncated checkpoint header", len(blob))
    try:
        header = json.loads(blob[pos: pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad checkpoint header: {exc}", pos)
    pos += hlen
    tensors = {}
    for entry in header["tensors"]:
        start = pos + entry["offset"]
        end = start + 8 * entry["count"]
        if end > len(blob):
            raise ParseError(f"truncated payload for tensor {entry['name']!r}", len(blob))
        arr = np.frombuffer(blob, dtype="<f8", count=entry["count"], offset=start)
        tensors[entry["name"]] = arr.astype(np.float64).reshape(tuple(entry["shape"]))
    return tensors, header["hyperparameters"], header.get("extra", {})
