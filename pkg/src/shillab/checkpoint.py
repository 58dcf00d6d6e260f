"""Flat binary tensor checkpoints.

Layout: ``b"SHLBCKPT"``, a little-endian uint32 header length, a UTF-8 JSON
header ``{"meta": {...}, "tensors": [{"name", "shape", "offset"}, ...]}``, then
the tensors as contiguous little-endian float64 data.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import ParseError

MAGIC = b"SHLBCKPT"


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_tensors(path, tensors, meta=None):
    entries = []
    offset = 0
    arrays = []
    for name in sorted(tensors):
        a = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
        arrays.append(a)
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for a in arrays:
            fh.write(a.tobytes())


def load_tensors(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<I", blob, len(MAGIC))
    start = len(MAGIC) + 4
    header = json.loads(blob[start:start + hlen])
    base = start + hlen
    tensors = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        a = np.frombuffer(blob, dtype="<f8", count=count, offset=base + e["offset"])
        tensors[e["name"]] = a.reshape(e["shape"]).astype(np.float64)
    return tensors, header["meta"]


def save_store(path, store, meta=None):
    save_tensors(path, store.params, meta)


def load_store(path, store):
    tensors, meta = load_tensors(path)
    store.load_state(tensors)
    return meta
