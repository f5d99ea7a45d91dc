"""Self-describing weight container (``.ifw``).

Layout: 4-byte magic ``IFW1``, little-endian uint32 header length, UTF-8 JSON
header, then the raw tensor payloads concatenated in header order. Payloads
are little-endian float32, so save/load of a float32 network is bit-lossless.
The header carries architecture metadata plus per-tensor name and shape.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"IFW1"


class WeightFormatError(ValueError):
    """Raised on malformed, truncated, or mismatched weight files."""


def save_weights(path, tensors, arch):
    """Write named arrays (dict, ordered) with an architecture header."""
    entries = []
    payloads = []
    for name, value in tensors.items():
        data = value.data if hasattr(value, "data") else np.asarray(value)
        payload = np.ascontiguousarray(data, dtype="<f4")
        entries.append({"name": name, "shape": list(payload.shape)})
        payloads.append(payload.tobytes())
    header = json.dumps({"format": 1, "arch": arch, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for p in payloads:
            f.write(p)


def load_weights(path):
    """Read back (arch, {name: float32 ndarray}); errors name the bad tensor."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise WeightFormatError(f"{path}: not a weight file (bad magic)")
    if len(blob) < 8:
        raise WeightFormatError(f"{path}: truncated header")
    (header_len,) = struct.unpack("<I", blob[4:8])
    header_end = 8 + header_len
    if len(blob) < header_end:
        raise WeightFormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8:header_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise WeightFormatError(f"{path}: unreadable header ({err})") from err
    if header.get("format") != 1:
        raise WeightFormatError(f"{path}: unsupported format version {header.get('format')!r}")
    tensors = {}
    offset = header_end
    for entry in header["tensors"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        chunk = blob[offset : offset + nbytes]
        if len(chunk) < nbytes:
            raise WeightFormatError(f"{path}: truncated payload for tensor {name!r}")
        tensors[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise WeightFormatError(f"{path}: {len(blob) - offset} trailing bytes after last tensor")
    return header["arch"], tensors


def assign_state(named_params, tensors, path="<weights>"):
    """Copy loaded arrays into parameters, validating names and shapes."""
    for name, param in named_params.items():
        if name not in tensors:
            raise WeightFormatError(f"{path}: missing tensor {name!r}")
        value = tensors[name]
        if tuple(value.shape) != tuple(param.data.shape):
            raise WeightFormatError(
                f"{path}: tensor {name!r} has shape {tuple(value.shape)}, expected {tuple(param.data.shape)}"
            )
        param.data = value.astype(param.data.dtype)
    extra = set(tensors) - set(named_params)
    if extra:
        raise WeightFormatError(f"{path}: unexpected tensors {sorted(extra)}")
