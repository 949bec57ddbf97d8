"""Versioned binary checkpoints.

Layout: 8-byte magic "STSEQCK1", 8-byte little-endian header length, JSON
header (run config plus a named-parameter manifest with shapes and byte
offsets into the payload), then the raw little-endian float32 payloads in
manifest order. Float32 round-trips are bit-exact; float64 parameters are
cast down on save.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Array
from .errors import ContractError

MAGIC = b"STSEQCK1"


def save(path, params: dict[str, Array], config: dict) -> None:
    manifest = []
    payload = bytearray()
    for name in sorted(params):
        arr = params[name].data.astype("<f4", copy=False)
        manifest.append({"name": name, "shape": list(arr.shape),
                         "offset": len(payload), "nbytes": arr.nbytes})
        payload += arr.tobytes()
    header = json.dumps({"version": 1, "config": config, "params": manifest},
                        sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(bytes(payload))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ContractError(f"{path}: bad checkpoint magic {raw[:8]!r}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode())
    if header.get("version") != 1:
        raise ContractError(f"{path}: unsupported checkpoint version {header.get('version')}")
    base = 16 + hlen
    params: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        start = base + entry["offset"]
        flat = np.frombuffer(raw, dtype="<f4", count=entry["nbytes"] // 4, offset=start)
        params[entry["name"]] = flat.reshape(entry["shape"]).copy()
    return params, header["config"]
