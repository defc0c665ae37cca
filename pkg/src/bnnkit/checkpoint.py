"""Self-describing checkpoint container.

A checkpoint stores the parameter layout (entry names, lengths, bias flags)
next to one or more named float64 arrays, so a file can be validated against
the current backbone before any of its numbers are trusted.  Floats are
little-endian 64-bit; reload is bit-exact.

Format::

    magic   8 bytes  b"BNNCKPT1"
    hlen    u32 LE   header length in bytes
    header  JSON     {"kind", "layout": [[name, length, is_bias], ...],
                      "arrays": [[name, length], ...], "meta": {...}}
    payload          concatenated '<f8' arrays in header order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagicError, TruncatedFileError
from .params import FlatParams, LayoutEntry, ParamLayout

MAGIC = b"BNNCKPT1"

# Which stored array is the natural point estimate for each state kind,
# used when a checkpoint serves as a prior mean / warm start.
_CENTER_KEY = {
    "flat_params": "values",
    "vi": "m",
    "mc_dropout": "m",
    "sgld": "mean",
    "laplace": "theta_star",
}


@dataclass(frozen=True)
class Checkpoint:
    kind: str
    layout: ParamLayout
    arrays: dict[str, np.ndarray]
    meta: dict


def save(path, kind: str, layout: ParamLayout, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    header = {
        "kind": kind,
        "layout": [[e.name, e.length, e.is_bias] for e in layout.entries],
        "arrays": [[name, int(np.asarray(a).size)] for name, a in arrays.items()],
        "meta": meta or {},
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not a bnnkit checkpoint")
    (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    body = len(MAGIC) + 4
    if len(raw) < body + hlen:
        raise TruncatedFileError(f"{path}: truncated checkpoint header")
    header = json.loads(raw[body : body + hlen].decode("utf-8"))

    entries, offset = [], 0
    for name, length, is_bias in header["layout"]:
        entries.append(LayoutEntry(name, offset, int(length), bool(is_bias)))
        offset += int(length)
    layout = ParamLayout(tuple(entries))

    arrays: dict[str, np.ndarray] = {}
    pos = body + hlen
    for name, length in header["arrays"]:
        nbytes = int(length) * 8
        if len(raw) < pos + nbytes:
            raise TruncatedFileError(f"{path}: truncated array {name!r}")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=int(length), offset=pos).astype(np.float64)
        pos += nbytes
    return Checkpoint(header["kind"], layout, arrays, header.get("meta", {}))


def center_vector(ckpt: Checkpoint) -> np.ndarray:
    """The stored point estimate (posterior mean / MAP / raw parameters)."""
    key = _CENTER_KEY.get(ckpt.kind)
    if key is None or key not in ckpt.arrays:
        raise BadMagicError(f"checkpoint kind {ckpt.kind!r} has no center vector")
    return ckpt.arrays[key]


def save_flat_params(path, theta: FlatParams, meta: dict | None = None) -> None:
    save(path, "flat_params", theta.layout, {"values": theta.values}, meta)


def load_flat_params(path) -> FlatParams:
    ckpt = load(path)
    return FlatParams(ckpt.arrays["values"], ckpt.layout)
