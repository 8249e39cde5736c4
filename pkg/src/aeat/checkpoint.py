"""Binary checkpoint format.

Layout::

    b"AEAT1"
    uint32 (little-endian)  header length in bytes
    header                  UTF-8 JSON: version, kind, model config, manifest
                            [{name, rows, cols, offset}], metadata
    payload                 float32 little-endian, row-major, manifest order
    8 bytes                 blake2b-64 digest of the payload

Offsets are byte offsets into the payload. Parameters are trained in float64
and stored as float32.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics.optim import ParamStore

MAGIC = b"AEAT1"
VERSION = 1
CHECKSUM_BYTES = 8


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ParamStore
    kind: str
    model: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _digest(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=CHECKSUM_BYTES).digest()


def checkpoint_bytes(params: ParamStore, kind: str, model: dict | None = None, meta: dict | None = None) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, t in params.items():
        a = np.asarray(t.data)
        if a.ndim != 2:
            raise CheckpointError(f"parameter {name!r} is not 2-D")
        raw = a.astype("<f4").tobytes(order="C")
        manifest.append({"name": name, "rows": a.shape[0], "cols": a.shape[1], "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {"version": VERSION, "kind": kind, "model": model or {}, "manifest": manifest, "meta": meta or {}}
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(chunks)
    return MAGIC + struct.pack("<I", len(hb)) + hb + payload + _digest(payload)


def save_checkpoint(path, params: ParamStore, kind: str, model: dict | None = None, meta: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, kind, model, meta))


def parse_checkpoint(data: bytes) -> Checkpoint:
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic: not an AEAT checkpoint")
    pos = len(MAGIC)
    if len(data) < pos + 4:
        raise CheckpointError("truncated header")
    (hlen,) = struct.unpack("<I", data[pos : pos + 4])
    pos += 4
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None
    pos += hlen
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r}")
    manifest = header["manifest"]
    size = sum(4 * m["rows"] * m["cols"] for m in manifest)
    payload = data[pos : pos + size]
    stored = data[pos + size : pos + size + CHECKSUM_BYTES]
    if len(payload) != size or len(stored) != CHECKSUM_BYTES or _digest(payload) != stored:
        raise CheckpointError("checksum mismatch (file corrupted or truncated)")
    if len(data) != pos + size + CHECKSUM_BYTES:
        raise CheckpointError("trailing bytes after checksum")
    params = ParamStore()
    for m in manifest:
        n = m["rows"] * m["cols"]
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=m["offset"]).reshape(m["rows"], m["cols"])
        params.add(m["name"], arr.astype(np.float64))
    return Checkpoint(params, header["kind"], header.get("model", {}), header.get("meta", {}))


def load_checkpoint(path, kind: str | None = None) -> Checkpoint:
    ck = parse_checkpoint(Path(path).read_bytes())
    if kind is not None and ck.kind != kind:
        raise CheckpointError(f"expected a {kind!r} checkpoint, found {ck.kind!r}")
    return ck
