"""Binary checkpoints: model structure and weights, Adam state, epoch, config, history.

Layout: 8-byte magic, little-endian u64 header length, a UTF-8 JSON header
(sorted keys, no whitespace), then the raw little-endian arrays back to back
in the order listed in the header. Writing the same content twice gives the
same bytes.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np

from . import FormatError
from .tensor_engine import ModelGraph
from .train import AdamState, MetricsRecord

MAGIC = b"KPACKPT\x00"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: ModelGraph
    state: AdamState
    epoch: int
    config: dict
    history: List[MetricsRecord] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _arrays(model: ModelGraph, state: AdamState) -> Dict[str, np.ndarray]:
    out = {f"model/{k}": v for k, v in model.state_dict().items()}
    out.update({f"adam/m/{k}": v for k, v in state.m.items()})
    out.update({f"adam/v/{k}": v for k, v in state.v.items()})
    return out


def encode(ckpt: Checkpoint) -> bytes:
    arrays = _arrays(ckpt.model, ckpt.state)
    table, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset,
                      "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    payload = b"".join(blobs)
    header = {
        "format_version": FORMAT_VERSION,
        "graph": ckpt.model.structure(),
        "epoch": ckpt.epoch,
        "adam_step": ckpt.state.step,
        "config": ckpt.config,
        "history": [asdict(r) for r in ckpt.history],
        "extra": ckpt.extra,
        "arrays": table,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(hb)) + hb + payload


def decode(raw: bytes, source: str = "<checkpoint>") -> Checkpoint:
    if raw[:8] != MAGIC:
        raise FormatError(f"{source}: offset 0: not a checkpoint (bad magic)")
    if len(raw) < 16:
        raise FormatError(f"{source}: offset {len(raw)}: truncated header length")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise FormatError(f"{source}: offset {len(raw)}: header truncated, need {16 + hlen} bytes")
    try:
        header = json.loads(raw[16:16 + hlen])
    except ValueError as e:
        raise FormatError(f"{source}: corrupt header: {e}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {header.get('format_version')}")
    payload = raw[16 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise FormatError(f"{source}: array payload checksum mismatch (truncated or corrupt)")
    arrays = {}
    for e in header["arrays"]:
        a = np.frombuffer(payload, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)),
                          offset=e["offset"])
        arrays[e["name"]] = a.reshape(e["shape"]).copy()
    model = ModelGraph.from_structure(header["graph"])
    model.load_state_dict({k[len("model/"):]: v for k, v in arrays.items() if k.startswith("model/")})
    state = AdamState(header["adam_step"],
                      {k[len("adam/m/"):]: v for k, v in arrays.items() if k.startswith("adam/m/")},
                      {k[len("adam/v/"):]: v for k, v in arrays.items() if k.startswith("adam/v/")})
    history = [MetricsRecord(**r) for r in header["history"]]
    return Checkpoint(model, state, header["epoch"], header["config"], history, header.get("extra", {}))


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(ckpt))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode(path.read_bytes(), str(path))
