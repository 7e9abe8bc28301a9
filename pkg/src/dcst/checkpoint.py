"""Binary checkpoints: magic, JSON header, raw little-endian float64 payload.

Layout::

    b"DCSTCKPT"            8 bytes
    header length          uint64, little-endian
    header                 UTF-8 JSON (sorted keys)
    payload                float64 little-endian, tensors back to back

The header carries the format version, model kind, a config echo, the
parameter manifest (name, shape, byte offset, byte length, trainable) and a
SHA-256 of the payload.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .data import RoadGraph, SensorMeta
from .model import DcstConfig, DcstModel
from .teacher import GnnConfig, GnnModel

MAGIC = b"DCSTCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, inconsistent, or mismatched checkpoint."""


def _tensors(model) -> list[tuple[str, np.ndarray, bool]]:
    out = [(name, p.data, True) for name, p in model.params.items()]
    if isinstance(model, GnnModel):
        out.append(("graph.adjacency", model.graph_adjacency, False))
    return out


def _echo(model) -> dict:
    echo = model.config_echo()
    if isinstance(model, DcstModel):
        echo["sensors"] = [[s.id, s.x, s.y] for s in model.sensors]
    return echo


def encode(model, extra: dict | None = None) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, arr, trainable in _tensors(model):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw), "trainable": trainable})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "model_kind": model.kind,
        "config": _echo(model),
        "manifest": manifest,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    if extra:
        header["extra"] = extra
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + payload


def save(model, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(model, extra))
    return path


def read_header(blob: bytes) -> tuple[dict, bytes]:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen > len(blob):
        raise CheckpointError("truncated header")
    try:
        header = json.loads(blob[16 : 16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"format version {header.get('format_version')} != supported {FORMAT_VERSION}")
    payload = blob[16 + hlen :]
    expected = sum(int(np.prod(m["shape"], dtype=np.int64)) * 8 for m in header["manifest"])
    if expected != header["payload_bytes"] or len(payload) != expected:
        raise CheckpointError(
            f"payload length {len(payload)} disagrees with manifest ({expected}) / header ({header['payload_bytes']})"
        )
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError("payload checksum mismatch")
    return header, payload


def _arrays(header: dict, payload: bytes) -> dict[str, np.ndarray]:
    out = {}
    for m in header["manifest"]:
        raw = payload[m["offset"] : m["offset"] + m["nbytes"]]
        out[m["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(m["shape"])
    return out


def load(path, kind: str | None = None):
    """Rebuild the model stored at ``path``; ``kind`` ("dcst"/"gnn") is enforced if given."""
    header, payload = read_header(Path(path).read_bytes())
    if kind is not None and header["model_kind"] != kind:
        raise CheckpointError(f"model kind {header['model_kind']!r} where {kind!r} was expected")
    arrays = _arrays(header, payload)
    echo = header["config"]
    if header["model_kind"] == "dcst":
        sensors = [SensorMeta(i, float(x), float(y)) for i, x, y in echo["sensors"]]
        model = DcstModel(DcstConfig(**echo["config"]), sensors)
    elif header["model_kind"] == "gnn":
        model = GnnModel(GnnConfig(**echo["config"]), RoadGraph(arrays.pop("graph.adjacency")))
    else:
        raise CheckpointError(f"unknown model kind {header['model_kind']!r}")
    params = model.params
    if set(params) != set(n for n in arrays):
        raise CheckpointError("parameter names in checkpoint do not match the model")
    for name, arr in arrays.items():
        if params[name].shape != arr.shape:
            raise CheckpointError(f"{name}: stored shape {arr.shape} != model shape {params[name].shape}")
        params[name].data[...] = arr
    return model


def load_extra(path) -> dict:
    header, _ = read_header(Path(path).read_bytes())
    return header.get("extra", {})
