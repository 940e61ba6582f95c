"""Deterministic checkpoint archive, format tag "cusp-ckpt-v1".

Layout: magic line, 8-byte little-endian header length, canonical JSON header
(kind, config, step, sorted tensor index, payload checksum, extra metadata),
then the raw tensor payloads in index order. Identical state always produces
identical bytes, so save -> load -> save round-trips bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

FORMAT_TAG = "cusp-ckpt-v1"
_MAGIC = FORMAT_TAG.encode() + b"\n"

_DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
    "int64": torch.int64,
    "int32": torch.int32,
    "uint8": torch.uint8,
    "bool": torch.bool,
}


def _tensor_bytes(t: torch.Tensor) -> bytes:
    return t.detach().cpu().contiguous().numpy().tobytes()


def save_archive(path, kind: str, config: dict, step: int, tensors: dict, extra: dict | None = None):
    """Write state to path. `tensors` maps flat string names to tensors;
    `extra` must be JSON-serializable."""
    index = []
    payload = bytearray()
    for name in sorted(tensors):
        t = tensors[name]
        dtype = str(t.dtype).removeprefix("torch.")
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for tensor {name}")
        raw = _tensor_bytes(t)
        index.append(
            {"name": name, "dtype": dtype, "shape": list(t.shape), "nbytes": len(raw)}
        )
        payload.extend(raw)
    header = {
        "format": FORMAT_TAG,
        "kind": kind,
        "config": config,
        "step": step,
        "tensors": index,
        "extra": extra or {},
        "payload_sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        f.write(bytes(payload))


def load_archive(path, expect_kind: str | None = None):
    """Read an archive back into (header dict, {name: tensor})."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if not data.startswith(_MAGIC):
        raise CheckpointError(f"{path} is not a {FORMAT_TAG} archive")
    off = len(_MAGIC)
    if len(data) < off + 8:
        raise CheckpointError(f"{path} is truncated")
    hlen = int.from_bytes(data[off : off + 8], "little")
    off += 8
    if len(data) < off + hlen:
        raise CheckpointError(f"{path} is truncated")
    try:
        header = json.loads(data[off : off + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path} has a corrupt header") from e
    if header.get("format") != FORMAT_TAG:
        raise CheckpointError(f"unsupported format tag {header.get('format')!r}")
    if expect_kind is not None and header.get("kind") != expect_kind:
        raise CheckpointError(
            f"expected a {expect_kind!r} checkpoint, got {header.get('kind')!r}"
        )
    off += hlen
    payload = data[off:]
    expect_bytes = sum(t["nbytes"] for t in header["tensors"])
    if len(payload) != expect_bytes:
        raise CheckpointError(
            f"{path} is truncated: payload {len(payload)} bytes, expected {expect_bytes}"
        )
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path} failed its payload checksum")
    tensors = {}
    pos = 0
    for entry in header["tensors"]:
        raw = payload[pos : pos + entry["nbytes"]]
        pos += entry["nbytes"]
        dtype = _DTYPES[entry["dtype"]]
        arr = np.frombuffer(raw, dtype=entry["dtype"]).copy()
        tensors[entry["name"]] = torch.from_numpy(arr).to(dtype).reshape(entry["shape"])
    return header, tensors


def flatten_state_dict(prefix: str, state: dict, out: dict, meta: dict):
    """Flatten a (possibly nested) state dict into tensor entries plus a JSON
    skeleton describing non-tensor leaves."""
    for key, value in state.items():
        name = f"{prefix}/{key}"
        if isinstance(value, torch.Tensor):
            out[name] = value
        elif isinstance(value, dict):
            flatten_state_dict(name, value, out, meta)
        else:
            meta[name] = value


def unflatten_into(prefix: str, tensors: dict, meta: dict) -> dict:
    """Rebuild the nested dict structure recorded by flatten_state_dict."""
    result: dict = {}

    def insert(path: str, value):
        parts = path.split("/")
        node = result
        for p in parts[:-1]:
            node = node.setdefault(_maybe_int(p), {})
        node[_maybe_int(parts[-1])] = value

    plen = len(prefix) + 1
    for name, t in tensors.items():
        if name.startswith(prefix + "/"):
            insert(name[plen:], t)
    for name, v in meta.items():
        if name.startswith(prefix + "/"):
            insert(name[plen:], v)
    return result


def _maybe_int(s: str):
    return int(s) if s.lstrip("-").isdigit() else s
