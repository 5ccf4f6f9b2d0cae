"""Binary checkpoint format.

Layout (little endian)::

    b"FDCK" | u32 version | u32 header_len | header (UTF-8 JSON)
    repeated per parameter, in header order:
        u32 name_len | name (UTF-8) | u64 count | count * float32

The JSON header holds the model config and the ordered ``[name, shape]`` list,
plus any caller-supplied metadata.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointError
from .model import FlowConfig, FlowModel

MAGIC = b"FDCK"
VERSION = 1


def save_checkpoint(path, model: FlowModel, meta: dict | None = None) -> None:
    state = model.state_dict()
    header = {
        "config": model.cfg.to_dict(),
        "params": [[name, list(t.shape)] for name, t in state.items()],
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(hbytes)), hbytes]
    for name, t in state.items():
        nb = name.encode("utf-8")
        data = t.detach().cpu().numpy().astype("<f4", copy=False).ravel()
        chunks += [struct.pack("<I", len(nb)), nb, struct.pack("<Q", data.size), data.tobytes()]
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        params = {}
        for name, shape in header["params"]:
            (nlen,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            rec_name = raw[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (count,) = struct.unpack_from("<Q", raw, pos)
            pos += 8
            if rec_name != name or count != int(np.prod(shape)):
                raise CheckpointError(f"{path}: record {rec_name!r} does not match header")
            arr = np.frombuffer(raw, dtype="<f4", count=count, offset=pos)
            if arr.size != count:
                raise CheckpointError(f"{path}: truncated record {name!r}")
            params[name] = arr.reshape(shape)
            pos += 4 * count
    except (struct.error, ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return header, params


def load_checkpoint(path, dtype=torch.float32) -> tuple[FlowModel, dict]:
    header, params = read_checkpoint(path)
    try:
        cfg = FlowConfig(**header["config"])
    except TypeError as exc:
        raise CheckpointError(f"{path}: config mismatch ({exc})") from exc
    model = FlowModel.build(cfg)
    state = {k: torch.from_numpy(v.copy()) for k, v in params.items()}
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameters do not fit the config ({exc})") from exc
    return model.to(dtype), header.get("meta", {})
