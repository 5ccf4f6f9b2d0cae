"""FeatureMap container and its binary dump format.

Dump layout (little endian)::

    b"FDFM" | u32 version | u32 channels | u64 frames | f64 frame_rate | u8 kind
    channels * frames float32, row-major
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import FlowEnhanceError

MAGIC = b"FDFM"
VERSION = 1
KINDS = ("time", "mel", "apg")
_HEADER = struct.Struct("<4sIIQdB")


@dataclass(frozen=True, eq=False)
class FeatureMap:
    data: np.ndarray  # channels x frames
    frame_rate: float
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        d = np.array(self.data, dtype=np.float64, copy=True)
        if d.ndim != 2:
            raise ValueError("feature data must be 2-D (channels x frames)")
        if not np.all(np.isfinite(d)):
            raise ValueError("feature map contains non-finite entries")
        if self.kind != "time" and d.size and d.min() < 0.0:
            raise ValueError(f"{self.kind} feature map holds magnitudes and must be >= 0")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]


def write_feature_dump(path, fm: FeatureMap) -> None:
    header = _HEADER.pack(MAGIC, VERSION, fm.channels, fm.frames, float(fm.frame_rate),
                          KINDS.index(fm.kind))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(fm.data, dtype="<f4").tobytes())


def read_feature_dump(path) -> FeatureMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FlowEnhanceError(f"{path}: truncated feature dump")
    magic, version, c, t, rate, kind = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FlowEnhanceError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FlowEnhanceError(f"{path}: unsupported version {version}")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if body.size != c * t:
        raise FlowEnhanceError(f"{path}: expected {c * t} values, found {body.size}")
    return FeatureMap(body.reshape(c, t), rate, KINDS[kind])
