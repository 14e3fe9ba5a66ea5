"""Rate ladder, the "UGAE" container, and bpip accounting."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict

from ..errors import BitstreamError

MAGIC = b"UGAE"
VERSION = 1
_HEADER = struct.Struct("<4sBBBIII")  # magic, version, depth, level, N, lossy, K
HEADER_SIZE = _HEADER.size + 8  # plus the two u32 payload lengths


@dataclass(frozen=True)
class RateLevel:
    name: str
    index: int
    pqs: float
    qp: int


RATE_LEVELS: Dict[str, RateLevel] = {
    lvl.name: lvl
    for lvl in (
        RateLevel("R01", 1, 0.125, 51),
        RateLevel("R02", 2, 0.25, 46),
        RateLevel("R03", 3, 0.5, 40),
        RateLevel("R04", 4, 0.75, 34),
        RateLevel("R05", 5, 0.875, 28),
    )
}


def rate_level(name_or_index) -> RateLevel:
    if isinstance(name_or_index, RateLevel):
        return name_or_index
    for lvl in RATE_LEVELS.values():
        if name_or_index in (lvl.name, lvl.index):
            return lvl
    raise ValueError(f"unknown rate level {name_or_index!r}")


@dataclass(frozen=True)
class Bitstream:
    """Container fields. ``k`` = 0 marks a baseline (non-enhanced) stream."""

    depth: int
    level: int
    n_points: int
    n_lossy: int
    k: int
    geometry: bytes
    attributes: bytes

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(MAGIC, VERSION, self.depth, self.level,
                            self.n_points, self.n_lossy, self.k)
        return (head + struct.pack("<I", len(self.geometry)) + self.geometry
                + struct.pack("<I", len(self.attributes)) + self.attributes)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < _HEADER.size + 4:
            raise BitstreamError("truncated header", len(data))
        magic, version, depth, level, n, lossy, k = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise BitstreamError("bad magic", 0)
        if version != VERSION:
            raise BitstreamError(f"unsupported version {version}", 4)
        pos = _HEADER.size
        (glen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + glen + 4 > len(data):
            raise BitstreamError("geometry payload overruns the stream", pos)
        geom = bytes(data[pos:pos + glen])
        pos += glen
        (alen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + alen != len(data):
            raise BitstreamError("attribute payload length mismatch", pos)
        attr = bytes(data[pos:pos + alen])
        return cls(depth, level, n, lossy, k, geom, attr)

    @property
    def header_bytes(self) -> int:
        return HEADER_SIZE

    def __len__(self):
        return HEADER_SIZE + len(self.geometry) + len(self.attributes)


def bpip(section, n_input_points: int) -> float:
    """Bits per input point of a byte string (or a byte count)."""
    if n_input_points < 1:
        raise ValueError("n_input_points must be >= 1")
    size = section if isinstance(section, int) else len(section)
    return 8.0 * size / n_input_points
