"""Geometry quantization and lossless octree coding."""

from __future__ import annotations

import numpy as np

from ..core import MAX_DEPTH, PointCloud
from ..errors import BitstreamError
from ..spatial import morton_decode, morton_encode
from . import _kernels


def quantize_coords(coords, pqs: float) -> np.ndarray:
    """``floor(x * pqs + 0.5)`` per component (round half up)."""
    return np.floor(np.asarray(coords, dtype=np.float64) * pqs + 0.5).astype(np.int64)


def scaled_depth(depth: int, pqs: float) -> int:
    """Grid depth needed to hold quantized coordinates of a depth-``depth`` grid."""
    top = int(quantize_coords(np.array([(1 << depth) - 1]), pqs)[0])
    return max(1, top.bit_length())


def quantize_geometry(cloud: PointCloud, pqs: float) -> PointCloud:
    """Scale coordinates by ``pqs``, round, merge duplicates, drop colours.

    The result lives on the coarser grid and is Morton-sorted.
    """
    if not (0.0 < pqs <= 1.0):
        raise ValueError(f"pqs must be in (0, 1], got {pqs}")
    depth = scaled_depth(cloud.depth, pqs)
    q = quantize_coords(cloud.coords, pqs)
    keys = np.unique(morton_encode(q, depth)) if len(q) else np.zeros(0, np.int64)
    return PointCloud(morton_decode(keys, depth).reshape(-1, 3), None, depth)


def dequantize_geometry(lossy: PointCloud, pqs: float, depth: int) -> PointCloud:
    """Map lossy voxels back to the original ``depth`` grid (``round(x / pqs)``)."""
    top = (1 << depth) - 1
    back = np.floor(lossy.coords / pqs + 0.5).astype(np.int64)
    back = np.clip(back, 0, top)
    keys = np.unique(morton_encode(back, depth)) if len(back) else np.zeros(0, np.int64)
    return PointCloud(morton_decode(keys, depth).reshape(-1, 3), None, depth)


def occupancy_bytes(coords, depth: int) -> np.ndarray:
    """Breadth-first occupancy bytes; bit ``j`` set when child slot ``j`` exists.

    Nodes of each level are visited in Morton order.
    """
    keys = np.unique(morton_encode(np.asarray(coords).reshape(-1, 3), depth))
    out = []
    for level in range(1, depth + 1):
        node = keys >> (3 * (depth - level))
        node = np.unique(node)
        parent = node >> 3
        slot = (node & 7).astype(np.uint8)
        bits = np.left_shift(np.uint8(1), slot).astype(np.uint8)
        starts = np.flatnonzero(np.r_[True, parent[1:] != parent[:-1]])
        out.append(np.bitwise_or.reduceat(bits, starts).astype(np.uint8))
    return np.concatenate(out) if out else np.zeros(0, np.uint8)


def encode_octree(coords, depth: int) -> bytes:
    """Octree payload: one depth byte, then the range-coded occupancy bits.

    The coordinate set must be non-empty and duplicate-free.
    """
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    if not (1 <= depth <= MAX_DEPTH):
        raise ValueError(f"depth must be in [1, {MAX_DEPTH}]")
    if len(coords) == 0:
        return bytes([depth])
    occ = occupancy_bytes(coords, depth)
    return bytes([depth]) + _kernels.encode_occupancy(occ).tobytes()


def decode_octree(payload: bytes, max_points: int = 1 << 26) -> np.ndarray:
    """Decode an octree payload to an ``(N, 3)`` coordinate array in Morton order."""
    if len(payload) < 1:
        raise BitstreamError("empty octree payload", 0)
    depth = payload[0]
    if not (1 <= depth <= MAX_DEPTH):
        raise BitstreamError(f"invalid octree depth {depth}", 0)
    if len(payload) == 1:
        return np.zeros((0, 3), dtype=np.int64)
    data = np.frombuffer(payload, dtype=np.uint8, offset=1)
    keys, status, offset = _kernels.decode_octree_keys(data, depth, max_points)
    if status == 1:
        raise BitstreamError("corrupt octree stream: node without children", offset + 1)
    if status == 2:
        raise BitstreamError("corrupt octree stream: point budget exceeded", offset + 1)
    if status == 3:
        raise BitstreamError("corrupt octree stream: trailing bytes", offset + 1)
    return morton_decode(keys, depth).reshape(-1, 3)
