"""Predictive attribute coding in YUV.

Points are visited in Morton order. Each point is predicted from its nearest
already-coded point (squared distance, then Morton key); the first point is
predicted from mid-grey. Residuals go through a uniform quantizer with step
``2 ** ((qp - 4) / 6)`` inside a closed loop, so encoder and decoder share the
same reconstruction.
"""

from __future__ import annotations

import numpy as np

from ..core import rgb_to_yuv, yuv_to_rgb
from ..errors import BitstreamError
from ..spatial import SpatialIndex, morton_encode
from . import _kernels

QP_MIN, QP_MAX = 0, 63


def qp_step(qp: int) -> float:
    return 2.0 ** ((qp - 4) / 6.0)


def prediction_refs(coords, depth: int, k: int = 16) -> np.ndarray:
    """Index of the nearest earlier point for Morton-sorted ``coords`` (-1 for the first)."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    n = len(coords)
    refs = np.full(n, -1, dtype=np.int64)
    if n <= 1:
        return refs
    index = SpatialIndex(coords, depth)
    idx, _ = index.query(coords, min(k, n))
    earlier = idx < np.arange(n)[:, None]
    found = earlier.any(axis=1)
    first = np.argmax(earlier, axis=1)
    refs[found] = idx[found, first[found]]
    keys = index.keys
    for i in np.flatnonzero(~found):
        if i == 0:
            continue
        d = coords[:i] - coords[i]
        sq = np.einsum("ij,ij->i", d, d)
        best = np.flatnonzero(sq == sq.min())
        refs[i] = best[np.argmin(keys[best])]
    return refs


def _check_sorted(coords, depth):
    keys = morton_encode(coords, depth)
    if len(keys) > 1 and np.any(keys[1:] <= keys[:-1]):
        raise ValueError("coordinates must be Morton-sorted and duplicate-free")


def encode_attributes(coords, attrs, qp: int, depth: int):
    """Code RGB ``attrs`` aligned with Morton-sorted ``coords``.

    Returns ``(payload, reconstructed_yuv)``. The payload starts with the QP.
    """
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    attrs = np.asarray(attrs).reshape(-1, 3)
    if len(coords) != len(attrs):
        raise ValueError(f"{len(coords)} coordinates but {len(attrs)} attributes")
    if not (QP_MIN <= qp <= QP_MAX):
        raise ValueError(f"qp must be in [{QP_MIN}, {QP_MAX}]")
    _check_sorted(coords, depth)
    refs = prediction_refs(coords, depth)
    payload, recon, _ = _kernels.encode_dpcm(rgb_to_yuv(attrs), refs, qp_step(qp))
    return bytes([qp]) + payload.tobytes(), recon


def decode_attributes_yuv(payload: bytes, coords, depth: int) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    if len(payload) < 1:
        raise BitstreamError("empty attribute payload", 0)
    qp = payload[0]
    if qp > QP_MAX:
        raise BitstreamError(f"invalid qp {qp}", 0)
    _check_sorted(coords, depth)
    refs = prediction_refs(coords, depth)
    data = np.frombuffer(payload, dtype=np.uint8, offset=1)
    recon, status, offset = _kernels.decode_dpcm(data, refs, qp_step(qp))
    if status == 1:
        raise BitstreamError("corrupt attribute stream: runaway residual code", offset + 1)
    if status == 3:
        raise BitstreamError("corrupt attribute stream: trailing bytes", offset + 1)
    return recon


def decode_attributes(payload: bytes, coords, depth: int) -> np.ndarray:
    """Decode to uint8 RGB aligned with ``coords``."""
    return yuv_to_rgb(decode_attributes_yuv(payload, coords, depth))
