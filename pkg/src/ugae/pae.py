"""Pre-attribute enhancement: DA-KNN recolouring.

Each query takes its k nearest original points and keeps only those at the
minimal squared distance; their colours are averaged. Squared distances are
exact integers, so "equidistant" needs no tolerance.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from .core import PointCloud, to_uint8
from .spatial import NeighborSet, SpatialIndex

DEFAULT_K = 8


class RecolorResult(NamedTuple):
    attrs: np.ndarray   # (M, 3) uint8
    k_t: np.ndarray     # (M,) neighbours averaged per point


def _coords(geometry) -> np.ndarray:
    if isinstance(geometry, PointCloud):
        return geometry.coords
    return np.asarray(geometry, dtype=np.int64).reshape(-1, 3)


def da_knn(query, index: SpatialIndex, k: int = DEFAULT_K) -> NeighborSet:
    """The nearest neighbours of one query that share the minimal distance."""
    idx, sq = index.query(np.asarray(query).reshape(1, 3), k)
    keep = sq[0] == sq[0, 0]
    return NeighborSet(idx[0][keep], sq[0][keep])


def da_knn_batch(queries, index: SpatialIndex, k: int = DEFAULT_K):
    """Batched DA-KNN: ``(indices, mask)`` with ``mask`` selecting the subset."""
    idx, sq = index.query(queries, k)
    return idx, sq == sq[:, :1]


def recolor(geometry, original: PointCloud, k: int = DEFAULT_K,
            index: Optional[SpatialIndex] = None) -> RecolorResult:
    """Colour ``geometry`` from ``original`` by averaging equidistant nearest points."""
    if not original.has_attrs:
        raise ValueError("the reference cloud has no attributes")
    coords = _coords(geometry)
    if len(coords) == 0:
        return RecolorResult(np.zeros((0, 3), np.uint8), np.zeros(0, np.int64))
    index = index or SpatialIndex(original)
    idx, mask = da_knn_batch(coords, index, k)
    colours = original.attrs[idx].astype(np.float64)       # (M, k, 3)
    k_t = mask.sum(axis=1)
    mean = np.sum(colours * mask[..., None], axis=1) / k_t[:, None]
    return RecolorResult(to_uint8(mean), k_t)


def recolor_mean(geometry, original: PointCloud, k: int = DEFAULT_K) -> np.ndarray:
    """Plain k-nearest mean, kept only as a comparison baseline for tests."""
    coords = _coords(geometry)
    idx, _ = SpatialIndex(original).query(coords, k)
    return to_uint8(original.attrs[idx].astype(np.float64).mean(axis=1))
