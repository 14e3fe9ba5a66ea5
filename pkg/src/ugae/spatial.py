"""Deterministic spatial indexing over integer voxel grids.

Nearest-neighbour results follow one total order: ascending integer squared
distance, then Morton key of the neighbour, then its index. A cKDTree does
the candidate search; ordering and tie resolution are done here on exact
integers, so results never depend on how the tree breaks ties.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .core import MAX_DEPTH, PointCloud


def morton_encode(coords, depth: int) -> np.ndarray:
    """Interleave coordinate bits (x most significant within each triple).

    ``coords`` may be a single triple or an ``(N, 3)`` array; the result is
    an int64 scalar or array of ``3 * depth``-bit keys.
    """
    c = np.asarray(coords, dtype=np.int64)
    single = c.ndim == 1
    c = c.reshape(-1, 3)
    if not (1 <= depth <= MAX_DEPTH):
        raise ValueError(f"depth must be in [1, {MAX_DEPTH}]")
    if len(c) and (c.min() < 0 or c.max() >= (1 << depth)):
        raise ValueError(f"coordinate outside the depth-{depth} grid")
    keys = np.zeros(len(c), dtype=np.int64)
    for b in range(depth):
        keys |= ((c[:, 0] >> b) & 1) << (3 * b + 2)
        keys |= ((c[:, 1] >> b) & 1) << (3 * b + 1)
        keys |= ((c[:, 2] >> b) & 1) << (3 * b)
    return keys[0] if single else keys


def morton_decode(keys, depth: int) -> np.ndarray:
    k = np.asarray(keys, dtype=np.int64)
    single = k.ndim == 0
    k = k.reshape(-1)
    if len(k) and (k.min() < 0 or k.max() >= (1 << (3 * depth))):
        raise ValueError(f"Morton key outside the depth-{depth} range")
    out = np.zeros((len(k), 3), dtype=np.int64)
    for b in range(depth):
        out[:, 0] |= ((k >> (3 * b + 2)) & 1) << b
        out[:, 1] |= ((k >> (3 * b + 1)) & 1) << b
        out[:, 2] |= ((k >> (3 * b)) & 1) << b
    return out[0] if single else out


# squared distances on a depth-16 grid need < 34 bits, leaving 26 for rank
_RANK_BITS = 26
_RANK_MASK = (1 << _RANK_BITS) - 1


class NeighborSet(NamedTuple):
    indices: np.ndarray
    sq_dists: np.ndarray


class SpatialIndex:
    """Exact KNN over the points of a cloud (or a raw integer array)."""

    def __init__(self, cloud, depth: int | None = None):
        if isinstance(cloud, PointCloud):
            coords, depth = cloud.coords, cloud.depth
        else:
            coords = np.asarray(cloud, dtype=np.int64).reshape(-1, 3)
            if depth is None:
                depth = max(1, int(coords.max(initial=0)).bit_length())
        if len(coords) == 0:
            raise ValueError("cannot index an empty cloud")
        self.coords = np.ascontiguousarray(coords, dtype=np.int64)
        self.depth = depth
        self.keys = morton_encode(self.coords, depth)
        if len(coords) > (1 << _RANK_BITS):
            raise ValueError("too many points for the index")
        # rank in (Morton key, index) order; packed under the squared distance
        self._by_rank = np.lexsort((np.arange(len(coords)), self.keys))
        self._rank = np.empty(len(coords), dtype=np.int64)
        self._rank[self._by_rank] = np.arange(len(coords))
        self._tree = cKDTree(self.coords.astype(np.float64))

    def __len__(self):
        return len(self.coords)

    def query(self, queries, k: int):
        """Batched exact KNN.

        Returns ``(indices, sq_dists)``, both ``(M, min(k, N))`` int64 arrays,
        each row sorted by (squared distance, Morton key, index).
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
        n = len(self.coords)
        k = min(k, n)
        out_idx = np.empty((len(q), k), dtype=np.int64)
        out_sq = np.empty((len(q), k), dtype=np.int64)
        pending = np.arange(len(q))
        fetch = min(n, 2 * k + 8)
        while len(pending):
            idx, sq = self._fetch_sorted(q[pending], fetch)
            if fetch == n:
                done = np.ones(len(pending), dtype=bool)
            else:
                # The tie group at position k is complete only if something
                # strictly farther was also fetched.
                done = sq[:, k - 1] < sq[:, fetch - 1]
            rows = pending[done]
            out_idx[rows] = idx[done, :k]
            out_sq[rows] = sq[done, :k]
            pending = pending[~done]
            fetch = min(n, fetch * 2)
        return out_idx, out_sq

    def _fetch_sorted(self, q, fetch):
        _, idx = self._tree.query(q.astype(np.float64), k=fetch)
        idx = np.asarray(idx, dtype=np.int64).reshape(len(q), fetch)
        diff = self.coords[idx] - q[:, None, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        packed = np.sort((sq << _RANK_BITS) | self._rank[idx], axis=1)
        return (self._by_rank[packed & _RANK_MASK], packed >> _RANK_BITS)

    def nearest(self, queries):
        """Index and squared distance of the single nearest point per query."""
        idx, sq = self.query(queries, 1)
        return idx[:, 0], sq[:, 0]


def build_index(cloud: PointCloud) -> SpatialIndex:
    if len(cloud) == 0:
        raise ValueError("cannot index an empty cloud")
    return SpatialIndex(cloud)


def knn(index: SpatialIndex, query, k: int) -> NeighborSet:
    idx, sq = index.query(np.asarray(query).reshape(1, 3), k)
    return NeighborSet(idx[0], sq[0])


def partition_kdtree(cloud: PointCloud, max_points: int) -> List[PointCloud]:
    """Recursively split at the median of the widest axis.

    Splitting stops once a part holds at most ``max_points`` points. Within
    an axis, points are ordered by coordinate then Morton key, so the split
    is deterministic. Parts come out in depth-first (low half first) order.
    """
    if max_points < 1:
        raise ValueError("max_points must be >= 1")
    keys = cloud.morton_keys()
    parts = []
    stack = [np.arange(len(cloud))]
    while stack:
        idx = stack.pop()
        if len(idx) <= max_points:
            parts.append(idx)
            continue
        pts = cloud.coords[idx]
        axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
        order = np.lexsort((keys[idx], pts[:, axis]))
        half = len(idx) // 2
        # push high half first so the low half is emitted first
        stack.append(idx[order[half:]])
        stack.append(idx[order[:half]])
    return [cloud.take(np.sort(p)) for p in parts]


@dataclass
class Normals:
    normals: np.ndarray  # (N, 3) unit vectors
    degenerate: np.ndarray  # (N,) bool, True where the fallback was used


def estimate_normals(cloud: PointCloud, k: int = 16) -> Normals:
    """PCA normals from the k-neighbourhood (the point itself included).

    The normal is the eigenvector of the smallest covariance eigenvalue. Its
    sign is arbitrary. Neighbourhoods without a defined normal (zero
    covariance, or collinear points with a repeated smallest eigenvalue) fall
    back to (0, 0, 1) and are flagged.
    """
    if k < 3 or len(cloud) < k:
        raise ValueError("need k >= 3 and at least k points")
    index = SpatialIndex(cloud)
    idx, _ = index.query(cloud.coords, k)
    nb = cloud.coords[idx].astype(np.float64)
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    vals, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    trace = np.trace(cov, axis1=1, axis2=2)
    degenerate = (trace == 0.0) | (vals[:, 1] <= 1e-12 * trace)
    normals[degenerate] = (0.0, 0.0, 1.0)
    return Normals(normals, degenerate)
