"""Objective geometry and colour quality: D1, D2 and per-channel PSNR.

Every symmetric metric takes the worse (larger) of the two directional mean
squared errors. Correspondences come from the exact nearest-neighbour index,
so results are independent of point order. A zero error yields ``LOSSLESS``.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

from ..core import PointCloud, rgb_to_yuv
from ..spatial import Normals, SpatialIndex

LOSSLESS = math.inf


def _psnr(peak_sq: float, mse: float) -> float:
    return LOSSLESS if mse == 0 else 10.0 * math.log10(peak_sq / mse)


def _check_pair(reference: PointCloud, degraded: PointCloud):
    if len(reference) == 0 or len(degraded) == 0:
        raise ValueError("quality metrics need two non-empty clouds")


def _peak(reference: PointCloud, peak: Optional[int]) -> int:
    return reference.peak if peak is None else peak


def nearest(src: PointCloud, dst: PointCloud, index: Optional[SpatialIndex] = None):
    """For each point of ``src``: index of and squared distance to its nearest in ``dst``."""
    index = index or SpatialIndex(dst.coords, max(src.depth, dst.depth))
    return index.nearest(src.coords)


def d1_mse(reference: PointCloud, degraded: PointCloud) -> float:
    _check_pair(reference, degraded)
    _, sq_ab = nearest(reference, degraded)
    _, sq_ba = nearest(degraded, reference)
    # integer sums are exact, so the order of accumulation cannot matter
    return max(int(sq_ab.sum()) / len(sq_ab), int(sq_ba.sum()) / len(sq_ba))


def d1_psnr(reference: PointCloud, degraded: PointCloud, peak: Optional[int] = None) -> float:
    """Point-to-point PSNR with the ``3 * peak**2`` signal convention."""
    return _psnr(3.0 * _peak(reference, peak) ** 2, d1_mse(reference, degraded))


def d2_mse(reference: PointCloud, degraded: PointCloud, normals) -> float:
    _check_pair(reference, degraded)
    if normals is None:
        raise ValueError("point-to-plane distortion needs reference normals")
    n = normals.normals if isinstance(normals, Normals) else np.asarray(normals, float)
    if n.shape != (len(reference), 3):
        raise ValueError("normals must align with the reference cloud")
    ref = reference.coords.astype(np.float64)
    deg = degraded.coords.astype(np.float64)
    j, _ = nearest(reference, degraded)
    err_ab = np.einsum("ij,ij->i", deg[j] - ref, n) ** 2
    i, _ = nearest(degraded, reference)
    err_ba = np.einsum("ij,ij->i", deg - ref[i], n[i]) ** 2
    return max(math.fsum(err_ab) / len(err_ab), math.fsum(err_ba) / len(err_ba))


def d2_psnr(reference: PointCloud, degraded: PointCloud, normals,
            peak: Optional[int] = None) -> float:
    """Point-to-plane PSNR; errors are projected on the reference normals."""
    return _psnr(3.0 * _peak(reference, peak) ** 2, d2_mse(reference, degraded, normals))


class ColorPsnr(NamedTuple):
    y: float
    u: float
    v: float

    @property
    def yuv(self) -> float:
        return (14.0 * self.y + self.u + self.v) / 16.0


def color_mse(reference: PointCloud, degraded: PointCloud) -> np.ndarray:
    """Per-channel YUV MSE under nearest-neighbour correspondence, worse direction."""
    _check_pair(reference, degraded)
    if not (reference.has_attrs and degraded.has_attrs):
        raise ValueError("colour metrics need attributes on both clouds")
    ref_yuv = rgb_to_yuv(reference.attrs)
    deg_yuv = rgb_to_yuv(degraded.attrs)
    j, _ = nearest(reference, degraded)
    i, _ = nearest(degraded, reference)
    ab = np.array([math.fsum(c) for c in ((ref_yuv - deg_yuv[j]) ** 2).T]) / len(reference)
    ba = np.array([math.fsum(c) for c in ((deg_yuv - ref_yuv[i]) ** 2).T]) / len(degraded)
    return np.maximum(ab, ba)


def color_psnr(reference: PointCloud, degraded: PointCloud) -> ColorPsnr:
    mse = color_mse(reference, degraded)
    return ColorPsnr(*(_psnr(255.0 ** 2, float(m)) for m in mse))


def y_psnr(reference: PointCloud, degraded: PointCloud) -> float:
    return color_psnr(reference, degraded).y


def yuv_psnr(reference: PointCloud, degraded: PointCloud) -> float:
    return color_psnr(reference, degraded).yuv
