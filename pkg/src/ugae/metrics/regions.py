"""High-frequency and high-loss region labelling and their overlap."""

from __future__ import annotations

import math

import numpy as np

from ..core import PointCloud, rgb_to_yuv
from ..spatial import SpatialIndex


def top_fraction(scores, keys, fraction: float) -> np.ndarray:
    """Boolean mask of the ``ceil(fraction * N)`` highest scores.

    Equal scores are resolved in favour of the smaller Morton key.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must be in (0, 1]")
    scores = np.asarray(scores, dtype=np.float64)
    n_high = math.ceil(fraction * len(scores))
    mask = np.zeros(len(scores), dtype=bool)
    mask[np.lexsort((np.asarray(keys), -scores))[:n_high]] = True
    return mask


def frequency_scores(cloud: PointCloud, k: int = 8) -> np.ndarray:
    """Mean YUV distance from each point to its ``k`` nearest other points."""
    if not cloud.has_attrs:
        raise ValueError("cloud has no attributes")
    if len(cloud) < 2:
        return np.zeros(len(cloud))
    idx, _ = SpatialIndex(cloud).query(cloud.coords, k + 1)
    yuv = rgb_to_yuv(cloud.attrs)
    diff = yuv[idx[:, 1:]] - yuv[:, None, :]
    return np.sqrt(np.sum(diff ** 2, axis=2)).mean(axis=1)


def classify_frequency(cloud: PointCloud, k: int = 8, fraction: float = 0.5) -> np.ndarray:
    return top_fraction(frequency_scores(cloud, k), cloud.morton_keys(), fraction)


def loss_scores(reference_attrs, degraded_attrs) -> np.ndarray:
    a = np.asarray(reference_attrs)
    b = np.asarray(degraded_attrs)
    if a.shape != b.shape:
        raise ValueError("attribute arrays differ in shape")
    return np.sqrt(np.sum((rgb_to_yuv(a) - rgb_to_yuv(b)) ** 2, axis=-1))


def classify_loss(cloud: PointCloud, degraded_attrs, fraction: float = 0.5) -> np.ndarray:
    """Label the points of ``cloud`` whose attributes ``degraded_attrs`` miss most.

    ``cloud`` carries the reference attributes; both share its geometry.
    """
    if not cloud.has_attrs:
        raise ValueError("cloud has no attributes")
    return top_fraction(loss_scores(cloud.attrs, degraded_attrs), cloud.morton_keys(), fraction)


def overlap_ratio(a, b) -> float:
    """``|a & b| / |a|`` for boolean labels ``a`` (high-frequency) and ``b``."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("label arrays differ in size")
    if not a.any():
        raise ValueError("the first label set is empty")
    return float(np.count_nonzero(a & b) / np.count_nonzero(a))
