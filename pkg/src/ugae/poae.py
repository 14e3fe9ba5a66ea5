"""Post-attribute enhancement: predict RGB residuals from decoded context.

Feature layout per point (length ``3 + 6 m``):
  * the point's decoded YUV divided by 255;
  * for each of its ``m`` nearest other points in spatial-index order:
    their YUV divided by 255, then the integer coordinate offset divided by
    the window radius (distance to the farthest of the ``m`` neighbours).
Slots beyond the cloud size are all zeros. A real neighbour never has a
zero offset, so the zero offset doubles as the absence flag.

The model output is the RGB residual in units of 1/255.
"""

from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np

from .core import PointCloud, rgb_to_yuv, to_uint8
from .errors import ModelMismatchError
from .learner import (Mlp, TrainConfig, WmseConfig, point_errors, train,
                      wmse_loss, wmse_weights)
from .spatial import SpatialIndex

DEFAULT_M = 8
HIDDEN = (64, 64)


def feature_length(m: int = DEFAULT_M) -> int:
    return 3 + 6 * m


def neighbours_for(n_features: int) -> int:
    m, rem = divmod(n_features - 3, 6)
    if m < 1 or rem:
        raise ModelMismatchError(f"{n_features} inputs do not fit the PoAE feature layout")
    return m


def extract_attr_features(cloud: PointCloud, m: int = DEFAULT_M,
                          index: Optional[SpatialIndex] = None) -> np.ndarray:
    """``(N, 3 + 6 m)`` features for every point of a coloured cloud."""
    if not cloud.has_attrs:
        raise ValueError("cloud has no attributes")
    if m < 1:
        raise ValueError("m must be >= 1")
    n = len(cloud)
    out = np.zeros((n, feature_length(m)))
    if n == 0:
        return out
    yuv = rgb_to_yuv(cloud.attrs) / 255.0
    out[:, :3] = yuv
    if n == 1:
        return out
    index = index or SpatialIndex(cloud)
    idx, sq = index.query(cloud.coords, m + 1)
    # each point is its own unique zero-distance neighbour
    idx, sq = idx[:, 1:], sq[:, 1:]
    have = idx.shape[1]
    radius = np.sqrt(sq[:, -1].astype(np.float64))
    offsets = (cloud.coords[idx] - cloud.coords[:, None, :]) / radius[:, None, None]
    slots = np.concatenate([yuv[idx], offsets], axis=2)      # (N, have, 6)
    out[:, 3:3 + 6 * have] = slots.reshape(n, -1)
    return out


def predict_residual(model: Mlp, features) -> np.ndarray:
    """RGB residuals (floats, unclamped) for feature rows."""
    return model(features) * 255.0


def enhance_attributes(model: Mlp, cloud: PointCloud,
                       features: Optional[np.ndarray] = None) -> np.ndarray:
    """Decoded colours plus predicted residuals, clamped and rounded to uint8."""
    if features is None:
        features = extract_attr_features(cloud, neighbours_for(model.n_inputs))
    if len(cloud) == 0:
        return np.zeros((0, 3), np.uint8)
    residual = predict_residual(model, features)
    return to_uint8(cloud.attrs.astype(np.float64) + residual)


def default_train_config(**overrides) -> TrainConfig:
    base = dict(epochs=100, lr=3e-3, batch_size=512, samples_per_epoch=16384, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


def train_poae(pairs: List[Tuple[PointCloud, np.ndarray]],
               wmse: WmseConfig = WmseConfig(),
               config: Optional[TrainConfig] = None, m: int = DEFAULT_M, log=None):
    """Fit the residual model on ``(decoded cloud, target colours)`` pairs.

    Each batch recomputes its W-MSE weights from the current per-point
    errors. Returns ``(model, per-epoch weighted loss)``.
    """
    config = config or default_train_config()
    feats, residuals = [], []
    for decoded, target in pairs:
        target = np.asarray(target)
        if target.shape != (len(decoded), 3):
            raise ValueError("target colours do not match the decoded geometry")
        if len(decoded) == 0:
            continue
        feats.append(extract_attr_features(decoded, m))
        residuals.append((target.astype(np.float64) - decoded.attrs) / 255.0)
    if not feats:
        raise ValueError("empty PoAE training set")
    x_all = np.concatenate(feats)
    r_all = np.concatenate(residuals)

    def loss_fn(out, target):
        return wmse_loss(out, target, wmse_weights(point_errors(out, target), wmse))

    model = Mlp.init([feature_length(m), *HIDDEN, 3], "identity", seed=config.seed)
    history = train(model, len(x_all), lambda idx: (x_all[idx], r_all[idx]),
                    loss_fn, config, log)
    return model, history
