"""Post-geometry enhancement: candidate expansion, occupancy prediction, Top-K.

Every lossy voxel expands to its exact quantization preimage on the
original grid. A small MLP scores each candidate from the lossy occupancy
around its parent plus the candidate's position inside the preimage cell,
and the K most probable candidates form the enhanced geometry. All stages
are ordered by Morton key so encoder and decoder reproduce the same bits.

Feature layout per candidate, in order:
  * for each scale ``s`` in ``scales``: 27 indicators of the 3x3x3 block
    around ``parent >> log2(s)`` in the correspondingly downscaled lossy
    grid, neighbour offsets enumerated with dx outermost and dz innermost;
  * the candidate's offset inside its preimage cell per axis, divided by
    ``cell width - 1`` (0.5 for single-voxel cells).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .codecsim.geometry import quantize_coords
from .core import PointCloud
from .errors import ModelMismatchError
from .learner import Mlp, TrainConfig, bce_loss, train
from .spatial import morton_decode, morton_encode

DEFAULT_SCALES = (1, 2)
HIDDEN = (64, 64)
_NEIGHBORS = np.array([(dx, dy, dz) for dx in (-1, 0, 1)
                       for dy in (-1, 0, 1) for dz in (-1, 0, 1)], dtype=np.int64)
PREDICT_CHUNK = 1 << 16


def feature_length(scales: Sequence[int] = DEFAULT_SCALES) -> int:
    return 27 * len(scales) + 3


def scales_for(n_features: int) -> Tuple[int, ...]:
    """Scales implied by a model's input width (powers of two from 1)."""
    n = (n_features - 3) // 27
    if n < 1 or feature_length(range(n)) != n_features:
        raise ModelMismatchError(f"{n_features} inputs do not fit the PoGE feature layout")
    return tuple(1 << i for i in range(n))


@dataclass
class CandidateSet:
    """Candidates of one lossy cloud, Morton-sorted on the original grid."""

    coords: np.ndarray      # (M, 3) int64
    keys: np.ndarray        # (M,) Morton keys on the original grid
    parent: np.ndarray      # (M,) index into the lossy cloud
    offsets: np.ndarray     # (M, 3) normalized position inside the parent cell
    depth: int
    probs: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.coords)


@dataclass
class EnhancedGeometry:
    coords: np.ndarray
    k_selected: int
    depth: int

    def cloud(self) -> PointCloud:
        return PointCloud(self.coords, None, self.depth)


def preimage_intervals(pqs: float, depth: int, n_values: int):
    """``lo[v], hi[v]`` with ``quantize(u) == v`` exactly for ``lo <= u <= hi``.

    ``hi < lo`` marks an empty preimage.
    """
    u = np.arange(1 << depth, dtype=np.int64)
    q = quantize_coords(u, pqs)  # non-decreasing in u
    v = np.arange(n_values, dtype=np.int64)
    lo = np.searchsorted(q, v, side="left")
    hi = np.searchsorted(q, v, side="right") - 1
    return lo, hi


def generate_candidates(lossy: PointCloud, pqs: float, depth: int) -> CandidateSet:
    """Expand each lossy voxel to every original-grid voxel quantizing onto it."""
    n_values = (1 << lossy.depth) if len(lossy) == 0 else int(lossy.coords.max()) + 1
    lo, hi = preimage_intervals(pqs, depth, n_values)
    c = lossy.coords
    start = lo[c]                       # (n, 3)
    width = np.maximum(hi[c] - start + 1, 0)
    span = int(width.max()) if len(c) else 0
    if span == 0:
        empty = np.zeros((0, 3), np.int64)
        return CandidateSet(empty, np.zeros(0, np.int64), np.zeros(0, np.int64),
                            np.zeros((0, 3)), depth)
    r = np.arange(span)
    grid = np.stack(np.meshgrid(r, r, r, indexing="ij"), -1).reshape(-1, 3)
    inside = np.all(grid[None] < width[:, None, :], axis=2)   # (n, span^3)
    parent, slot = np.nonzero(inside)
    step = grid[slot]
    coords = start[parent] + step
    denom = np.maximum(width[parent] - 1, 1)
    offsets = np.where(width[parent] > 1, step / denom, 0.5)
    keys = morton_encode(coords, depth)
    order = np.argsort(keys, kind="stable")
    return CandidateSet(coords[order], keys[order], parent[order], offsets[order], depth)


def parent_features(lossy: PointCloud, scales: Sequence[int] = DEFAULT_SCALES) -> np.ndarray:
    """``(n_lossy, 27 * len(scales))`` occupancy indicators per lossy voxel."""
    feats = []
    c = lossy.coords
    for s in scales:
        shift = int(s).bit_length() - 1
        if (1 << shift) != s:
            raise ValueError(f"scale {s} is not a power of two")
        depth = max(1, lossy.depth - shift)
        coarse = c >> shift
        table = np.unique(morton_encode(coarse, depth))
        nb = coarse[:, None, :] + _NEIGHBORS[None]
        valid = np.all((nb >= 0) & (nb < (1 << depth)), axis=2)
        keys = np.zeros(nb.shape[:2], np.int64)
        keys[valid] = morton_encode(nb[valid], depth)
        pos = np.minimum(np.searchsorted(table, keys), len(table) - 1)
        feats.append((valid & (table[pos] == keys)).astype(np.float64))
    return np.concatenate(feats, axis=1) if feats else np.zeros((len(c), 0))


def extract_geo_features(cands: CandidateSet, lossy: PointCloud,
                         scales: Sequence[int] = DEFAULT_SCALES,
                         idx: Optional[np.ndarray] = None,
                         parent_feats: Optional[np.ndarray] = None) -> np.ndarray:
    """Feature rows for candidates ``idx`` (all by default)."""
    if parent_feats is None:
        parent_feats = parent_features(lossy, scales)
    if idx is None:
        idx = np.arange(len(cands))
    return np.hstack([parent_feats[cands.parent[idx]], cands.offsets[idx]])


def occupancy_labels(cands: CandidateSet, original: PointCloud) -> np.ndarray:
    """1.0 where the candidate voxel exists in the original cloud."""
    table = np.sort(original.morton_keys())
    if len(table) == 0 or len(cands) == 0:
        return np.zeros(len(cands))
    pos = np.minimum(np.searchsorted(table, cands.keys), len(table) - 1)
    return (table[pos] == cands.keys).astype(np.float64)


def predict_probs(model: Mlp, cands: CandidateSet, lossy: PointCloud) -> np.ndarray:
    scales = scales_for(model.n_inputs)
    pf = parent_features(lossy, scales)
    out = np.empty(len(cands))
    for s in range(0, len(cands), PREDICT_CHUNK):
        idx = np.arange(s, min(s + PREDICT_CHUNK, len(cands)))
        out[idx] = model(extract_geo_features(cands, lossy, scales, idx, pf)).ravel()
    return out


def select_topk(keys, probs, k: int) -> np.ndarray:
    """Indices of the ``k`` most probable candidates, ties to the smaller key.

    The returned indices are ordered by Morton key.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    keys = np.asarray(keys)
    probs = np.asarray(probs, dtype=np.float64)
    chosen = np.lexsort((keys, -probs))[:k]
    return chosen[np.argsort(keys[chosen], kind="stable")]


def enhance_geometry(model: Mlp, lossy: PointCloud, pqs: float, depth: int,
                     k: int) -> EnhancedGeometry:
    cands = generate_candidates(lossy, pqs, depth)
    if len(cands) == 0:
        return EnhancedGeometry(np.zeros((0, 3), np.int64), 0, depth)
    cands.probs = predict_probs(model, cands, lossy)
    chosen = select_topk(cands.keys, cands.probs, k)
    return EnhancedGeometry(cands.coords[chosen], len(chosen), depth)


# ---------------------------------------------------------------------------
# training


def default_train_config(**overrides) -> TrainConfig:
    base = dict(epochs=100, lr=3e-3, batch_size=512, samples_per_epoch=16384, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


def train_poge(pairs: List[Tuple[PointCloud, PointCloud, float]],
               config: Optional[TrainConfig] = None,
               scales: Sequence[int] = DEFAULT_SCALES, log=None):
    """Fit an occupancy model on ``(lossy, original, pqs)`` triples.

    Returns ``(model, per-epoch BCE)``.
    """
    config = config or default_train_config()
    parts = []
    for lossy, original, pqs in pairs:
        cands = generate_candidates(lossy, pqs, original.depth)
        if len(cands):
            parts.append((parent_features(lossy, scales), cands,
                          occupancy_labels(cands, original)))
    if not parts:
        raise ValueError("empty PoGE training set")
    sizes = np.array([len(p[1]) for p in parts])
    bounds = np.concatenate([[0], np.cumsum(sizes)])

    def batch(idx):
        which = np.searchsorted(bounds, idx, side="right") - 1
        x = np.empty((len(idx), feature_length(scales)))
        y = np.empty((len(idx), 1))
        for p in np.unique(which):
            sel = which == p
            pf, cands, labels = parts[p]
            local = idx[sel] - bounds[p]
            x[sel] = np.hstack([pf[cands.parent[local]], cands.offsets[local]])
            y[sel, 0] = labels[local]
        return x, y

    model = Mlp.init([feature_length(scales), *HIDDEN, 1], "logistic", seed=config.seed)
    history = train(model, int(bounds[-1]), batch, bce_loss, config, log)
    return model, history
