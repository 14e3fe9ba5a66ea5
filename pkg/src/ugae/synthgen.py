"""Seeded synthetic coloured surfaces (sphere, cube, tilted plane)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PointCloud, to_uint8
from .spatial import morton_encode, morton_decode

SHAPES = ("sphere", "cube", "plane")
TEXTURES = ("checker", "gradient", "noise")

# two saturated colours with a large luma gap
_CHECKER_A = np.array([220.0, 60.0, 40.0])
_CHECKER_B = np.array([30.0, 90.0, 210.0])


@dataclass(frozen=True)
class ShapeSpec:
    shape: str
    count: int
    depth: int
    texture: str = "checker"
    period: float = 8.0
    seed: int = 0


def _surface_samples(shape, size, rng, n):
    """``n`` samples of a surface with characteristic size ``size`` at the origin."""
    if shape == "sphere":
        v = rng.normal(size=(n, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True) * size
    if shape == "cube":
        u = rng.uniform(-size, size, (n, 3))
        face = rng.integers(0, 6, n)
        axis, sign = face // 2, np.where(face % 2, 1.0, -1.0)
        u[np.arange(n), axis] = sign * size
        return u
    if shape == "plane":
        xy = rng.uniform(-size, size, (n, 2))
        z = 0.35 * xy[:, 0] + 0.2 * xy[:, 1] + 0.004 * (xy[:, 0] ** 2 - xy[:, 1] ** 2)
        return np.column_stack([xy, z])
    raise ValueError(f"unknown shape {shape!r}")


def _area(shape, size):
    if shape == "sphere":
        return 4 * np.pi * size ** 2
    if shape == "cube":
        return 6 * (2 * size) ** 2
    return (2 * size) ** 2 * 1.09  # tilt stretches the sheet


def _max_size(shape, depth):
    half = ((1 << depth) - 1) / 2.0 - 1.0
    # keep the plane's tilt and bend inside the grid
    return 0.8 * half if shape == "plane" else half


def _voxel_surface(shape, size, depth, rng):
    center = ((1 << depth) - 1) / 2.0
    n = int(_area(shape, size) * 6) + 1000
    pts = _surface_samples(shape, size, rng, n) + center
    grid = np.clip(np.floor(pts + 0.5), 0, (1 << depth) - 1).astype(np.int64)
    keys = np.unique(morton_encode(grid, depth))
    return morton_decode(keys, depth).reshape(-1, 3)


def _value_noise(coords, period, rng):
    """Trilinear value noise on a lattice of spacing ``period``, per channel.

    Only lattice corners touched by ``coords`` get random values, assigned in
    sorted corner order so the result depends on the seed alone.
    """
    p = coords / period
    base = np.floor(p).astype(np.int64)
    frac = p - base
    offsets = np.array([(dx, dy, dz) for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])
    corners = base[:, None, :] + offsets[None]
    uniq, inverse = np.unique(corners.reshape(-1, 3), axis=0, return_inverse=True)
    values = rng.uniform(0, 255, (len(uniq), 3))[inverse.reshape(-1)].reshape(len(p), 8, 3)
    w = np.prod(np.where(offsets[None] == 1, frac[:, None, :], 1 - frac[:, None, :]), axis=2)
    return np.einsum("nc,ncj->nj", w, values)


def texture(coords, kind, period, rng):
    c = coords.astype(np.float64)
    if kind == "checker":
        cell = np.floor(c / period).astype(np.int64).sum(axis=1) % 2
        return np.where(cell[:, None] == 0, _CHECKER_A, _CHECKER_B)
    if kind == "gradient":
        lo, hi = c.min(axis=0), c.max(axis=0)
        t = (c - lo) / np.maximum(hi - lo, 1.0)
        return np.column_stack([40 + 180 * t[:, 0], 200 - 150 * t[:, 1], 60 + 150 * t[:, 2]])
    if kind == "noise":
        return _value_noise(c, period, rng)
    raise ValueError(f"unknown texture {kind!r}")


def generate(spec: ShapeSpec) -> PointCloud:
    """Build the cloud described by ``spec``.

    The surface is scaled so its voxelization has slightly more than
    ``spec.count`` voxels when the grid allows it, then a seeded subset of
    exactly ``count`` is kept. A grid too small for ``count`` returns every
    surface voxel. Output is Morton-sorted.
    """
    if spec.count < 1:
        raise ValueError("count must be >= 1")
    if spec.shape not in SHAPES or spec.texture not in TEXTURES:
        raise ValueError(f"unsupported spec {spec}")
    rng = np.random.default_rng(spec.seed)
    limit = _max_size(spec.shape, spec.depth)
    size = min(limit, np.sqrt(spec.count / _area(spec.shape, 1.0)))
    # voxel count grows with size**2; aim slightly above the target so the
    # final subset leaves few holes
    for _ in range(12):
        coords = _voxel_surface(spec.shape, size, spec.depth, rng)
        n = len(coords)
        if spec.count <= n <= 1.03 * spec.count or (size >= limit and n < spec.count):
            break
        size = min(limit, size * np.sqrt(1.015 * spec.count / n))
    if len(coords) > spec.count:
        keep = np.sort(rng.choice(len(coords), spec.count, replace=False))
        coords = coords[keep]
    colors = to_uint8(texture(coords, spec.texture, spec.period, rng))
    return PointCloud(coords, colors, spec.depth)
