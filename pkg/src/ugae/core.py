"""Point-cloud container, colour conversion, voxelization and PLY I/O."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import PlyError

MAX_DEPTH = 16

# BT.709 luma coefficients (full range).
KR, KG, KB = 0.2126, 0.7152, 0.0722
_CB_SCALE = 2.0 * (1.0 - KB)  # 1.8556
_CR_SCALE = 2.0 * (1.0 - KR)  # 1.5748


def _morton_keys(coords: np.ndarray, depth: int) -> np.ndarray:
    # Local copy to keep core free of a spatial import cycle.
    keys = np.zeros(len(coords), dtype=np.int64)
    c = coords.astype(np.int64)
    for b in range(depth):
        keys |= ((c[:, 0] >> b) & 1) << (3 * b + 2)
        keys |= ((c[:, 1] >> b) & 1) << (3 * b + 1)
        keys |= ((c[:, 2] >> b) & 1) << (3 * b)
    return keys


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Voxelized point cloud: integer coordinates plus optional 8-bit RGB.

    ``coords`` is an ``(N, 3)`` int64 array with every component in
    ``[0, 2**depth - 1]`` and no duplicate rows. ``attrs`` is ``None`` or an
    ``(N, 3)`` uint8 array aligned with ``coords``. Arrays are made read-only.
    """

    coords: np.ndarray
    attrs: Optional[np.ndarray]
    depth: int

    def __post_init__(self):
        coords = np.asarray(self.coords)
        if coords.size == 0:
            coords = np.zeros((0, 3), dtype=np.int64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ValueError(f"coords must have shape (N, 3), got {coords.shape}")
        if not np.issubdtype(coords.dtype, np.integer):
            raise ValueError("coords must be integers")
        coords = np.ascontiguousarray(coords, dtype=np.int64)
        if not (1 <= self.depth <= MAX_DEPTH):
            raise ValueError(f"depth must be in [1, {MAX_DEPTH}], got {self.depth}")
        if len(coords) and (coords.min() < 0 or coords.max() > (1 << self.depth) - 1):
            raise ValueError(f"coordinates outside the depth-{self.depth} grid")
        if len(coords) > 1:
            keys = np.sort(_morton_keys(coords, self.depth))
            if np.any(keys[1:] == keys[:-1]):
                raise ValueError("duplicate coordinates")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

        attrs = self.attrs
        if attrs is not None:
            attrs = np.asarray(attrs)
            if attrs.size == 0:
                attrs = np.zeros((0, 3), dtype=np.uint8)
            if attrs.shape != coords.shape:
                raise ValueError(
                    f"attrs shape {attrs.shape} does not match coords {coords.shape}")
            if np.issubdtype(attrs.dtype, np.floating) or attrs.dtype != np.uint8:
                if attrs.min(initial=0) < 0 or attrs.max(initial=0) > 255:
                    raise ValueError("attribute values outside [0, 255]")
            attrs = np.ascontiguousarray(attrs, dtype=np.uint8)
            attrs.setflags(write=False)
            object.__setattr__(self, "attrs", attrs)

    def __len__(self):
        return len(self.coords)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        if self.depth != other.depth or not np.array_equal(self.coords, other.coords):
            return False
        if (self.attrs is None) != (other.attrs is None):
            return False
        return self.attrs is None or np.array_equal(self.attrs, other.attrs)

    __hash__ = None

    @property
    def has_attrs(self) -> bool:
        return self.attrs is not None

    @property
    def peak(self) -> int:
        return (1 << self.depth) - 1

    def morton_keys(self) -> np.ndarray:
        return _morton_keys(self.coords, self.depth)

    def sorted(self) -> "PointCloud":
        """Return a copy reordered by Morton key (the canonical order)."""
        order = np.argsort(self.morton_keys(), kind="stable")
        return self.take(order)

    def take(self, idx) -> "PointCloud":
        attrs = None if self.attrs is None else self.attrs[idx]
        return PointCloud(self.coords[idx], attrs, self.depth)

    def with_attrs(self, attrs) -> "PointCloud":
        return PointCloud(self.coords, attrs, self.depth)


def infer_depth(coords: np.ndarray) -> int:
    """Smallest ``d >= 1`` such that every coordinate is below ``2**d``."""
    if len(coords) == 0:
        return 1
    m = int(np.max(coords))
    return max(1, m.bit_length())


# ---------------------------------------------------------------------------
# colour


def rgb_to_yuv(rgb) -> np.ndarray:
    """Full-range BT.709 RGB -> YUV with chroma offset 128.

    Accepts any array with a trailing axis of 3 and returns float64.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = KR * r + KG * g + KB * b
    u = (b - y) / _CB_SCALE + 128.0
    v = (r - y) / _CR_SCALE + 128.0
    return np.stack([y, u, v], axis=-1)


def yuv_to_rgb_float(yuv) -> np.ndarray:
    yuv = np.asarray(yuv, dtype=np.float64)
    y = yuv[..., 0]
    u = yuv[..., 1] - 128.0
    v = yuv[..., 2] - 128.0
    r = y + _CR_SCALE * v
    b = y + _CB_SCALE * u
    g = (y - KR * r - KB * b) / KG
    return np.stack([r, g, b], axis=-1)


def round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def to_uint8(x) -> np.ndarray:
    """Round half up and clamp to [0, 255]."""
    return np.clip(round_half_up(x), 0, 255).astype(np.uint8)


def yuv_to_rgb(yuv) -> np.ndarray:
    """Inverse of :func:`rgb_to_yuv`, rounded and clamped to uint8."""
    return to_uint8(yuv_to_rgb_float(yuv))


# ---------------------------------------------------------------------------
# voxelization


def voxelize(points, colors=None, depth: int = 10) -> PointCloud:
    """Map raw points onto a ``2**depth`` grid and merge duplicate voxels.

    Points that are already integral and inside the grid are kept in place.
    Otherwise the bounding box is translated to the origin and scaled
    uniformly so its widest extent spans ``[0, 2**depth - 1]``. Colours of
    merged voxels are averaged per channel and rounded half up.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("voxelize needs at least one point")
    if not (1 <= depth <= MAX_DEPTH):
        raise ValueError(f"depth must be in [1, {MAX_DEPTH}]")
    top = (1 << depth) - 1
    rounded = np.round(pts)
    if (np.all(np.abs(pts - rounded) <= 1e-6) and rounded.min() >= 0
            and rounded.max() <= top):
        grid = rounded.astype(np.int64)
    else:
        lo = pts.min(axis=0)
        extent = float((pts.max(axis=0) - lo).max())
        if extent == 0.0:
            grid = np.zeros(pts.shape, dtype=np.int64)
        else:
            scaled = (pts - lo) * (top / extent)
            grid = np.clip(np.floor(scaled + 0.5), 0, top).astype(np.int64)

    keys = _morton_keys(grid, depth)
    uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    coords = grid[first]
    attrs = None
    if colors is not None:
        col = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        if len(col) != len(pts):
            raise ValueError("colors and points differ in length")
        sums = np.zeros((len(uniq), 3))
        np.add.at(sums, inverse, col)
        counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
        attrs = to_uint8(sums / counts[:, None])
    return PointCloud(coords, attrs, depth)


# ---------------------------------------------------------------------------
# PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_header(fh):
    first = fh.readline()
    if first.strip() != b"ply":
        raise PlyError("not a PLY file (missing 'ply' magic)")
    fmt = None
    depth = None
    elements = []  # [name, count, [(prop, dtype) | ('list', ...)]]
    while True:
        raw = fh.readline()
        if not raw:
            raise PlyError("unexpected end of file in header")
        line = raw.decode("ascii", errors="replace").strip()
        parts = line.split()
        if len(parts) == 3 and parts[:2] == ["comment", "depth"]:
            try:
                depth = int(parts[2])
            except ValueError:
                raise PlyError(f"malformed depth comment: {line!r}") from None
            continue
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"unsupported PLY format: {line!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise PlyError(f"malformed element line: {line!r}")
            try:
                count = int(parts[2])
            except ValueError:
                raise PlyError(f"malformed element count: {line!r}") from None
            elements.append([parts[1], count, []])
        elif parts[0] == "property":
            if not elements:
                raise PlyError("property before any element")
            if parts[1] == "list":
                if len(parts) != 5:
                    raise PlyError(f"malformed list property: {line!r}")
                elements[-1][2].append((parts[4], ("list", parts[2], parts[3])))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise PlyError(f"malformed property line: {line!r}")
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        elif parts[0] == "end_header":
            break
        else:
            raise PlyError(f"unknown header keyword: {parts[0]!r}")
    if fmt is None:
        raise PlyError("missing format line")
    return fmt, elements, depth


def _vertex_table(fh, fmt, elements):
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise PlyError("no vertex element")
    if names[0] != "vertex":
        raise PlyError("vertex must be the first element")
    _, count, props = elements[0]
    if any(isinstance(t, tuple) for _, t in props):
        raise PlyError("list properties on vertices are not supported")
    prop_names = [p for p, _ in props]
    for axis in "xyz":
        if axis not in prop_names:
            raise PlyError(f"vertex property {axis!r} missing")

    if fmt == "binary_little_endian":
        dtype = np.dtype([(p, "<" + t) for p, t in props])
        buf = fh.read(dtype.itemsize * count)
        if len(buf) != dtype.itemsize * count:
            raise PlyError("truncated binary vertex data")
        table = np.frombuffer(buf, dtype=dtype, count=count)
        return {p: table[p].astype(np.float64) for p in prop_names}

    rows = []
    for i in range(count):
        raw = fh.readline()
        if not raw:
            raise PlyError(f"expected {count} vertices, file ends after {i}")
        tokens = raw.split()
        if len(tokens) != len(props):
            raise PlyError(f"vertex {i}: expected {len(props)} values, got {len(tokens)}")
        try:
            rows.append([float(t) for t in tokens])
        except ValueError:
            raise PlyError(f"vertex {i}: non-numeric value in {raw!r}") from None
    data = np.asarray(rows, dtype=np.float64).reshape(count, len(props))
    return {p: data[:, j] for j, p in enumerate(prop_names)}


def read_ply_points(path):
    """Raw vertex data of a PLY file: ``(xyz float64, rgb uint8 or None, depth comment)``."""
    with open(path, "rb") as fh:
        fmt, elements, stated_depth = _parse_header(fh)
        cols = _vertex_table(fh, fmt, elements)
    xyz = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    if not np.all(np.isfinite(xyz)):
        raise PlyError("non-finite coordinate")
    present = [c in cols for c in ("red", "green", "blue")]
    rgb = None
    if any(present):
        if not all(present):
            raise PlyError("incomplete colour properties (need red, green and blue)")
        rgb = np.stack([cols["red"], cols["green"], cols["blue"]], axis=1)
        if len(rgb) and (rgb.min() < 0 or rgb.max() > 255 or np.any(rgb != np.round(rgb))):
            raise PlyError("colour values must be integers in [0, 255]")
        rgb = rgb.astype(np.uint8)
    return xyz, rgb, stated_depth


def load_ply(path) -> PointCloud:
    """Read a PLY file (ASCII or binary little-endian) as a PointCloud.

    Coordinates must be integral (within 1e-6). The grid depth comes from a
    ``comment depth <d>`` header line when present (as written by
    :func:`save_ply`), otherwise it is the smallest power of two that bounds
    the largest coordinate.
    """
    xyz, attrs, stated_depth = read_ply_points(path)
    rounded = np.round(xyz)
    if np.any(np.abs(xyz - rounded) > 1e-6):
        raise PlyError("non-integral coordinates (voxelize the cloud first)")
    if len(rounded) and rounded.min() < 0:
        raise PlyError("negative coordinates")
    coords = rounded.astype(np.int64)

    depth = infer_depth(coords)
    if stated_depth is not None:
        if stated_depth < depth:
            raise PlyError(f"depth comment {stated_depth} too small for the coordinates")
        depth = stated_depth
    if depth > MAX_DEPTH:
        raise PlyError(f"coordinates exceed the depth-{MAX_DEPTH} grid")
    try:
        return PointCloud(coords, attrs, depth)
    except ValueError as exc:
        raise PlyError(str(exc)) from None


def save_ply(cloud: PointCloud, path, binary: bool = True) -> None:
    """Write ``cloud`` with int x,y,z and (if present) uchar red,green,blue."""
    n = len(cloud)
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"comment depth {cloud.depth}",
              f"element vertex {n}",
              "property int x", "property int y", "property int z"]
    if cloud.has_attrs:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")

    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(head)
        if binary:
            fields = [("x", "<i4"), ("y", "<i4"), ("z", "<i4")]
            if cloud.has_attrs:
                fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            table = np.empty(n, dtype=fields)
            table["x"], table["y"], table["z"] = cloud.coords.T
            if cloud.has_attrs:
                table["red"], table["green"], table["blue"] = cloud.attrs.T
            fh.write(table.tobytes())
        else:
            data = cloud.coords
            if cloud.has_attrs:
                data = np.hstack([data, cloud.attrs.astype(np.int64)])
            lines = "\n".join(" ".join(map(str, row)) for row in data.tolist())
            if lines:
                fh.write(lines.encode("ascii") + b"\n")
    os.replace(tmp, path)
