"""Encoder and decoder for the baseline and enhanced (UGAE) modes.

Baseline: quantize -> octree -> recolour the dequantized geometry ->
attribute coding. UGAE: quantize -> octree -> PoGE (K = N) -> DA-KNN
recolour -> attribute coding; the decoder repeats PoGE from the lossy
geometry and the header's K, decodes attributes, then applies PoAE. Only
the lossy geometry and the recoloured attributes are transmitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .codecsim import (Bitstream, RateLevel, bpip, decode_attributes,
                       decode_octree, dequantize_geometry, encode_attributes,
                       encode_octree, quantize_geometry, rate_level)
from .codecsim.geometry import scaled_depth
from .core import PointCloud
from .errors import BitstreamError, PrerequisiteError
from .learner import Mlp
from .metrics import (classify_frequency, classify_loss, color_psnr, d1_psnr,
                      d2_psnr, overlap_ratio)
from .pae import recolor
from .poae import enhance_attributes
from .poge import enhance_geometry
from .spatial import Normals, estimate_normals

MODES = ("baseline", "ugae")


@dataclass
class Encoded:
    bitstream: Bitstream
    geometry: PointCloud        # geometry the attributes were coded on
    target: np.ndarray          # recoloured attributes before coding


@dataclass
class Decoded:
    decoded: PointCloud         # geometry plus decoded attributes
    final: PointCloud           # after PoAE (same as ``decoded`` for baseline)


def encode(cloud: PointCloud, level, mode: str = "ugae", poge: Optional[Mlp] = None,
           k: int = 8) -> Encoded:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not cloud.has_attrs or len(cloud) == 0:
        raise ValueError("encoding needs a non-empty coloured cloud")
    level = rate_level(level)
    cloud = cloud.sorted()
    lossy = quantize_geometry(cloud, level.pqs)
    geometry_payload = encode_octree(lossy.coords, lossy.depth)
    if mode == "baseline":
        geometry = dequantize_geometry(lossy, level.pqs, cloud.depth)
        k_header = 0
    else:
        if poge is None:
            raise PrerequisiteError("ugae mode needs a PoGE model")
        geometry = enhance_geometry(poge, lossy, level.pqs, cloud.depth, len(cloud)).cloud()
        k_header = len(cloud)
    target = recolor(geometry, cloud, k).attrs
    attr_payload, _ = encode_attributes(geometry.coords, target, level.qp, cloud.depth)
    bs = Bitstream(cloud.depth, level.index, len(cloud), len(lossy), k_header,
                   geometry_payload, attr_payload)
    return Encoded(bs, geometry, target)


def decode(bitstream, poge: Optional[Mlp] = None, poae: Optional[Mlp] = None) -> Decoded:
    bs = bitstream if isinstance(bitstream, Bitstream) else Bitstream.from_bytes(bitstream)
    try:
        level = rate_level(bs.level)
    except ValueError:
        raise BitstreamError(f"unknown rate level {bs.level}", 6) from None
    coords = decode_octree(bs.geometry, max_points=max(bs.n_lossy, 1))
    lossy_depth = scaled_depth(bs.depth, level.pqs)
    if len(coords) != bs.n_lossy or bs.geometry[:1] != bytes([lossy_depth]):
        raise BitstreamError("geometry payload disagrees with the header", 0)
    lossy = PointCloud(coords, None, lossy_depth)
    if bs.k == 0:
        geometry = dequantize_geometry(lossy, level.pqs, bs.depth)
    else:
        if poge is None:
            raise PrerequisiteError("this stream needs a PoGE model to decode")
        geometry = enhance_geometry(poge, lossy, level.pqs, bs.depth, bs.k).cloud()
    attrs = decode_attributes(bs.attributes, geometry.coords, bs.depth)
    decoded = geometry.with_attrs(attrs)
    final = decoded
    if bs.k and poae is not None:
        final = decoded.with_attrs(enhance_attributes(poae, decoded))
    return Decoded(decoded, final)


METRIC_COLUMNS = ("cloud", "level", "bpip_geom", "bpip_attr", "d1", "d2",
                  "y_psnr", "yuv_psnr", "overlap_pre", "overlap_post")


def evaluate(original: PointCloud, encoded: Encoded, decoded: Decoded, level,
             cloud_id: str, normals: Optional[Normals] = None,
             enhanced: bool = True) -> dict:
    """One metrics row. ``overlap_post`` is NaN when no PoAE ran."""
    level = rate_level(level)
    bs = encoded.bitstream
    n = bs.n_points
    normals = normals or estimate_normals(original)
    final = decoded.final
    col = color_psnr(original, final)
    reference = encoded.geometry.with_attrs(encoded.target)
    freq = classify_frequency(reference)
    pre = overlap_ratio(freq, classify_loss(reference, decoded.decoded.attrs))
    post = (overlap_ratio(freq, classify_loss(reference, final.attrs))
            if enhanced else math.nan)
    return {
        "cloud": cloud_id,
        "level": level.name,
        "bpip_geom": bpip(bs.geometry, n),
        "bpip_attr": bpip(bs.attributes, n),
        "d1": d1_psnr(original, final),
        "d2": d2_psnr(original, final, normals),
        "y_psnr": col.y,
        "yuv_psnr": col.yuv,
        "overlap_pre": pre,
        "overlap_post": post,
    }


def run(cloud: PointCloud, level, mode: str, poge: Optional[Mlp] = None,
        poae: Optional[Mlp] = None, k: int = 8):
    """Encode then decode in one go; returns ``(Encoded, Decoded)``."""
    enc = encode(cloud, level, mode, poge, k)
    dec = decode(enc.bitstream.to_bytes(), poge, poae)
    return enc, dec
