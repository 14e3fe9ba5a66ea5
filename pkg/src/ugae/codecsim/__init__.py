"""G-PCC-style codec simulator."""

from .attributes import decode_attributes, encode_attributes, qp_step
from .bitstream import RATE_LEVELS, Bitstream, RateLevel, bpip, rate_level
from .geometry import (decode_octree, dequantize_geometry, encode_octree,
                       occupancy_bytes, quantize_geometry)

__all__ = [
    "RATE_LEVELS", "Bitstream", "RateLevel", "bpip", "rate_level",
    "quantize_geometry", "dequantize_geometry", "encode_octree", "decode_octree",
    "occupancy_bytes", "encode_attributes", "decode_attributes", "qp_step",
]
