"""Unified geometry and attribute enhancement for lossy point cloud coding."""

from .core import PointCloud, load_ply, save_ply, voxelize

__version__ = "0.1.0"
__all__ = ["PointCloud", "load_ply", "save_ply", "voxelize"]
