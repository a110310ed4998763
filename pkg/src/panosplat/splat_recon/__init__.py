"""3D gaussian scene representation, differentiable rasterization,
COLMAP interop, and optimization-based reconstruction."""

from .gaussians import (
    Gaussian3D,
    GaussianScene,
    PosedImage,
    project_gaussian,
    project_scene,
)
from .rasterizer import photometric_step, rasterize, rasterize_backward
from .rays import PlueckerRay, pluecker_from_pixel, pluecker_grid, save_pluecker
from .reconstruct import ReconstructConfig, reconstruct, subsample_views
from .scene_io import decode_scene, encode_scene, read_scene, write_scene
from .colmap_io import ingest_colmap_poses

__all__ = [
    "Gaussian3D", "GaussianScene", "PosedImage",
    "project_gaussian", "project_scene",
    "rasterize", "rasterize_backward", "photometric_step",
    "PlueckerRay", "pluecker_from_pixel", "pluecker_grid", "save_pluecker",
    "ReconstructConfig", "reconstruct", "subsample_views",
    "encode_scene", "decode_scene", "read_scene", "write_scene",
    "ingest_colmap_poses",
]
