"""LiDAR-camera panoptic fusion: alignment, region fusion, cylindrical voxels,
attention propagation, post-processing, losses and metrics."""

from .geometry import CameraModel, LidarFrame, PointPixelMap, Transform4, build_point_pixel_map
from .metrics import ClassTable, MetricReport, evaluate
from .pipeline import PipelineParams, load_frame, run_pipeline, save_frame
from .postproc import BevMaps, PanopticLabeling
from .scene import SceneConfig, generate_scene
from .voxel import CylinderGridSpec, VoxelGrid, resolve_grid

__version__ = "0.1.0"

__all__ = [
    "BevMaps",
    "CameraModel",
    "ClassTable",
    "CylinderGridSpec",
    "LidarFrame",
    "MetricReport",
    "PanopticLabeling",
    "PipelineParams",
    "PointPixelMap",
    "SceneConfig",
    "Transform4",
    "VoxelGrid",
    "build_point_pixel_map",
    "evaluate",
    "generate_scene",
    "load_frame",
    "resolve_grid",
    "run_pipeline",
    "save_frame",
]
