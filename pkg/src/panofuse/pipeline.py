"""End-to-end driver and frame directories.

Stages run in dataflow order: point-pixel map, region-aligned fusion, base
and fused voxel grids, attention propagation, panoptic post-processing.
Every stage output is rounded to float32 before the next stage sees it, which
is exactly what a dump/reload round trip does; so a chain of separate CLI
invocations reproduces a single ``run`` bit for bit.

The learned heads are not part of this package: post-processing consumes
BEV head outputs (:class:`BevMaps`) that come with the frame.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attention import propagate
from .errors import ConfigurationError, FormatError
from .formats import (
    f32,
    pose_at,
    read_calibration,
    read_labels,
    read_points,
    read_poses,
    read_tensor,
    read_voxels,
    write_calibration,
    write_labels,
    write_points,
    write_poses,
    write_tensor,
    write_voxels,
)
from .geometry import LidarFrame, PointPixelMap, build_point_pixel_map
from .metrics import ClassTable
from .postproc import FOG_THRESHOLD, NMS_KERNEL, NMS_THRESHOLD, BevMaps, PanopticLabeling, postprocess
from .scene import SyntheticFrame
from .semantic import DEFAULT_TAU, FeatureMap, PixelClassifier, region_alignment
from .voxel import DEFAULT_WIDTH, CylinderGridSpec, VoxelGrid, block_mean, encode_base_voxels, scatter_pool, voxel_indices


@dataclass(frozen=True)
class PipelineParams:
    tau: float = DEFAULT_TAU
    nms_kernel: int = NMS_KERNEL
    nms_threshold: float = NMS_THRESHOLD
    fog_threshold: float = FOG_THRESHOLD
    pool: str = "mean"
    width: int = DEFAULT_WIDTH
    compensate: bool = True
    gate_labels: str = "pred"  # "pred": classifier at the pixel, "gt": point labels
    lookup: str = "nearest"
    activation: str = "identity"
    vote: bool = True
    use_fog: bool = True

    def __post_init__(self):
        if self.pool not in ("mean", "max"):
            raise ConfigurationError(f"pool must be mean or max, got {self.pool!r}")
        if self.gate_labels not in ("pred", "gt"):
            raise ConfigurationError(f"gate_labels must be pred or gt, got {self.gate_labels!r}")
        if self.nms_kernel < 1 or self.nms_kernel % 2 == 0:
            raise ConfigurationError(f"nms kernel must be odd and positive, got {self.nms_kernel}")
        if self.width < 1:
            raise ConfigurationError("voxel width must be positive")


@dataclass(frozen=True)
class FusedRows:
    """Compressed fused features, one row per (point, camera) entry."""

    point_index: np.ndarray
    features: np.ndarray


@dataclass
class PipelineResult:
    labeling: PanopticLabeling
    pixel_map: PointPixelMap
    fused: FusedRows
    base: VoxelGrid
    fused_grid: VoxelGrid
    propagated: VoxelGrid
    losses: dict = field(default_factory=dict)


def _q_grid(grid: VoxelGrid) -> VoxelGrid:
    return VoxelGrid(grid.spec, grid.indices, f32(grid.features), grid.counts)


def stage_project(frame: SyntheticFrame, params: PipelineParams) -> PointPixelMap:
    pm = build_point_pixel_map(frame.lidar, frame.rig, frame.poses_t2_to_first, params.compensate)
    return PointPixelMap(pm.point_index, pm.camera_index, f32(pm.pixels), f32(pm.depth))


def stage_fuse(frame: SyntheticFrame, pixel_map: PointPixelMap, params: PipelineParams):
    """Returns (FusedRows, per-camera losses)."""
    labels = frame.labels.semantic if params.gate_labels == "gt" and frame.labels is not None else None
    sizes = [(cam.width, cam.height) for cam in frame.rig]
    fused, losses = region_alignment(
        pixel_map,
        frame.feature_maps,
        frame.classifier,
        frame.lidar.features,
        sizes,
        params.tau,
        labels,
        params.activation,
        params.lookup,
    )
    proj = block_mean(fused.shape[1], params.width)
    return FusedRows(pixel_map.point_index.copy(), f32(fused @ proj.T)), losses


def stage_voxelize(frame: SyntheticFrame, fused: FusedRows, params: PipelineParams):
    """Returns (base grid, fused grid), both in the ego frame at LiDAR time."""
    ego = frame.lidar.ego_positions()
    base = encode_base_voxels(ego, frame.lidar.features, frame.spec, params.width)
    grid = scatter_pool(ego[fused.point_index], fused.features, frame.spec, params.pool)
    return _q_grid(base), _q_grid(grid)


def stage_propagate(base: VoxelGrid, fused_grid: VoxelGrid) -> VoxelGrid:
    return _q_grid(propagate(base, fused_grid))


def stage_postprocess(frame: SyntheticFrame, params: PipelineParams, bev: BevMaps | None = None) -> PanopticLabeling:
    bev = bev if bev is not None else frame.bev
    if bev is None:
        raise ConfigurationError("frame carries no BEV head outputs")
    if bev.semantic.shape != frame.spec.shape:
        raise ConfigurationError(f"BEV maps {bev.semantic.shape} do not match grid {frame.spec.shape}")
    idx, _ = voxel_indices(frame.lidar.ego_positions(), frame.spec)
    return postprocess(
        bev,
        idx,
        frame.thing_classes,
        params.nms_kernel,
        params.nms_threshold,
        params.fog_threshold,
        params.vote,
        params.use_fog,
    )


def run_pipeline(frame: SyntheticFrame, params: PipelineParams = PipelineParams(), bev=None, dump_dir=None) -> PipelineResult:
    pm = stage_project(frame, params)
    fused, losses = stage_fuse(frame, pm, params)
    base, fgrid = stage_voxelize(frame, fused, params)
    prop = stage_propagate(base, fgrid)
    labeling = stage_postprocess(frame, params, bev)
    result = PipelineResult(labeling, pm, fused, base, fgrid, prop, losses)
    if dump_dir is not None:
        dump_result(result, dump_dir)
    return result


# -- dumps ------------------------------------------------------------------

PIXEL_MAP_FILE = "pixel_map.lcft"
FUSED_FILE = "fused.lcft"
BASE_FILE = "base.lcvg"
FUSED_GRID_FILE = "fused_grid.lcvg"
PROPAGATED_FILE = "propagated.lcvg"
PRED_FILE = "pred.lcpl"


def write_pixel_map(path, pm: PointPixelMap) -> None:
    rows = np.column_stack([pm.point_index, pm.camera_index, pm.pixels, pm.depth]) if len(pm) else np.zeros((0, 5))
    write_tensor(path, rows)


def read_pixel_map(path) -> PointPixelMap:
    rows = read_tensor(path)
    if rows.ndim != 2 or rows.shape[1] != 5:
        raise FormatError(f"{path}: pixel map must be n x 5, got {rows.shape}")
    return PointPixelMap(rows[:, 0].astype(np.int64), rows[:, 1].astype(np.int64), rows[:, 2:4].copy(), rows[:, 4].copy())


def write_fused(path, fused: FusedRows) -> None:
    write_tensor(path, np.column_stack([fused.point_index, fused.features]))


def read_fused(path) -> FusedRows:
    rows = read_tensor(path)
    if rows.ndim != 2 or rows.shape[1] < 2:
        raise FormatError(f"{path}: fused rows must be n x (1 + C), got {rows.shape}")
    return FusedRows(rows[:, 0].astype(np.int64), rows[:, 1:].copy())


def dump_result(result: PipelineResult, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_pixel_map(d / PIXEL_MAP_FILE, result.pixel_map)
    write_fused(d / FUSED_FILE, result.fused)
    write_voxels(d / BASE_FILE, result.base)
    write_voxels(d / FUSED_GRID_FILE, result.fused_grid)
    write_voxels(d / PROPAGATED_FILE, result.propagated)
    write_labels(d / PRED_FILE, result.labeling)


# -- frame directories ------------------------------------------------------

BEV_FILES = ("bev_heatmap", "bev_offsets", "bev_semantic", "bev_fog")


def _spec_dict(spec: CylinderGridSpec) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(spec).items()}


def save_frame(frame: SyntheticFrame, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"grid": _spec_dict(frame.spec), "classes": json.loads(frame.classes.to_json())["classes"]}
    (d / "scene.json").write_text(json.dumps(meta, indent=1))
    lidar = frame.lidar
    write_points(d / "points.lcpk", lidar.positions, lidar.features)
    write_calibration(d / "calib.json", frame.rig, lidar.capture_time, lidar.world_to_ego)
    poses = {lidar.capture_time: lidar.pose_to_first}
    for cam, pose in zip(frame.rig, frame.poses_t2_to_first):
        if cam.capture_time in poses and poses[cam.capture_time] != pose:
            raise ConfigurationError(f"two different poses share timestamp {cam.capture_time}")
        poses[cam.capture_time] = pose
    write_poses(d / "poses.json", poses)
    for k, fm in enumerate(frame.feature_maps):
        write_tensor(d / f"image_{k}.lcft", fm.data)
    write_tensor(d / "classifier.lcft", frame.classifier.theta)
    if frame.bev is not None:
        b = frame.bev
        for name, arr in zip(BEV_FILES, (b.heatmap, b.offsets, b.semantic, b.fog)):
            write_tensor(d / f"{name}.lcft", arr)
    if frame.labels is not None:
        write_labels(d / "gt.lcpl", frame.labels)
    return d


def load_frame(directory) -> SyntheticFrame:
    d = Path(directory)
    try:
        meta = json.loads((d / "scene.json").read_text())
        spec = CylinderGridSpec(**meta["grid"])
        classes = ClassTable.from_json(json.dumps({"classes": meta["classes"]}))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{d / 'scene.json'}: {exc}") from exc
    positions, features = read_points(d / "points.lcpk")
    rig, t1, world_to_ego = read_calibration(d / "calib.json")
    poses = read_poses(d / "poses.json")
    lidar = LidarFrame(positions, features, t1, pose_at(poses, t1), world_to_ego)
    fmaps = [FeatureMap(read_tensor(d / f"image_{k}.lcft"), k) for k in range(len(rig))]
    bev = None
    if all((d / f"{n}.lcft").exists() for n in BEV_FILES):
        heat, off, sem, fog = (read_tensor(d / f"{n}.lcft") for n in BEV_FILES)
        bev = BevMaps(heat, off, sem, fog)
    labels = read_labels(d / "gt.lcpl") if (d / "gt.lcpl").exists() else None
    return SyntheticFrame(
        lidar=lidar,
        rig=rig,
        poses_t2_to_first=[pose_at(poses, cam.capture_time) for cam in rig],
        feature_maps=fmaps,
        classifier=PixelClassifier(read_tensor(d / "classifier.lcft")),
        spec=spec,
        classes=classes,
        labels=labels,
        bev=bev,
    )


def load_grids(directory):
    d = Path(directory)
    return read_voxels(d / BASE_FILE), read_voxels(d / FUSED_GRID_FILE)
