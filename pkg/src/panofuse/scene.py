"""Synthetic scenes with exact ground truth.

Scenes are built in voxel space so every ground-truth quantity is exact:
each occupied voxel holds points of a single class and instance, every
instance owns a private set of BEV columns, and instance centres are at
least three cells apart (so a 5x5 NMS window never sees two of them).

Random numbers come from numpy's ``PCG64`` bit generator seeded with
``SceneConfig.seed``; the sequence of draws is fixed by the order of the
code below, so a seed reproduces a scene bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationError
from .formats import f32
from .geometry import (
    CameraModel,
    LidarFrame,
    PointPixelMap,
    Transform4,
    look_at_camera,
    project_to_image,
)
from .metrics import ClassInfo, ClassTable
from .postproc import BevMaps, PanopticLabeling
from .semantic import FeatureMap, PixelClassifier
from .voxel import PRESETS, CylinderGridSpec, from_polar, resolve_grid, voxel_indices

DEFAULT_CLASSES = ClassTable(
    {
        0: ClassInfo("noise", False, ignore=True),
        1: ClassInfo("car", True),
        2: ClassInfo("pedestrian", True),
        3: ClassInfo("bicycle", True),
        4: ClassInfo("truck", True),
        5: ClassInfo("driveable_surface", False),
        6: ClassInfo("vegetation", False),
        7: ClassInfo("manmade", False),
    }
)

# length along the radius, width along the arc, height (meters)
THING_SIZES = {1: (4.0, 2.0, 1.5), 2: (0.8, 0.8, 1.8), 3: (1.8, 0.8, 1.2), 4: (7.0, 2.6, 3.0)}
STUFF_SIZES = {6: (3.0, 3.0, 3.0), 7: (8.0, 8.0, 5.0)}
GROUND_Z = -1.8
HEATMAP_SIGMA = 1.0
HEATMAP_RADIUS = 4
CENTER_SEPARATION = 3


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    n_objects: int = 5
    n_stuff_regions: int = 4
    thing_classes: tuple = (1, 2, 3, 4)
    n_cameras: int = 6
    grid: str = "nuscenes-100m"
    custom_grid: CylinderGridSpec | None = None
    position_jitter: float = 0.0
    feature_noise: float = 0.05
    # pose of ego at the last camera's capture time, in the ego frame at LiDAR time
    ego_motion: Transform4 = field(default_factory=lambda: Transform4.from_yaw(0.03, (0.6, 0.05, 0.0)))
    camera_gap: float = 0.05
    image_size: tuple = (160, 96)
    focal: float = 80.0
    object_fill: float = 0.7
    stuff_fill: float = 0.25
    max_retries: int = 200

    def __post_init__(self):
        if min(self.n_objects, self.n_stuff_regions, self.n_cameras) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def spec(self) -> CylinderGridSpec:
        if self.grid == "custom":
            if self.custom_grid is None:
                raise ValueError("grid 'custom' needs custom_grid")
            return self.custom_grid
        return resolve_grid(self.grid)


@dataclass
class SyntheticFrame:
    lidar: LidarFrame
    rig: list[CameraModel]
    poses_t2_to_first: list[Transform4]
    feature_maps: list[FeatureMap]
    classifier: PixelClassifier
    spec: CylinderGridSpec
    classes: ClassTable
    labels: PanopticLabeling | None = None
    bev: BevMaps | None = None
    world_to_ego_t2: list[Transform4] | None = None
    centers: list | None = None

    @property
    def thing_classes(self) -> list[int]:
        return self.classes.things


def planar_fraction(motion: Transform4, frac: float) -> Transform4:
    """Scale a planar motion (yaw + translation) by ``frac``."""
    yaw = np.arctan2(motion.m[1, 0], motion.m[0, 0])
    return Transform4.from_yaw(frac * yaw, frac * motion.translation_vector)


def _sizes_in_cells(size, r, spec: CylinderGridSpec):
    dr, dt, dz = spec.cell_size
    length, width, height = size
    return (
        max(1, int(np.ceil(length / dr))),
        max(1, int(np.ceil(width / (max(r, dr) * dt)))),
        max(1, int(np.ceil(height / dz))),
    )


def _ground_iz(spec: CylinderGridSpec) -> int:
    z0, z1 = spec.z_range
    iz = int(np.floor((GROUND_Z - z0) / (z1 - z0) * spec.z_bins))
    return int(np.clip(iz, 0, max(spec.z_bins - 2, 0)))


class _Placer:
    """Tracks BEV footprints of non-ground boxes."""

    def __init__(self, spec: CylinderGridSpec):
        self.spec = spec
        self.taken = np.zeros(spec.shape[:2], dtype=bool)

    def fits(self, ir, ia, nr, na) -> bool:
        s = self.spec
        if ir < 0 or ia < 0 or ir + nr > s.radial_bins or ia + na > s.angular_bins:
            return False
        lo_r, hi_r = max(ir - 1, 0), min(ir + nr + 1, s.radial_bins)
        lo_a, hi_a = max(ia - 1, 0), min(ia + na + 1, s.angular_bins)
        return not self.taken[lo_r:hi_r, lo_a:hi_a].any()

    def take(self, ir, ia, nr, na):
        self.taken[ir : ir + nr, ia : ia + na] = True


def _box_voxels(ir, ia, iz, nr, na, nz) -> np.ndarray:
    g = np.mgrid[ir : ir + nr, ia : ia + na, iz : iz + nz].reshape(3, -1).T
    return g.astype(np.int64)


def _sample_in_voxels(rng, voxels: np.ndarray, spec: CylinderGridSpec, jitter: float) -> np.ndarray:
    """One point per voxel, kept in the inner 80% of the cell in every axis."""
    frac = rng.uniform(0.1, 0.9, size=voxels.shape)
    if jitter > 0:
        frac = np.clip(frac + rng.normal(0.0, jitter, size=voxels.shape) / np.array(spec.cell_size), 0.1, 0.9)
    dr, dt, dz = spec.cell_size
    polar = np.stack(
        [
            spec.radial_range[0] + (voxels[:, 0] + frac[:, 0]) * dr,
            (voxels[:, 1] + frac[:, 1]) * dt,
            spec.z_range[0] + (voxels[:, 2] + frac[:, 2]) * dz,
        ],
        axis=1,
    )
    return from_polar(polar)


def _place_objects(rng, cfg: SceneConfig, spec: CylinderGridSpec, placer: _Placer, ground: int):
    """Place thing boxes and pick their occupied voxels.

    The centre separation is checked on the rounded mean BEV cell of the
    occupied voxels, which is exactly the centre the ground truth will use.
    """
    r0, r1 = spec.radial_range
    r_lo, r_hi = max(r0 + 1.0, 0.08 * r1), 0.45 * r1
    dr, dt, _ = spec.cell_size
    objects = []
    for _ in range(cfg.n_objects):
        cls = int(rng.choice(cfg.thing_classes))
        for _attempt in range(cfg.max_retries):
            r = rng.uniform(r_lo, r_hi)
            theta = rng.uniform(0.0, 2 * np.pi)
            nr, na, nz = _sizes_in_cells(THING_SIZES[cls], r, spec)
            nz = min(nz, spec.z_bins - ground - 1)
            ir = int((r - r0) // dr)
            ia = int(theta // dt)
            if nz < 1 or not placer.fits(ir, ia, nr, na):
                continue
            box = _box_voxels(ir, ia, ground + 1, nr, na, nz)
            keep = rng.uniform(size=len(box)) < cfg.object_fill
            if not keep.any():
                keep[len(box) // 2] = True
            box = box[keep]
            center = np.floor(box[:, :2].mean(axis=0) + 0.5).astype(np.int64)
            if any(np.abs(center - o["center"]).max() < CENTER_SEPARATION for o in objects):
                continue
            placer.take(ir, ia, nr, na)
            objects.append({"cls": cls, "voxels": box, "center": center})
            break
        else:
            raise GenerationError(f"could not place object {len(objects) + 1} after {cfg.max_retries} tries")
    # number instances in centre-cell order, the order post-processing reports them in
    return sorted(objects, key=lambda o: tuple(o["center"].tolist()))


def _place_stuff(rng, cfg: SceneConfig, spec: CylinderGridSpec, placer: _Placer, ground: int):
    r0, r1 = spec.radial_range
    dr, dt, _ = spec.cell_size
    regions = []
    for i in range(cfg.n_stuff_regions):
        if i == 0 or rng.uniform() < 0.25:
            # ground sector, may run under anything
            ir = int(rng.integers(0, max(1, spec.radial_bins // 8)))
            nr = max(1, int(rng.integers(spec.radial_bins // 8, spec.radial_bins // 3 + 2)))
            nr = min(nr, spec.radial_bins - ir)
            ia = int(rng.integers(0, spec.angular_bins))
            na = max(1, min(int(rng.integers(spec.angular_bins // 12, spec.angular_bins // 4 + 2)), spec.angular_bins - ia))
            regions.append({"cls": 5, "box": (ir, ia, ground, nr, na, 1)})
            continue
        cls = 6 if rng.uniform() < 0.5 else 7
        for _attempt in range(cfg.max_retries):
            r = rng.uniform(max(r0 + 1.0, 0.1 * r1), 0.7 * r1)
            theta = rng.uniform(0.0, 2 * np.pi)
            nr, na, nz = _sizes_in_cells(STUFF_SIZES[cls], r, spec)
            nz = min(nz, spec.z_bins - ground - 1)
            ir = int((r - r0) // dr)
            ia = int(theta // dt)
            if nz >= 1 and placer.fits(ir, ia, nr, na):
                placer.take(ir, ia, nr, na)
                regions.append({"cls": cls, "box": (ir, ia, ground + 1, nr, na, nz)})
                break
        else:
            raise GenerationError(f"could not place stuff region {i} after {cfg.max_retries} tries")
    return regions


def _render_feature_map(rng, cfg: SceneConfig, cam: CameraModel, points_t2, semantic, n_channels):
    """Class one-hot painted around each projected point (nearest point wins)."""
    w, h = cam.width, cam.height
    data = np.zeros((n_channels, h, w))
    data[0] = 0.5
    proj = project_to_image(points_t2, cam)
    if len(proj.point_index):
        cu = np.floor(proj.pixels[:, 0] + 0.5).astype(np.int64)
        cv = np.floor(proj.pixels[:, 1] + 0.5).astype(np.int64)
        du, dv = np.meshgrid(np.arange(-1, 2), np.arange(-1, 2))
        u = (cu[:, None] + du.reshape(-1)).reshape(-1)
        v = (cv[:, None] + dv.reshape(-1)).reshape(-1)
        depth = np.repeat(proj.depth, du.size)
        cls = np.repeat(semantic[proj.point_index], du.size)
        ok = (u >= 0) & (u < w) & (v >= 0) & (v < h)
        u, v, depth, cls = u[ok], v[ok], depth[ok], cls[ok]
        lin = v * w + u
        order = np.lexsort((depth, lin))
        lin, cls = lin[order], cls[order]
        first = np.r_[True, lin[1:] != lin[:-1]]
        lin, cls = lin[first], cls[first]
        flat = data.reshape(n_channels, -1)
        flat[:, lin] = 0.0
        flat[cls, lin] = 1.0
    data += cfg.feature_noise * rng.standard_normal(data.shape)
    return data


def ground_truth_bev(spec: CylinderGridSpec, voxels: np.ndarray, labels: PanopticLabeling, classes: ClassTable):
    """BEV targets consistent with a labeling; returns (BevMaps, centres).

    Centres are the rounded mean BEV cell of each instance's points, offsets
    point from each instance column to its centre, and FOG equals the thing
    mask.
    """
    nr, na, nz = spec.shape
    semantic = np.zeros((nr, na, nz), dtype=np.int32)
    fog = np.zeros((nr, na, nz), dtype=np.float32)
    heat = np.zeros((nr, na))
    offsets = np.zeros((nr, na, 2))
    valid = (voxels >= 0).all(axis=1)
    v = voxels[valid]
    sem = labels.semantic[valid]
    inst = labels.instance[valid]
    semantic[v[:, 0], v[:, 1], v[:, 2]] = sem
    fog[v[:, 0], v[:, 1], v[:, 2]] = np.isin(sem, classes.things).astype(np.float32)
    centers = []
    for i in range(1, labels.n_instances + 1):
        members = v[inst == i]
        if len(members) == 0:
            continue
        c = np.floor(members[:, :2].mean(axis=0) + 0.5).astype(np.int64)
        centers.append((int(c[0]), int(c[1])))
        lo = np.maximum(c - HEATMAP_RADIUS, 0)
        hi = np.minimum(c + HEATMAP_RADIUS + 1, (nr, na))
        hh, ww = np.mgrid[lo[0] : hi[0], lo[1] : hi[1]]
        g = np.exp(-((hh - c[0]) ** 2 + (ww - c[1]) ** 2) / (2 * HEATMAP_SIGMA**2))
        heat[lo[0] : hi[0], lo[1] : hi[1]] = np.maximum(heat[lo[0] : hi[0], lo[1] : hi[1]], g)
        cols = np.unique(members[:, :2], axis=0)
        offsets[cols[:, 0], cols[:, 1]] = c - cols
    return BevMaps(f32(heat), offsets, semantic, fog), centers


def generate_scene(cfg: SceneConfig) -> SyntheticFrame:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    spec = cfg.spec
    classes = DEFAULT_CLASSES
    n_ch = max(classes) + 1
    ground = _ground_iz(spec)
    placer = _Placer(spec)
    objects = _place_objects(rng, cfg, spec, placer, ground)
    regions = _place_stuff(rng, cfg, spec, placer, ground)

    vox, sem, inst = [], [], []
    owner: dict[int, tuple[int, int]] = {}
    for k, obj in enumerate(objects, start=1):
        box = obj["voxels"]
        vox.append(box)
        sem.append(np.full(len(box), obj["cls"]))
        inst.append(np.full(len(box), k))
        for lin in spec.linear(box).tolist():
            owner[lin] = (obj["cls"], k)
    for reg in regions:
        box = _box_voxels(*reg["box"])
        box = box[rng.uniform(size=len(box)) < cfg.stuff_fill]
        lin = spec.linear(box)
        free = np.array([owner.get(int(x), (reg["cls"], 0)) == (reg["cls"], 0) for x in lin], dtype=bool)
        box = box[free] if len(box) else box
        for x in spec.linear(box).tolist():
            owner[x] = (reg["cls"], 0)
        vox.append(box)
        sem.append(np.full(len(box), reg["cls"]))
        inst.append(np.zeros(len(box), dtype=np.int64))
    voxels = np.concatenate(vox).reshape(-1, 3) if vox else np.zeros((0, 3), np.int64)
    semantic = np.concatenate(sem).astype(np.int64) if sem else np.zeros(0, np.int64)
    instance = np.concatenate(inst).astype(np.int64) if inst else np.zeros(0, np.int64)
    ego_pts = _sample_in_voxels(rng, voxels, spec, cfg.position_jitter)

    # poses: ego@t0 -> world is G0, ego@t1 -> ego@t0 is A
    g0 = Transform4.from_yaw(rng.uniform(-np.pi, np.pi), (rng.uniform(-50, 50), rng.uniform(-50, 50), 0.0))
    a = Transform4.from_yaw(rng.uniform(-0.5, 0.5), (rng.uniform(-20, 20), rng.uniform(-20, 20), 0.0))
    w_t1 = g0 @ a
    world_pts = f32(w_t1.apply(ego_pts))
    t1 = round(float(rng.uniform(0.1, 10.0)), 3)
    lidar_feat = 0.5 * np.eye(n_ch)[semantic] + cfg.feature_noise * rng.standard_normal((len(semantic), n_ch))
    lidar = LidarFrame(world_pts, f32(lidar_feat), t1, a, w_t1.inverse())

    rig, poses, w2e_t2, fmaps = [], [], [], []
    width, height = cfg.image_size
    for k in range(cfg.n_cameras):
        frac = (k + 1) / cfg.n_cameras
        t2 = round(t1 + frac * cfg.camera_gap, 6)
        motion = planar_fraction(cfg.ego_motion, frac)
        cam = look_at_camera(2 * np.pi * k / cfg.n_cameras, width, height, cfg.focal, (0.0, 0.0, 0.0), t2)
        truth = (w_t1 @ motion).inverse()
        rig.append(cam)
        poses.append(a @ motion)
        w2e_t2.append(truth)
        data = _render_feature_map(rng, cfg, cam, truth.apply(world_pts), semantic, n_ch)
        fmaps.append(FeatureMap(f32(data), k))

    labels = PanopticLabeling(semantic, instance)
    idx, _ = voxel_indices(lidar.ego_positions(), spec)
    bev, centers = ground_truth_bev(spec, idx, labels, classes)
    return SyntheticFrame(
        lidar=lidar,
        rig=rig,
        poses_t2_to_first=poses,
        feature_maps=fmaps,
        classifier=PixelClassifier(np.eye(n_ch)),
        spec=spec,
        classes=classes,
        labels=labels,
        bev=bev,
        world_to_ego_t2=w2e_t2,
        centers=centers,
    )


def true_pixel_map(frame: SyntheticFrame) -> PointPixelMap:
    """Correspondences from the exact ego pose at each camera's capture time."""
    pidx, cidx, pix, dep = [], [], [], []
    for k, (cam, w2e) in enumerate(zip(frame.rig, frame.world_to_ego_t2)):
        proj = project_to_image(w2e.apply(frame.lidar.positions), cam)
        pidx.append(proj.point_index)
        cidx.append(np.full(len(proj.point_index), k, dtype=np.int64))
        pix.append(proj.pixels)
        dep.append(proj.depth)
    if not pidx:
        return PointPixelMap.empty()
    return PointPixelMap(
        np.concatenate(pidx).astype(np.int64),
        np.concatenate(cidx),
        np.concatenate(pix).reshape(-1, 2),
        np.concatenate(dep),
    )


def inject_semantic_noise(bev: BevMaps, rate: float, n_classes: int, seed: int) -> BevMaps:
    """Relabel a ``rate`` fraction of occupied voxels with a different random class (never 0)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    sem = bev.semantic.copy()
    occ = np.argwhere(sem > 0)
    n = int(round(rate * len(occ)))
    pick = occ[rng.choice(len(occ), size=n, replace=False)] if n else np.zeros((0, 3), np.int64)
    old = sem[pick[:, 0], pick[:, 1], pick[:, 2]]
    shift = rng.integers(1, n_classes - 1, size=n)
    # cycle within 1..n_classes-1 so the new class always differs
    new = (old - 1 + shift) % (n_classes - 1) + 1
    sem[pick[:, 0], pick[:, 1], pick[:, 2]] = new
    return BevMaps(bev.heatmap, bev.offsets, sem, bev.fog)


__all__ = [
    "DEFAULT_CLASSES",
    "PRESETS",
    "SceneConfig",
    "SyntheticFrame",
    "generate_scene",
    "ground_truth_bev",
    "inject_semantic_noise",
    "true_pixel_map",
]
